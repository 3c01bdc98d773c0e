import numpy as np

from genclass import autodiff as ad


def central_diff(fn, arrays, step=1e-6):
    """Central finite differences of scalar ``fn()`` w.r.t. each array, perturbed in place."""
    grads = []
    for arr in arrays:
        g = np.zeros_like(arr)
        it = np.nditer(arr, flags=["multi_index"])
        for _ in it:
            i = it.multi_index
            orig = arr[i]
            arr[i] = orig + step
            up = fn()
            arr[i] = orig - step
            down = fn()
            arr[i] = orig
            g[i] = (up - down) / (2 * step)
        grads.append(g)
    return grads


def max_rel_err(analytic, numeric, floor=1e-12):
    """Worst per-array relative error ||a - n|| / max(||a||, ||n||)."""
    worst = 0.0
    for a, n in zip(analytic, numeric):
        denom = max(np.linalg.norm(a), np.linalg.norm(n), floor)
        worst = max(worst, float(np.linalg.norm(a - n) / denom))
    return worst


def param_arrays(net):
    return [p.value for p in net.params.values()]


def scalar(t):
    return t.item() if isinstance(t, ad.Tensor) else float(t)
