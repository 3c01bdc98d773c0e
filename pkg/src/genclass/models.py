"""Generator, critic and integrated pair classifier, plus Adam and checkpoint IO."""

from __future__ import annotations

import hashlib
import os
import shutil
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .data import parse_kv, read_matrix, write_matrix
from .errors import ConfigError, ContractError, DataError, DimensionError

ACTIVATIONS = {
    "leaky_relu": ad.leaky_relu,
    "relu": ad.relu,
    "sigmoid": ad.sigmoid,
    "linear": None,
}


def glorot_uniform(rng, fan_in, fan_out, dtype=np.float64):
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=(fan_in, fan_out)).astype(dtype)


class MLP:
    """Fully connected stack ``dims[0] -> ... -> dims[-1]``.

    ``activations`` has one entry per layer.  Parameters live in ``params`` as
    ``w0, b0, w1, b1, ...``; weights are ``fan_in x fan_out`` and biases
    ``1 x fan_out`` rows.
    """

    def __init__(self, dims, activations, params=None, rng=None, dtype=np.float64):
        dims = [int(d) for d in dims]
        if any(d <= 0 for d in dims):
            raise ConfigError(f"layer dims must be positive, got {dims}")
        if len(activations) != len(dims) - 1:
            raise ConfigError(f"{len(dims) - 1} layers need {len(dims) - 1} activations, got {activations}")
        for act in activations:
            if act not in ACTIVATIONS:
                raise ConfigError(f"unknown activation {act!r}")
        self.dims = dims
        self.activations = list(activations)
        if params is None:
            rng = rng if rng is not None else np.random.default_rng(0)
            params = {}
            for i, (fi, fo) in enumerate(zip(dims[:-1], dims[1:])):
                params[f"w{i}"] = glorot_uniform(rng, fi, fo, dtype)
                params[f"b{i}"] = np.zeros((1, fo), dtype=dtype)
        self.params = {k: ad.parameter(np.array(v, copy=True), name=k) for k, v in params.items()}
        self._check_params()

    def _check_params(self):
        expected = {}
        for i, (fi, fo) in enumerate(zip(self.dims[:-1], self.dims[1:])):
            expected[f"w{i}"] = (fi, fo)
            expected[f"b{i}"] = (1, fo)
        if set(expected) != set(self.params):
            raise DimensionError(f"parameter names {sorted(self.params)} != {sorted(expected)}")
        for k, shape in expected.items():
            if self.params[k].shape != shape:
                raise DimensionError(f"parameter {k}: shape {self.params[k].shape}, expected {shape}")
        if self.num_parameters() != self.expected_parameter_count(self.dims):
            raise DimensionError("parameter count does not match the layer dims")

    @staticmethod
    def expected_parameter_count(dims):
        return sum(fi * fo + fo for fi, fo in zip(dims[:-1], dims[1:]))

    def num_parameters(self):
        return sum(p.value.size for p in self.params.values())

    @property
    def in_dim(self):
        return self.dims[0]

    @property
    def out_dim(self):
        return self.dims[-1]

    @property
    def dtype(self):
        return self.params["w0"].dtype

    def parameters(self):
        return list(self.params.values())

    def state(self):
        return {k: p.value for k, p in self.params.items()}

    def forward(self, x, frozen=False):
        """Run the stack; with ``frozen`` the parameters enter as constants."""
        params = self.params
        if frozen:
            params = {k: ad.constant(p.value) for k, p in params.items()}
        h = x
        for i, act in enumerate(self.activations):
            h = ad.add(ad.matmul(h, params[f"w{i}"]), params[f"b{i}"])
            fn = ACTIVATIONS[act]
            if fn is not None:
                h = fn(h)
        return h

    __call__ = forward


def _as_tensor(x, dtype):
    if isinstance(x, ad.Tensor):
        return x
    return ad.Tensor(np.asarray(x, dtype=dtype))


def _check_rows(name, a, b):
    if a.rows != b.rows:
        raise DimensionError(f"{name}: row mismatch {a.shape} vs {b.shape}")


class Generator:
    """G(z|a): concat(noise, attributes) -> LeakyReLU -> LeakyReLU -> ReLU."""

    kind = "generator"

    def __init__(self, d_z, d_a, d_x, hidden=4096, rng=None, params=None, dtype=np.float64):
        self.d_z, self.d_a, self.d_x = d_z, d_a, d_x
        self.net = MLP([d_z + d_a, hidden, hidden, d_x], ["leaky_relu", "leaky_relu", "relu"],
                       params=params, rng=rng, dtype=dtype)

    def __call__(self, z, a, frozen=False):
        z, a = _as_tensor(z, self.net.dtype), _as_tensor(a, self.net.dtype)
        _check_rows("generator", z, a)
        return self.net(ad.concat_cols(z, a), frozen=frozen)

    def sample(self, a, rng):
        """Generate one feature row per attribute row, as a plain array."""
        a = np.asarray(a, dtype=self.net.dtype)
        z = rng.standard_normal((a.shape[0], self.d_z)).astype(self.net.dtype)
        with ad.no_grad():
            return self(z, a).value


class Critic:
    """D(x|a): concat(features, attributes) -> LeakyReLU -> LeakyReLU -> unbounded score."""

    kind = "critic"

    def __init__(self, d_x, d_a, hidden=4096, rng=None, params=None, dtype=np.float64):
        self.d_x, self.d_a = d_x, d_a
        self.net = MLP([d_x + d_a, hidden, hidden, 1], ["leaky_relu", "leaky_relu", "linear"],
                       params=params, rng=rng, dtype=dtype)

    def __call__(self, x, a, frozen=False):
        x, a = _as_tensor(x, self.net.dtype), _as_tensor(a, self.net.dtype)
        _check_rows("critic", x, a)
        return self.net(ad.concat_cols(x, a), frozen=frozen)


class PairClassifier:
    """C_I(left, right): concat of the ordered pair -> LeakyReLU -> sigmoid similarity.

    Left slot carries the real sample (training) or the prototype (testing).
    """

    kind = "classifier"

    def __init__(self, d_x, hidden=1024, rng=None, params=None, dtype=np.float64):
        self.d_x = d_x
        self.net = MLP([2 * d_x, hidden, 1], ["leaky_relu", "sigmoid"],
                       params=params, rng=rng, dtype=dtype)

    def __call__(self, left, right, frozen=False):
        left, right = _as_tensor(left, self.net.dtype), _as_tensor(right, self.net.dtype)
        _check_rows("classifier", left, right)
        if left.cols != self.d_x or right.cols != self.d_x:
            raise DimensionError(
                f"classifier expects {self.d_x}-dim features, got {left.shape} and {right.shape}")
        return self.net(ad.concat_cols(left, right), frozen=frozen)


@dataclass
class NetParams:
    """The three networks trained together."""

    generator: Generator
    critic: Critic
    classifier: PairClassifier

    @property
    def d_z(self):
        return self.generator.d_z

    @property
    def d_a(self):
        return self.generator.d_a

    @property
    def d_x(self):
        return self.generator.d_x

    def nets(self):
        return {"G": self.generator.net, "D": self.critic.net, "C": self.classifier.net}


def init_params(d_x, d_a, d_z=None, g_hidden=4096, d_hidden=4096, c_hidden=1024, seed=0,
                dtype=np.float64):
    """Glorot-uniform weights and zero biases for G, D and C_I, reproducible from ``seed``."""
    d_z = d_a if d_z is None else d_z
    for name, v in [("d_x", d_x), ("d_a", d_a), ("d_z", d_z), ("g_hidden", g_hidden),
                    ("d_hidden", d_hidden), ("c_hidden", c_hidden)]:
        if int(v) <= 0:
            raise ConfigError(f"{name} must be positive, got {v}")
    seeds = np.random.SeedSequence([seed, 0x6E7]).spawn(3)
    g = Generator(d_z, d_a, d_x, g_hidden, rng=np.random.default_rng(seeds[0]), dtype=dtype)
    d = Critic(d_x, d_a, d_hidden, rng=np.random.default_rng(seeds[1]), dtype=dtype)
    c = PairClassifier(d_x, c_hidden, rng=np.random.default_rng(seeds[2]), dtype=dtype)
    return NetParams(g, d, c)


class Adam:
    """Bias-corrected Adam over a name -> Tensor parameter dict.

    Updates replace each parameter's ``value`` array; the arrays of the
    previous step are never mutated.
    """

    def __init__(self, params, lr=1e-4, b1=0.5, b2=0.999, eps=1e-8):
        self.params = params
        self.lr, self.b1, self.b2, self.eps = lr, b1, b2, eps
        self.m = {k: np.zeros_like(p.value) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.value) for k, p in params.items()}
        self.t = 0

    def step(self, grads):
        if set(grads) != set(self.params):
            raise ContractError(f"gradient keys {sorted(grads)} != parameter keys {sorted(self.params)}")
        for k, g in grads.items():
            if g.shape != self.params[k].shape:
                raise ContractError(f"gradient for {k} has shape {g.shape}, parameter {self.params[k].shape}")
        self.t += 1
        bc1 = 1.0 - self.b1 ** self.t
        bc2 = 1.0 - self.b2 ** self.t
        for k, p in self.params.items():
            g = grads[k]
            self.m[k] = self.b1 * self.m[k] + (1.0 - self.b1) * g
            self.v[k] = self.b2 * self.v[k] + (1.0 - self.b2) * (g * g)
            m_hat = self.m[k] / bc1
            v_hat = self.v[k] / bc2
            p.value = (p.value - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)).astype(p.dtype, copy=False)


# ---------------------------------------------------------------- checkpoint

CHECKPOINT_MANIFEST = "checkpoint.txt"


def save_checkpoint(directory, model, seed, iteration, extra=None):
    """Write one GCMX file per parameter plus a text manifest, atomically.

    Everything goes to a sibling temp directory that is renamed into place.
    """
    directory = Path(directory)
    directory.parent.mkdir(parents=True, exist_ok=True)
    tmp = directory.with_name(directory.name + ".tmp")
    if tmp.exists():
        shutil.rmtree(tmp)
    tmp.mkdir()
    lines = ["format = genclass-checkpoint/1", f"seed = {seed}", f"iteration = {iteration}",
             f"precision = {'single' if model.generator.net.dtype == np.float32 else 'double'}",
             f"d_x = {model.d_x}", f"d_a = {model.d_a}", f"d_z = {model.d_z}",
             f"leaky_slope = {ad.LEAKY_SLOPE}"]
    for prefix, net in model.nets().items():
        lines.append(f"{prefix}.dims = {','.join(map(str, net.dims))}")
        lines.append(f"{prefix}.activations = {','.join(net.activations)}")
        for k, p in net.params.items():
            write_matrix(tmp / f"{prefix}.{k}.gcmx", p.value)
    for k, v in (extra or {}).items():
        lines.append(f"{k} = {v}")
    (tmp / CHECKPOINT_MANIFEST).write_text("\n".join(lines) + "\n", encoding="utf-8")
    if directory.exists():
        shutil.rmtree(directory)
    os.replace(tmp, directory)
    return checkpoint_fingerprint(directory)


def checkpoint_fingerprint(directory):
    """SHA-256 over the parameter files (the manifest is excluded)."""
    directory = Path(directory)
    h = hashlib.sha256()
    for path in sorted(directory.glob("*.gcmx")):
        h.update(path.name.encode())
        h.update(path.read_bytes())
    return h.hexdigest()


def load_checkpoint(directory):
    directory = Path(directory)
    manifest = directory / CHECKPOINT_MANIFEST
    if not manifest.is_file():
        raise DataError(f"checkpoint manifest not found: {manifest}")
    kv = parse_kv(manifest.read_text(encoding="utf-8"), str(manifest))
    built = {}
    for prefix in ("G", "D", "C"):
        try:
            dims = [int(x) for x in kv[f"{prefix}.dims"].split(",")]
        except KeyError:
            raise DataError(f"{manifest}: missing {prefix}.dims") from None
        params = {}
        for i in range(len(dims) - 1):
            for k in (f"w{i}", f"b{i}"):
                params[k] = read_matrix(directory / f"{prefix}.{k}.gcmx")
        built[prefix] = (dims, params)
    d_x, d_a, d_z = int(kv["d_x"]), int(kv["d_a"]), int(kv["d_z"])
    g_dims, g_params = built["G"]
    d_dims, d_params = built["D"]
    c_dims, c_params = built["C"]
    dtype = g_params["w0"].dtype
    model = NetParams(
        Generator(d_z, d_a, d_x, g_dims[1], params=g_params, dtype=dtype),
        Critic(d_x, d_a, d_dims[1], params=d_params, dtype=dtype),
        PairClassifier(d_x, c_dims[1], params=c_params, dtype=dtype),
    )
    return model, kv
