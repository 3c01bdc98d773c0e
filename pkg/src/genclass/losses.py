"""Loss terms of the joint generator / critic / pair-classifier objective.

Critics are any callable ``critic(x, a) -> B x 1`` tensor, so tests can plug
in hand-built linear or quadratic critics.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .errors import ConfigError, ContractError, DimensionError

LOG_COLUMNS = ("iteration", "wgan", "gp", "l_s", "l_u", "l_ci", "generator_objective")


@dataclass
class LossBreakdown:
    wgan: float = 0.0
    gp: float = 0.0
    l_s: float = 0.0
    l_u: float = 0.0
    l_ci: float = 0.0
    generator_objective: float = 0.0
    lam: float = 10.0
    gamma: float = 0.1

    def values(self):
        return (self.wgan, self.gp, self.l_s, self.l_u, self.l_ci, self.generator_objective)

    def is_finite(self):
        return all(np.isfinite(v) for v in self.values())

    def log_line(self, iteration):
        return "\t".join([str(iteration)] + [repr(float(v)) for v in self.values()])


def _rows_match(*tensors):
    rows = {t.rows for t in tensors}
    if len(rows) != 1:
        raise DimensionError(f"row mismatch among {[t.shape for t in tensors]}")


def gradient_penalty(critic, reals, fakes, attrs, rng=None, alpha=None):
    """Mean over rows of (||dD(x^|a)/dx^|| - 1)^2 at x^ = alpha*x + (1-alpha)*x~.

    One ``alpha ~ U(0, 1)`` per row unless ``alpha`` is given.  Only the
    feature interpolate is differentiated; attributes are held fixed.  The
    result stays differentiable w.r.t. the critic's parameters.
    """
    reals, fakes, attrs = (t if isinstance(t, ad.Tensor) else ad.Tensor(t) for t in (reals, fakes, attrs))
    _rows_match(reals, fakes, attrs)
    if reals.shape != fakes.shape:
        raise DimensionError(f"reals {reals.shape} and fakes {fakes.shape} differ")
    b = reals.rows
    if alpha is None:
        alpha = rng.uniform(0.0, 1.0, size=(b, 1))
    alpha = np.asarray(alpha, dtype=reals.dtype).reshape(b, 1)
    mix = alpha * reals.value + (1.0 - alpha) * fakes.value
    x_hat = ad.parameter(mix, name="x_hat")
    grad_x = ad.grad_wrt_input(critic(x_hat, attrs), x_hat)
    return ad.mean(ad.square(ad.shift(ad.row_norm(grad_x), -1.0)))


def wgan_critic_loss(critic, reals, fakes, attrs, lam=10.0, rng=None, alpha=None):
    """Critic minimization objective mean[D(x~|a) - D(x|a)] + lam * GP.

    Returns ``(loss, wasserstein_term, gp)``; ``fakes`` should be constants.
    """
    if lam < 0:
        raise ConfigError(f"penalty coefficient must be >= 0, got {lam}")
    reals, fakes, attrs = (t if isinstance(t, ad.Tensor) else ad.Tensor(t) for t in (reals, fakes, attrs))
    _rows_match(reals, fakes, attrs)
    w = ad.mean(ad.sub(critic(fakes, attrs), critic(reals, attrs)))
    gp = gradient_penalty(critic, reals, fakes, attrs, rng=rng, alpha=alpha)
    return ad.add(w, ad.scale(gp, lam)), w, gp


def pair_mse(classifier, pairs):
    """Mean of (C_I(left, right) - target)^2 over a :class:`PairBatch`."""
    if len(pairs) == 0:
        raise ContractError("pair_mse needs a non-empty pair batch")
    scores = classifier(pairs.left, pairs.right)
    target = ad.Tensor(np.asarray(pairs.target, dtype=scores.dtype).reshape(-1, 1))
    return ad.mean(ad.sq_diff(scores, target))


def check_gamma(gamma):
    if not 0.0 <= gamma <= 1.0:
        raise ConfigError(f"gamma must lie in [0, 1], got {gamma}")


def combined_ci_loss(l_s, l_u, gamma):
    check_gamma(gamma)
    if gamma == 0.0 or l_u is None:
        return l_s
    return ad.add(l_s, ad.scale(l_u, gamma))


def generator_objective(critic, fakes, attrs, l_ci, frozen_critic=True):
    """l_ci - mean[D(x~|a)], minimized over the generator.

    ``fakes`` must be live generator output; constant fakes leave the
    generator without a gradient path and are rejected.
    """
    if not isinstance(fakes, ad.Tensor) or not fakes.requires_grad:
        raise ContractError("generator objective needs live (differentiable) generated features")
    if frozen_critic and hasattr(critic, "net"):
        score = critic(fakes, attrs, frozen=True)
    else:
        score = critic(fakes, attrs)
    return ad.sub(l_ci, ad.mean(score))
