"""Balanced similar/dissimilar pair construction for the integrated classifier.

Each builder emits ``2B`` pairs: ``B`` similar ones followed by ``B``
dissimilar ones.  Row gathers go through :func:`autodiff.take_rows`, so when
the inputs are live generator outputs the gradient flows back to them.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .errors import DimensionError, PairingError

SEEN = "seen"
UNSEEN = "unseen"


def indicator(y_i, y_j):
    return 1 if y_i == y_j else 0


@dataclass
class PairBatch:
    """Ordered pairs with binary same-class targets.

    ``left_idx``/``right_idx`` index the sample pool the pairs were drawn
    from.  For seen batches that is the real rows (left) and the fake rows
    (right).  For unseen batches both sides index one pool where rows
    ``0..B-1`` are first draws and ``B..2B-1`` second draws.
    """

    left: ad.Tensor
    right: ad.Tensor
    target: np.ndarray
    origin: str
    left_idx: np.ndarray
    right_idx: np.ndarray
    left_labels: np.ndarray
    right_labels: np.ndarray

    def __len__(self):
        return len(self.target)


def dissimilar_partners(labels, rng):
    """For each row pick a uniformly random row with a different label."""
    labels = np.asarray(labels)
    if len(np.unique(labels)) < 2:
        raise PairingError(
            f"batch has a single class ({labels[0] if len(labels) else None}); "
            "dissimilar pairs are impossible, resample the batch")
    other = labels[:, None] != labels[None, :]
    # r-th different-label row for each i, r uniform over that row's candidates
    r = rng.integers(0, other.sum(axis=1))
    return np.argmax(np.cumsum(other, axis=1) > r[:, None], axis=1)


def _tensor(x):
    return x if isinstance(x, ad.Tensor) else ad.Tensor(x)


def build_seen_pairs(reals, real_labels, fakes, fake_labels, rng):
    """Pairs (real x_i, fake x~_j): j = i for similar, a different-label j for dissimilar.

    ``fakes[i]`` must have been generated from the attribute of ``real_labels[i]``.
    """
    reals, fakes = _tensor(reals), _tensor(fakes)
    real_labels = np.asarray(real_labels)
    fake_labels = np.asarray(fake_labels)
    if reals.rows != fakes.rows or len(real_labels) != reals.rows or len(fake_labels) != fakes.rows:
        raise DimensionError(
            f"seen pairs need aligned rows: reals {reals.shape}, fakes {fakes.shape}, "
            f"labels {len(real_labels)}/{len(fake_labels)}")
    if not np.array_equal(real_labels, fake_labels):
        raise DimensionError("fake labels must align index-wise with real labels")
    b = reals.rows
    partners = dissimilar_partners(real_labels, rng)
    left_idx = np.concatenate([np.arange(b), np.arange(b)])
    right_idx = np.concatenate([np.arange(b), partners])
    target = np.concatenate([np.ones(b), np.zeros(b)])
    return PairBatch(ad.take_rows(reals, left_idx), ad.take_rows(fakes, right_idx), target, SEEN,
                     left_idx, right_idx, real_labels[left_idx], fake_labels[right_idx])


def build_unseen_pairs(first, second, labels, rng, unseen_classes=None):
    """Fake-fake pairs from two independent generator draws per unseen attribute row.

    Similar pairs are (first_i, second_i): same attribute, different noise,
    never a sample with itself.  Dissimilar pairs are (first_i, second_j)
    with a different label.
    """
    first, second = _tensor(first), _tensor(second)
    labels = np.asarray(labels)
    if first.shape != second.shape or len(labels) != first.rows:
        raise DimensionError(
            f"unseen pairs need two equally shaped draws and one label per row: "
            f"{first.shape}, {second.shape}, {len(labels)} labels")
    if unseen_classes is not None:
        stray = sorted(set(labels.tolist()) - set(np.asarray(unseen_classes).tolist()))
        if stray:
            raise PairingError(f"labels {stray} are not unseen classes")
    b = first.rows
    partners = dissimilar_partners(labels, rng)
    left = np.concatenate([np.arange(b), np.arange(b)])
    right = np.concatenate([np.arange(b), partners])
    target = np.concatenate([np.ones(b), np.zeros(b)])
    return PairBatch(ad.take_rows(first, left), ad.take_rows(second, right), target, UNSEEN,
                     left, right + b, labels[left], labels[right])
