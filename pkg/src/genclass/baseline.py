"""Softmax classifier trained on generated features.

Used to compare the integrated pair classifier against a conventional
classifier head on the same generator: only the head changes, the generator
checkpoint, seeds and test indices stay fixed.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .config import BaselineOptions
from .data import write_matrix
from .errors import ConfigError, DataError, MissingAttributeError
from .inference import report_from_predictor
from .models import Adam, glorot_uniform


def softmax(logits):
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


@dataclass
class SoftmaxClassifier:
    """Linear softmax over an explicit class list; column ``k`` scores ``classes[k]``."""

    weight: np.ndarray
    bias: np.ndarray
    classes: np.ndarray
    loss_history: list = field(default_factory=list)

    def logits(self, x):
        return np.asarray(x, dtype=self.weight.dtype) @ self.weight + self.bias

    def predict_proba(self, x):
        return softmax(self.logits(x))

    def predict(self, x):
        return self.classes[np.argmax(self.logits(x), axis=1)]

    def loss_and_grads(self, x, y_idx):
        """Mean cross-entropy and its gradients w.r.t. weight and bias."""
        p = self.predict_proba(x)
        n = x.shape[0]
        loss = float(-np.mean(np.log(np.clip(p[np.arange(n), y_idx], 1e-300, None))))
        d = p.copy()
        d[np.arange(n), y_idx] -= 1.0
        d /= n
        return loss, x.T @ d, d.sum(axis=0, keepdims=True)

    def save(self, directory):
        write_matrix(f"{directory}/softmax.weight.gcmx", self.weight)
        write_matrix(f"{directory}/softmax.bias.gcmx", self.bias)
        write_matrix(f"{directory}/softmax.classes.gcmx", self.classes.astype(np.float64).reshape(1, -1))


def generate_training_set(generator, attributes, classes, samples_per_class, rng, real=None):
    """Generated features per class, optionally stacked with real ``(features, labels)``."""
    if samples_per_class < 1:
        raise ConfigError(f"samples_per_class must be >= 1, got {samples_per_class}")
    classes = np.unique(np.asarray(classes, dtype=np.int64))
    attributes = np.asarray(attributes)
    missing = [int(c) for c in classes if c < 0 or c >= attributes.shape[0]]
    if missing:
        raise MissingAttributeError(f"no attribute row for class(es) {missing}")
    labels = np.repeat(classes, samples_per_class)
    feats = generator.sample(attributes[labels], rng)
    if real is not None:
        rx, ry = real
        feats = np.concatenate([feats, np.asarray(rx, dtype=feats.dtype)])
        labels = np.concatenate([labels, np.asarray(ry, dtype=np.int64)])
    return feats, labels


def train_softmax_on_generated(generator, attributes, classes, options=None, seed=0, real=None):
    """Fit a linear softmax on generated features (plus real seen data for GZSL) by cross-entropy."""
    options = (options or BaselineOptions()).check()
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0xBA5E]))
    x, y = generate_training_set(generator, attributes, classes, options.samples_per_class, rng, real)
    classes = np.unique(np.asarray(classes, dtype=np.int64))
    if real is not None:
        classes = np.union1d(classes, np.asarray(real[1], dtype=np.int64))
    y_idx = np.searchsorted(classes, y)
    dtype = x.dtype
    clf = SoftmaxClassifier(glorot_uniform(rng, x.shape[1], len(classes), dtype),
                            np.zeros((1, len(classes)), dtype=dtype), classes)
    params = {"w": ad.Tensor(clf.weight), "b": ad.Tensor(clf.bias)}
    if options.optimizer == "adam":
        opt = Adam(params, lr=options.lr)
    n = x.shape[0]
    for _ in range(options.epochs):
        if options.optimizer == "gd":
            loss, gw, gb = clf.loss_and_grads(x, y_idx)
            clf.weight = clf.weight - options.lr * gw
            clf.bias = clf.bias - options.lr * gb
            clf.loss_history.append(loss)
            continue
        order = rng.permutation(n)
        for start in range(0, n, options.batch_size):
            batch = order[start:start + options.batch_size]
            _, gw, gb = clf.loss_and_grads(x[batch], y_idx[batch])
            opt.step({"w": gw, "b": gb})
            clf.weight, clf.bias = params["w"].value, params["b"].value
        clf.loss_history.append(clf.loss_and_grads(x, y_idx)[0])
    clf.train_x, clf.train_y = x, y
    return clf


def evaluate_softmax(model, dataset, mode, options=None, seed=0, checkpoint="", n_g=0):
    """Train a softmax head on the generator of ``model`` and score it with the shared protocol.

    ZSL fits on unseen classes only; GZSL on generated unseen features plus
    the real seen training rows.
    """
    options = (options or BaselineOptions()).check()
    if mode == "gzsl" and dataset.test_seen_idx.size == 0:
        raise DataError("GZSL evaluation needs test_seen indices; this dataset is ZSL-only")
    if mode == "zsl":
        clf = train_softmax_on_generated(model.generator, dataset.attributes, dataset.unseen_classes,
                                         options, seed)
    else:
        real = (dataset.features[dataset.train_idx], dataset.labels[dataset.train_idx])
        clf = train_softmax_on_generated(model.generator, dataset.attributes, dataset.unseen_classes,
                                         options, seed, real=real)
    report = report_from_predictor(lambda q, _c: clf.predict(q), dataset, mode, n_g, seed, checkpoint,
                                   classifier="softmax")
    report.samples_per_class = options.samples_per_class
    return report, clf
