"""Prototype-based classification and ZSL / GZSL metrics.

Each test class is represented by the mean of ``n_g`` generated features.
A query is scored against every prototype with the pair classifier and
assigned the best-scoring class; ties go to the smallest class id.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .errors import ContractError, DataError, IncompatibleCheckpointError, MissingAttributeError

_SCORE_CHUNK = 1 << 15


@dataclass
class PrototypeSet:
    classes: np.ndarray
    means: np.ndarray
    n_g: int
    fingerprint: str = ""

    def __len__(self):
        return len(self.classes)


def compute_prototypes(generator, attributes, classes, n_g, rng, fingerprint="", return_samples=False):
    """Mean of ``n_g`` generator outputs (fresh noise each) per class, classes sorted ascending."""
    if n_g < 1:
        raise ContractError(f"n_g must be >= 1, got {n_g}")
    classes = np.unique(np.asarray(classes, dtype=np.int64))
    attributes = np.asarray(attributes)
    missing = [int(c) for c in classes if c < 0 or c >= attributes.shape[0]]
    if missing:
        raise MissingAttributeError(f"no attribute row for class(es) {missing}")
    dtype = generator.net.dtype
    a = np.repeat(attributes[classes].astype(dtype), n_g, axis=0)
    z = rng.standard_normal((a.shape[0], generator.d_z)).astype(dtype, copy=False)
    with ad.no_grad():
        samples = generator(z, a).value.reshape(len(classes), n_g, -1)
    protos = PrototypeSet(classes, samples.mean(axis=1), n_g, fingerprint)
    return (protos, samples) if return_samples else protos


def similarity_scores(classifier, prototypes, queries):
    """``Q x |C|`` matrix of C_I(prototype, query)."""
    queries = np.asarray(queries, dtype=classifier.net.dtype)
    if queries.ndim == 1:
        queries = queries.reshape(1, -1)
    means = prototypes.means.astype(classifier.net.dtype, copy=False)
    n_cls = len(prototypes)
    per_chunk = max(1, _SCORE_CHUNK // n_cls)
    out = np.empty((queries.shape[0], n_cls), dtype=classifier.net.dtype)
    with ad.no_grad():
        for start in range(0, queries.shape[0], per_chunk):
            q = queries[start:start + per_chunk]
            left = np.tile(means, (q.shape[0], 1))
            right = np.repeat(q, n_cls, axis=0)
            out[start:start + q.shape[0]] = classifier(left, right).value.reshape(q.shape[0], n_cls)
    return out


def classify(classifier, prototypes, queries):
    """Predicted class id per query row (argmax similarity, ties to the smallest id)."""
    if len(prototypes) == 0:
        raise ContractError("classify needs at least one prototype")
    scores = similarity_scores(classifier, prototypes, queries)
    # prototypes.classes is sorted, so argmax's first-hit rule picks the smallest id
    return prototypes.classes[np.argmax(scores, axis=1)]


def per_class_top1(predictions, labels, classes):
    """Per-class accuracy table and its mean over classes with at least one sample.

    Returns ``(table, mean)`` where ``table`` maps class id to
    ``(count, accuracy)``; accuracy is ``None`` for classes without samples.
    """
    predictions = np.asarray(predictions)
    labels = np.asarray(labels)
    if predictions.shape != labels.shape:
        raise ContractError(f"predictions {predictions.shape} and labels {labels.shape} differ")
    classes = [int(c) for c in classes]
    stray = set(labels.tolist()) - set(classes)
    if stray:
        raise ContractError(f"labels {sorted(stray)} are outside the class set")
    table = {}
    accs = []
    for c in classes:
        mask = labels == c
        count = int(mask.sum())
        if count == 0:
            table[c] = (0, None)
            continue
        acc = float((predictions[mask] == c).mean())
        table[c] = (count, acc)
        accs.append(acc)
    return table, (float(np.mean(accs)) if accs else 0.0)


def harmonic_mean(u, s):
    return 2.0 * u * s / (u + s) if u + s > 0 else 0.0


@dataclass
class EvalReport:
    mode: str
    n_g: int
    seed: int
    checkpoint: str
    table: dict
    zsl_accuracy: float | None = None
    unseen: float | None = None
    seen: float | None = None
    harmonic: float | None = None
    classifier: str = "integrated"
    samples_per_class: int | None = None

    def summary_line(self):
        if self.mode == "zsl":
            return f"ZSL: acc={self.zsl_accuracy:.4f}"
        return f"GZSL: U={self.unseen:.4f} S={self.seen:.4f} H={self.harmonic:.4f}"

    def to_text(self):
        lines = ["# genclass evaluation report", f"mode = {self.mode}", f"classifier = {self.classifier}",
                 f"n_g = {self.n_g}",
                 f"samples_per_class = {'-' if self.samples_per_class is None else self.samples_per_class}",
                 f"seed = {self.seed}", f"checkpoint = {self.checkpoint}"]
        lines.append("class\tcount\taccuracy")
        for c in sorted(self.table):
            count, acc = self.table[c]
            lines.append(f"{c}\t{count}\t{'-' if acc is None else f'{acc:.4f}'}")
        lines.append(self.summary_line())
        return "\n".join(lines) + "\n"


def _test_split(dataset, which):
    idx = dataset.test_unseen_idx if which == "unseen" else dataset.test_seen_idx
    return dataset.features[idx], dataset.labels[idx]


def report_from_predictor(predict, dataset, mode, n_g, seed, checkpoint, classifier="integrated"):
    """Shared ZSL/GZSL protocol; ``predict(queries, classes)`` returns class ids."""
    if mode not in ("zsl", "gzsl"):
        raise ContractError(f"mode must be 'zsl' or 'gzsl', got {mode!r}")
    if dataset.test_unseen_idx.size == 0:
        raise DataError("dataset has no unseen test samples")
    if mode == "zsl":
        classes = np.sort(dataset.unseen_classes)
        xu, yu = _test_split(dataset, "unseen")
        table, acc = per_class_top1(predict(xu, classes), yu, classes)
        return EvalReport("zsl", n_g, seed, checkpoint, table, zsl_accuracy=acc, classifier=classifier)
    if dataset.test_seen_idx.size == 0:
        raise DataError("GZSL evaluation needs test_seen indices; this dataset is ZSL-only")
    classes = np.union1d(dataset.seen_classes, dataset.unseen_classes)
    xu, yu = _test_split(dataset, "unseen")
    xs, ys = _test_split(dataset, "seen")
    table_u, u = per_class_top1(predict(xu, classes), yu, dataset.unseen_classes)
    table_s, s = per_class_top1(predict(xs, classes), ys, dataset.seen_classes)
    return EvalReport("gzsl", n_g, seed, checkpoint, {**table_s, **table_u},
                      unseen=u, seen=s, harmonic=harmonic_mean(u, s), classifier=classifier)


def _evaluate(model, dataset, mode, n_g, seed, checkpoint):
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0xE7A1]))
    classes = dataset.unseen_classes if mode == "zsl" else np.union1d(dataset.seen_classes,
                                                                        dataset.unseen_classes)
    protos = None

    def predict(queries, _classes):
        nonlocal protos
        if protos is None:
            protos = compute_prototypes(model.generator, dataset.attributes, classes, n_g, rng, checkpoint)
        return classify(model.classifier, protos, queries)

    _check_compatible(model, dataset)
    return report_from_predictor(predict, dataset, mode, n_g, seed, checkpoint)


def _check_compatible(model, dataset):
    if model.d_x != dataset.d_x or model.d_a != dataset.d_a:
        raise IncompatibleCheckpointError(
            f"checkpoint expects d_x={model.d_x}, d_a={model.d_a}; "
            f"dataset has d_x={dataset.d_x}, d_a={dataset.d_a}")


def evaluate_zsl(model, dataset, n_g=50, seed=0, checkpoint=""):
    return _evaluate(model, dataset, "zsl", n_g, seed, checkpoint)


def evaluate_gzsl(model, dataset, n_g=50, seed=0, checkpoint=""):
    return _evaluate(model, dataset, "gzsl", n_g, seed, checkpoint)
