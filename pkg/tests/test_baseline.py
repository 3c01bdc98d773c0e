import numpy as np
import pytest

from genclass.baseline import (
    SoftmaxClassifier,
    evaluate_softmax,
    generate_training_set,
    softmax,
    train_softmax_on_generated,
)
from genclass.config import BaselineOptions
from genclass.data import SyntheticSpec, make_synthetic, read_matrix
from genclass.errors import ConfigError, DataError, MissingAttributeError
from genclass.inference import evaluate_zsl
from genclass.models import Generator, init_params
from helpers import central_diff, max_rel_err

SMALL = SyntheticSpec(k=4, l=3, d_a=4, d_x=6, train_per_class=10, test_per_class=8, seed=2)


def separable_generator():
    """Generator mapping one-hot attribute c to roughly 5 * e_c plus small noise."""
    d = 4
    w0 = np.vstack([0.01 * np.ones((2, d)), 5.0 * np.eye(d)])
    params = {"w0": w0, "b0": np.zeros((1, d)), "w1": np.eye(d), "b1": np.zeros((1, d)),
              "w2": np.eye(d), "b2": np.zeros((1, d))}
    return Generator(2, d, d, hidden=d, params=params)


def test_softmax_rows_are_probability_vectors():
    logits = np.random.default_rng(0).standard_normal((50, 7)) * 30
    p = softmax(logits)
    assert np.all(p >= 0)
    assert np.max(np.abs(p.sum(axis=1) - 1)) <= 1e-9


def test_loss_gradients_match_finite_differences():
    rng = np.random.default_rng(1)
    clf = SoftmaxClassifier(rng.standard_normal((5, 3)), rng.standard_normal((1, 3)), np.array([2, 4, 6]))
    x = rng.standard_normal((8, 5))
    y = rng.integers(3, size=8)
    _, gw, gb = clf.loss_and_grads(x, y)
    numeric = central_diff(lambda: clf.loss_and_grads(x, y)[0], [clf.weight, clf.bias])
    assert max_rel_err([gw, gb], numeric) <= 1e-6


def test_separable_fakes_are_fit():
    g = separable_generator()
    clf = train_softmax_on_generated(g, np.eye(4), [0, 1, 2, 3], BaselineOptions(samples_per_class=50), seed=0)
    assert (clf.predict(clf.train_x) == clf.train_y).mean() >= 0.99
    assert np.max(np.abs(clf.predict_proba(clf.train_x).sum(axis=1) - 1)) <= 1e-9


def test_deterministic_given_seed():
    g = separable_generator()
    opts = BaselineOptions(samples_per_class=10, epochs=3)
    a = train_softmax_on_generated(g, np.eye(4), [0, 1, 2, 3], opts, seed=3)
    b = train_softmax_on_generated(g, np.eye(4), [0, 1, 2, 3], opts, seed=3)
    c = train_softmax_on_generated(g, np.eye(4), [0, 1, 2, 3], opts, seed=4)
    assert a.weight.tobytes() == b.weight.tobytes()
    assert a.weight.tobytes() != c.weight.tobytes()


def test_full_batch_gd_loss_is_monotone():
    g = init_params(6, 4, None, 8, 8, 8, seed=1).generator
    opts = BaselineOptions(samples_per_class=30, epochs=60, lr=0.05, optimizer="gd")
    attrs = np.abs(np.random.default_rng(0).standard_normal((3, 4)))
    clf = train_softmax_on_generated(g, attrs, [0, 1, 2], opts, seed=0)
    diffs = np.diff(clf.loss_history)
    assert np.all(diffs <= 1e-6)
    assert clf.loss_history[-1] < clf.loss_history[0]


def test_single_class_always_predicted():
    g = separable_generator()
    clf = train_softmax_on_generated(g, np.eye(4), [2], BaselineOptions(samples_per_class=5, epochs=2), seed=0)
    x = np.abs(np.random.default_rng(0).standard_normal((10, 4)))
    assert clf.predict(x).tolist() == [2] * 10


def test_generated_set_with_real_rows():
    g = separable_generator()
    x, y = generate_training_set(g, np.eye(4), [3, 1], 4, np.random.default_rng(0),
                                 real=(np.ones((2, 4)), np.array([0, 2])))
    assert x.shape == (10, 4)
    assert y.tolist() == [1] * 4 + [3] * 4 + [0, 2]


def test_rejects_bad_inputs():
    g = separable_generator()
    with pytest.raises(ConfigError):
        BaselineOptions(samples_per_class=0).check()
    with pytest.raises(ConfigError):
        generate_training_set(g, np.eye(4), [0], 0, np.random.default_rng(0))
    with pytest.raises(MissingAttributeError):
        generate_training_set(g, np.eye(4), [9], 3, np.random.default_rng(0))


def test_report_schema_matches_integrated():
    ds = make_synthetic(SMALL)
    m = init_params(ds.d_x, ds.d_a, None, 8, 8, 8, seed=0)
    soft, _ = evaluate_softmax(m, ds, "zsl", BaselineOptions(samples_per_class=10, epochs=2), seed=0,
                               checkpoint="ck")
    integ = evaluate_zsl(m, ds, n_g=5, seed=0, checkpoint="ck")

    def keys(text):
        lines = text.splitlines()
        return [line.split(" = ")[0] for line in lines[:7]] + lines[7:8] + [
            line.split("\t")[0] for line in lines[8:-1]] + [lines[-1].split(":")[0]]

    assert keys(soft.to_text()) == keys(integ.to_text())
    assert "classifier = softmax" in soft.to_text()
    assert "samples_per_class = 10" in soft.to_text()


def test_gzsl_softmax_covers_all_classes():
    ds = make_synthetic(SMALL)
    m = init_params(ds.d_x, ds.d_a, None, 8, 8, 8, seed=0)
    rep, clf = evaluate_softmax(m, ds, "gzsl", BaselineOptions(samples_per_class=5, epochs=2), seed=0)
    assert clf.classes.tolist() == list(range(SMALL.k + SMALL.l))
    assert rep.harmonic is not None
    ds.test_seen_idx = ds.test_seen_idx[:0]
    with pytest.raises(DataError):
        evaluate_softmax(m, ds, "gzsl", BaselineOptions(samples_per_class=5, epochs=1))


def test_classifier_saved_as_matrices(tmp_path):
    g = separable_generator()
    clf = train_softmax_on_generated(g, np.eye(4), [0, 3], BaselineOptions(samples_per_class=5, epochs=1))
    clf.save(tmp_path)
    assert read_matrix(tmp_path / "softmax.weight.gcmx").tobytes() == clf.weight.tobytes()
    assert read_matrix(tmp_path / "softmax.classes.gcmx").tolist() == [[0.0, 3.0]]
