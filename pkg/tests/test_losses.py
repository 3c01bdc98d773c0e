import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from genclass import autodiff as ad
from genclass.errors import ConfigError, ContractError
from genclass.losses import (
    LOG_COLUMNS,
    LossBreakdown,
    combined_ci_loss,
    generator_objective,
    gradient_penalty,
    pair_mse,
    wgan_critic_loss,
)
from genclass.models import init_params
from genclass.pairing import build_seen_pairs, build_unseen_pairs
from helpers import central_diff, max_rel_err, param_arrays

D_X, D_A, D_Z = 3, 2, 2


def small_model(seed=0):
    m = init_params(D_X, D_A, D_Z, g_hidden=4, d_hidden=4, c_hidden=4, seed=seed)
    total = sum(net.num_parameters() for net in m.nets().values())
    assert total <= 200
    return m


def data(seed=0, b=4):
    rng = np.random.default_rng(seed)
    x = np.abs(rng.standard_normal((b, D_X)))
    fakes = np.abs(rng.standard_normal((b, D_X)))
    a = rng.standard_normal((b, D_A))
    return x, fakes, a


def linear_critic(c):
    c = ad.constant(np.asarray(c, dtype=float).reshape(-1, 1))
    return lambda x, a: ad.matmul(x, c)


def zeroed(net, last_bias=0.0):
    for p in net.params.values():
        p.value = np.zeros_like(p.value)
    net.params[f"b{len(net.dims) - 2}"].value[:] = last_bias
    return net


def penalty(critic, x, fakes, a, alpha):
    with ad.Tape(higher_order=True):
        return gradient_penalty(critic, x, fakes, a, alpha=alpha)


def test_gp_linear_unit_norm_is_zero():
    x, fakes, a = data()
    alpha = np.linspace(0, 1, 4)
    gp = penalty(linear_critic([0.6, 0.8, 0.0]), x, fakes, a, alpha)
    assert abs(gp.item()) <= 1e-12


def test_gp_linear_norm_three_is_four():
    x, fakes, a = data()
    gp = penalty(linear_critic([1.0, 2.0, 2.0]), x, fakes, a, np.full(4, 0.3))
    assert abs(gp.item() - 4.0) <= 1e-12


def test_constant_critic_loss_is_lambda():
    m = small_model()
    zeroed(m.critic.net, last_bias=2.5)
    x, fakes, a = data()
    with ad.Tape(higher_order=True):
        loss, w, gp = wgan_critic_loss(m.critic, x, fakes, a, lam=10.0, rng=np.random.default_rng(0))
    assert w.item() == 0.0
    assert gp.item() == 1.0
    assert loss.item() == 10.0


def test_zero_lambda_equal_scores_gives_zero():
    x, _, a = data()
    m = small_model()
    with ad.Tape(higher_order=True):
        loss, _, _ = wgan_critic_loss(m.critic, x, x.copy(), a, lam=0.0, rng=np.random.default_rng(0))
    assert loss.item() == 0.0


def test_negative_lambda_rejected():
    x, f, a = data()
    with pytest.raises(ConfigError):
        wgan_critic_loss(small_model().critic, x, f, a, lam=-1.0)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000))
def test_gp_nonnegative(seed):
    m = small_model(seed % 7)
    x, fakes, a = data(seed)
    assert penalty(m.critic, x, fakes, a, np.random.default_rng(seed).uniform(size=4)).item() >= 0


def test_critic_loss_gradient_matches_finite_differences():
    m = small_model(1)
    x, fakes, a = data(1)
    alpha = np.random.default_rng(1).uniform(size=4)
    params = list(m.critic.net.params.values())

    def loss_value():
        with ad.Tape(higher_order=True):
            return wgan_critic_loss(m.critic, x, fakes, a, 10.0, alpha=alpha)[0]

    with ad.Tape(higher_order=True):
        analytic = ad.grad(wgan_critic_loss(m.critic, x, fakes, a, 10.0, alpha=alpha)[0], params)
    numeric = central_diff(lambda: loss_value().item(), param_arrays(m.critic.net))
    assert max_rel_err(analytic, numeric) <= 1e-5


def test_gp_gradient_matches_finite_differences():
    m = init_params(D_X, D_A, D_Z, 4, 8, 4, seed=2)
    x, fakes, a = data(2, b=5)
    alpha = np.random.default_rng(2).uniform(size=5)
    params = list(m.critic.net.params.values())
    with ad.Tape(higher_order=True):
        analytic = ad.grad(gradient_penalty(m.critic, x, fakes, a, alpha=alpha), params)
    numeric = central_diff(lambda: penalty(m.critic, x, fakes, a, alpha).item(), param_arrays(m.critic.net))
    assert max_rel_err(analytic, numeric) <= 1e-5


def seen_batch(seed=3):
    x, fakes, _ = data(seed, b=6)
    labels = np.array([0, 0, 1, 1, 2, 2])
    return x, fakes, labels


def test_pair_mse_half_classifier_is_quarter():
    m = small_model()
    zeroed(m.classifier.net)
    x, fakes, labels = seen_batch()
    pairs = build_seen_pairs(x, labels, fakes, labels, np.random.default_rng(0))
    assert pair_mse(m.classifier, pairs).item() == 0.25


def test_pair_mse_perfect_classifier_is_zero():
    x, fakes, labels = seen_batch()
    pairs = build_seen_pairs(x, labels, fakes, labels, np.random.default_rng(0))
    oracle = lambda left, right: ad.constant(pairs.target.reshape(-1, 1))  # noqa: E731
    assert pair_mse(oracle, pairs).item() == 0.0


def test_pair_mse_gradients_match_finite_differences():
    m = small_model(4)
    x, fakes_arr, labels = seen_batch(4)
    fakes = ad.parameter(fakes_arr)
    params = list(m.classifier.net.params.values())

    def loss():
        pairs = build_seen_pairs(x, labels, fakes, labels, np.random.default_rng(7))
        return pair_mse(m.classifier, pairs)

    analytic = ad.grad(loss(), params + [fakes])
    numeric = central_diff(lambda: loss().item(), param_arrays(m.classifier.net) + [fakes.value])
    assert max_rel_err(analytic, numeric) <= 1e-5


def test_unseen_pair_mse_gradients_match_finite_differences():
    m = small_model(5)
    rng = np.random.default_rng(5)
    first = ad.parameter(np.abs(rng.standard_normal((4, D_X))))
    second = ad.parameter(np.abs(rng.standard_normal((4, D_X))))
    labels = np.array([8, 9, 9, 10])
    params = list(m.classifier.net.params.values())

    def loss():
        return pair_mse(m.classifier, build_unseen_pairs(first, second, labels, np.random.default_rng(1)))

    analytic = ad.grad(loss(), params + [first, second])
    numeric = central_diff(lambda: loss().item(),
                           param_arrays(m.classifier.net) + [first.value, second.value])
    assert max_rel_err(analytic, numeric) <= 1e-5


def test_pair_mse_empty_rejected():
    x, fakes, labels = seen_batch()
    pairs = build_seen_pairs(x, labels, fakes, labels, np.random.default_rng(0))
    pairs.target = pairs.target[:0]
    with pytest.raises(ContractError):
        pair_mse(small_model().classifier, pairs)


def test_combined_ci_loss_arithmetic():
    l_s, l_u = ad.constant(np.array([[0.2]])), ad.constant(np.array([[0.4]]))
    assert combined_ci_loss(l_s, l_u, 0.5).item() == pytest.approx(0.4, abs=1e-15)
    assert combined_ci_loss(l_s, l_u, 0.0) is l_s
    assert combined_ci_loss(l_s, l_u, 1.0).item() == pytest.approx(0.6, abs=1e-15)
    with pytest.raises(ConfigError):
        combined_ci_loss(l_s, l_u, 1.5)


@given(st.floats(0, 1), st.floats(0, 1), st.floats(0, 1), st.floats(0, 0.5))
def test_combined_ci_loss_monotone(l_s, l_u, gamma, delta):
    def f(s, u):
        return combined_ci_loss(ad.constant(np.array([[s]])), ad.constant(np.array([[u]])), gamma).item()
    assert f(l_s + delta, l_u) >= f(l_s, l_u)
    assert f(l_s, l_u + delta) >= f(l_s, l_u)
    assert f(l_s, l_u) == l_s + gamma * l_u


def test_combined_ci_loss_gradient():
    l_s, l_u = ad.parameter(np.array([[0.2]])), ad.parameter(np.array([[0.4]]))
    g_s, g_u = ad.grad(combined_ci_loss(l_s, l_u, 0.3), [l_s, l_u])
    assert g_s.item() == 1.0 and g_u.item() == pytest.approx(0.3, abs=1e-15)


def test_generator_objective_zero_critic_equals_l_ci():
    m = small_model()
    zeroed(m.critic.net)
    rng = np.random.default_rng(0)
    fakes = m.generator(rng.standard_normal((4, D_Z)), rng.standard_normal((4, D_A)))
    l_ci = ad.constant(np.array([[0.37]]))
    assert generator_objective(m.critic, fakes, np.zeros((4, D_A)), l_ci).item() == 0.37


def test_generator_objective_constant_five_critic():
    m = small_model()
    zeroed(m.critic.net, last_bias=5.0)
    fakes = ad.parameter(np.ones((3, D_X)))
    obj = generator_objective(m.critic, fakes, np.zeros((3, D_A)), ad.constant(np.zeros((1, 1))))
    assert obj.item() == -5.0


def test_generator_objective_rejects_constant_fakes():
    m = small_model()
    with pytest.raises(ContractError):
        generator_objective(m.critic, ad.constant(np.ones((2, D_X))), np.zeros((2, D_A)),
                            ad.constant(np.zeros((1, 1))))


def test_generator_objective_leaves_critic_untouched():
    m = small_model(6)
    fakes = m.generator(np.ones((2, D_Z)), np.ones((2, D_A)))
    obj = generator_objective(m.critic, fakes, np.ones((2, D_A)), ad.constant(np.zeros((1, 1))))
    grads = ad.grad(obj, list(m.critic.net.params.values()))
    assert all(not g.any() for g in grads)


def full_objective(m, seed=0, gamma=0.5):
    rng = np.random.default_rng(seed)
    x = np.abs(rng.standard_normal((4, D_X)))
    y = np.array([0, 1, 1, 2])
    a = rng.standard_normal((4, D_A))
    z = rng.standard_normal((4, D_Z))
    ua = rng.standard_normal((4, D_A))
    uz, uz2 = rng.standard_normal((4, D_Z)), rng.standard_normal((4, D_Z))
    uy = np.array([8, 8, 9, 10])
    fakes = m.generator(z, a)
    l_s = pair_mse(m.classifier, build_seen_pairs(x, y, fakes, y, np.random.default_rng(seed + 1)))
    pairs = build_unseen_pairs(m.generator(uz, ua), m.generator(uz2, ua), uy, np.random.default_rng(seed + 2))
    l_u = pair_mse(m.classifier, pairs)
    return generator_objective(m.critic, fakes, a, combined_ci_loss(l_s, l_u, gamma))


def test_generator_objective_gradients_match_finite_differences():
    m = small_model(7)
    params = list(m.generator.net.params.values()) + list(m.classifier.net.params.values())
    analytic = ad.grad(full_objective(m), params)
    numeric = central_diff(lambda: full_objective(m).item(),
                           param_arrays(m.generator.net) + param_arrays(m.classifier.net))
    assert max_rel_err(analytic, numeric) <= 1e-5


def test_loss_breakdown_log_line():
    b = LossBreakdown(0.5, 0.25, 0.1, 0.2, 0.12, -0.3, 10.0, 0.1)
    fields = b.log_line(7).split("\t")
    assert len(fields) == len(LOG_COLUMNS)
    assert fields[0] == "7" and float(fields[4]) == 0.2
    assert b.is_finite()
    assert not LossBreakdown(float("nan"), 0, 0, 0, 0, 0, 10.0, 0.1).is_finite()
