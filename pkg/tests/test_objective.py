import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cosettle.errors import ParameterError, ShapeError
from cosettle.gradcheck import relative_error
from cosettle.objective import (
    CorrelationPair,
    chain_loss,
    correlation_matrix,
    cycle_loss,
    kl_regularizer,
    surrogate_m_cyc,
    surrogate_m_reg,
    token_kl,
    total_loss,
)
from cosettle.projection import LinearProjection, MlpProjection
from cosettle.theory import lemma1_gradient_terms, per_eig_gradient


def _fd(fun, x, step=1e-5):
    g = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        p, m = x.copy(), x.copy()
        p[idx] += step
        m[idx] -= step
        g[idx] = (fun(p) - fun(m)) / (2 * step)
    return g


def test_correlation_orthonormal_self_match():
    q = np.eye(4)
    np.testing.assert_allclose(correlation_matrix(q, q, 1e-3), np.eye(4), atol=1e-12)


def test_correlation_identical_patches_uniform():
    p = np.ones((2, 3))
    np.testing.assert_allclose(correlation_matrix(p, p, 0.1), np.full((2, 2), 0.5))


def test_correlation_rows_sum_to_one():
    rng = np.random.default_rng(0)
    a = correlation_matrix(rng.standard_normal((4, 8)), rng.standard_normal((4, 8)), 0.5)
    np.testing.assert_allclose(a.sum(axis=1), 1.0, atol=1e-12)
    with pytest.raises(ShapeError):
        correlation_matrix(np.zeros((3, 2)), np.zeros((4, 2)), 1.0)


def test_chain_loss_perfect_cycle_is_zero():
    value, _, _, clamped = chain_loss(CorrelationPair(np.eye(3), np.eye(3)))
    assert value == 0.0 and clamped == 0


def test_chain_loss_half_diagonal():
    half = np.full((2, 2), 0.5)
    value, *_ = chain_loss(CorrelationPair(half, half))
    assert value == pytest.approx(math.log(2.0), abs=1e-15)
    assert value == pytest.approx(0.6931, abs=5e-5)


def test_chain_loss_clamps_zero_diagonal():
    swap = np.array([[0.0, 1.0], [1.0, 0.0]])
    value, d_fwd, d_bwd, clamped = chain_loss(CorrelationPair(swap, np.eye(2)))
    assert clamped == 2
    assert value == pytest.approx(-math.log(1e-30))
    assert np.all(d_fwd == 0) and np.all(d_bwd == 0)


def test_cycle_loss_gradients_finite_differences():
    rng = np.random.default_rng(1)
    pf, pm, pb = (rng.standard_normal((5, 7)) for _ in range(3))
    tau = 0.7
    res = cycle_loss(pf, pm, pb, tau)
    num = {
        "f": _fd(lambda x: cycle_loss(x, pm, pb, tau).value, pf),
        "m": _fd(lambda x: cycle_loss(pf, x, pb, tau).value, pm),
        "b": _fd(lambda x: cycle_loss(pf, pm, x, tau).value, pb),
    }
    ana = {"f": res.grad_forward, "m": res.grad_intermediate, "b": res.grad_backward}
    assert relative_error(ana, num) <= 1e-6


def test_cycle_loss_sum_reduction():
    rng = np.random.default_rng(2)
    grids = [rng.standard_normal((6, 4)) for _ in range(3)]
    mean = cycle_loss(*grids, 0.5).value
    total = cycle_loss(*grids, 0.5, reduction="sum").value
    assert total == pytest.approx(6 * mean, rel=1e-12)
    with pytest.raises(ParameterError):
        cycle_loss(*grids, 0.5, reduction="max")


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(0.05, 5.0))
def test_cycle_loss_non_negative(seed, tau):
    rng = np.random.default_rng(seed)
    grids = [rng.standard_normal((4, 3)) for _ in range(3)]
    assert cycle_loss(*grids, tau).value >= 0.0


def test_kl_identical_is_zero():
    rng = np.random.default_rng(3)
    z = rng.standard_normal((4, 5))
    value, grads = kl_regularizer([(z, z), (2 * z, 2 * z)])
    assert abs(value) <= 1e-12
    assert all(np.max(np.abs(g)) <= 1e-12 for g in grads)


def test_kl_two_class_scalar():
    p = np.log(np.array([[0.9, 0.1]]))
    z = np.zeros((1, 2))
    kl, _ = token_kl(p, z)
    assert kl[0] == pytest.approx(0.9 * math.log(1.8) + 0.1 * math.log(0.2), abs=1e-12)
    assert kl[0] == pytest.approx(0.3681, abs=5e-5)


def test_kl_gradient_finite_differences():
    rng = np.random.default_rng(4)
    pairs = [(rng.standard_normal((3, 5)), rng.standard_normal((3, 5))) for _ in range(3)]
    _, grads = kl_regularizer(pairs)
    for i, (p, _) in enumerate(pairs):

        def f(x, i=i):
            mod = list(pairs)
            mod[i] = (x, pairs[i][1])
            return kl_regularizer(mod)[0]

        assert relative_error({"p": grads[i]}, {"p": _fd(f, p)}) <= 1e-6


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_kl_non_negative(seed):
    rng = np.random.default_rng(seed)
    value, _ = kl_regularizer([(rng.standard_normal((3, 4)), rng.standard_normal((3, 4)))])
    assert value >= 0.0


def test_total_loss_components():
    rng = np.random.default_rng(5)
    projected = [rng.standard_normal((4, 6)) for _ in range(3)]
    raw = [rng.standard_normal((4, 6)) for _ in range(3)]
    off = total_loss(projected, raw, 0.0, 0.5)
    assert off.report.total == off.report.cyc
    on = total_loss(projected, raw, 1.0, 0.5)
    assert abs(on.report.total - (on.report.cyc + on.report.reg)) <= 1e-12
    with pytest.raises(ParameterError):
        total_loss(projected, raw, -1.0, 0.5)


def test_total_loss_zero_when_perfect():
    q = 10.0 * np.eye(4)
    res = total_loss([q, q, q], [q, q, q], 1.0, 0.01)
    assert res.report.total == pytest.approx(0.0, abs=1e-12)


def test_surrogate_m_cyc_scalars():
    z = np.random.default_rng(6).standard_normal((5, 3))
    assert surrogate_m_cyc(lambda x: x, z, z) == 0.0
    assert surrogate_m_cyc(lambda x: 2.0 * x, np.array([[1.0, 0.0]]), np.zeros((1, 2))) == pytest.approx(2.0)


def test_surrogate_m_cyc_trace_identity():
    rng = np.random.default_rng(7)
    w = rng.standard_normal((4, 4))
    z1, z2 = rng.standard_normal((50, 4)), rng.standard_normal((50, 4))
    diff = z1 - z2
    sigma_hat = diff.T @ diff / 50
    params = LinearProjection(w, np.ones(4), np.zeros(4), bypass_ln=True)
    assert surrogate_m_cyc(params, z1, z2) == pytest.approx(0.5 * np.trace(w.T @ w @ sigma_hat), abs=1e-10)


def test_surrogate_m_reg_scalars():
    q, _ = np.linalg.qr(np.random.default_rng(8).standard_normal((3, 3)))
    assert surrogate_m_reg(LinearProjection(q, np.ones(3), np.zeros(3))) == pytest.approx(0.0, abs=1e-24)
    assert surrogate_m_reg(LinearProjection(2 * np.eye(3), np.ones(3), np.zeros(3))) == pytest.approx(13.5)
    mlp = MlpProjection(np.zeros((3, 3)), np.eye(3), np.ones(3), np.zeros(3))
    assert surrogate_m_reg(mlp, np.ones((2, 3))) == pytest.approx(1.5)


@settings(max_examples=200, deadline=None)
@given(st.floats(0.001, 0.999), st.floats(0.001, 10.0), st.floats(0.001, 10.0))
def test_gradient_terms_opposing_signs(mu, sigma, lam):
    cons, sep = lemma1_gradient_terms(mu, sigma, lam)
    assert cons > 0 and sep < 0
    assert per_eig_gradient(mu, sigma, lam) == pytest.approx(cons + sep, abs=1e-12)
