import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pimtl import _kernels
from pimtl import policy as pol
from pimtl.core import apply_permutation, random_permutation, uniform_allocation
from pimtl.errors import ConfigError, DimensionError, DomainError, NumericError


def random_params(rng, D=5, F=3, scale=0.5):
    return pol.init_near_zero(D, F, scale, rng)


def random_states(rng, B, m, L, F):
    x = rng.normal(1.0, 0.3, size=(B, m, 1 + L * F))
    x[..., 0] = rng.dirichlet(np.ones(m), size=B)
    return x


def entropy_objective(c):
    """Per-step value c . a - sum a ln a and its derivative."""

    def f(alloc):
        return (c * alloc).sum(axis=1) - (alloc * np.log(alloc)).sum(axis=1), c - np.log(alloc) - 1.0

    return f


def mean_objective(params, states, objective):
    return float(objective(pol.forward_batch(params, states))[0].mean())


def fd_gradient(params, states, objective, h=1e-6):
    theta = params.flat()
    g = np.empty_like(theta)
    for k in range(theta.size):
        tp, tm = theta.copy(), theta.copy()
        tp[k] += h
        tm[k] -= h
        g[k] = (mean_objective(params.with_flat(tp), states, objective)
                - mean_objective(params.with_flat(tm), states, objective)) / (2 * h)
    return g


def test_zero_network_scores_zero():
    params = pol.init_near_zero(4, 2, 0.0, np.random.default_rng(0))
    x = np.random.default_rng(1).normal(size=(6, 1 + 3 * 2))
    assert np.all(pol.entity_scores(params, x) == 0.0)
    assert np.allclose(pol.forward(params, np.abs(x)), uniform_allocation(6), atol=0)


def test_zero_window_score_is_last_weight_times_prev():
    rng = np.random.default_rng(2)
    p = random_params(rng, D=4, F=2)
    p = pol.PolicyParams(p.encoder_input_weights, p.encoder_recurrent_weights, np.zeros(4),
                         p.score_weights, 0.0)
    s = pol.score_entity(p, np.zeros((5, 2)), 0.3)
    assert s == pytest.approx(p.score_weights[-1] * 0.3, abs=1e-15)


def test_scores_deterministic():
    rng = np.random.default_rng(3)
    p = random_params(rng)
    x = random_states(rng, 1, 7, 4, 3)[0]
    assert np.array_equal(pol.entity_scores(p, x), pol.entity_scores(p, x))


def test_identical_rows_give_uniform():
    rng = np.random.default_rng(4)
    p = random_params(rng)
    row = random_states(rng, 1, 1, 4, 3)[0, 0]
    x = np.tile(row, (6, 1))
    x[:, 0] = 1 / 6
    assert np.allclose(pol.forward(p, x), uniform_allocation(6), atol=1e-15)


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 12))
def test_permutation_equivariance(seed, m):
    rng = np.random.default_rng(seed)
    p = random_params(rng, scale=1.0)
    x = random_states(rng, 1, m, 5, 3)[0]
    sigma = random_permutation(m, rng)
    lhs = pol.forward(p, apply_permutation(x, sigma))
    rhs = apply_permutation(pol.forward(p, x), sigma)
    assert np.max(np.abs(lhs - rhs)) < 1e-9


def test_forward_is_allocation_even_for_large_scores():
    rng = np.random.default_rng(5)
    p = random_params(rng, scale=30.0)
    a = pol.forward(p, random_states(rng, 1, 10, 4, 3)[0])
    assert np.all(a >= 0) and abs(a.sum() - 1.0) < 1e-12


def test_near_zero_init_is_close_to_uniform():
    rng = np.random.default_rng(6)
    worst = 0.0
    for _ in range(1000):
        p = pol.init_near_zero(25, 3, 1e-2, rng)
        x = random_states(rng, 1, 10, 6, 3)[0]
        worst = max(worst, np.abs(pol.forward(p, x) - 0.1).max())
    assert worst < 0.05


def test_init_deterministic():
    a = pol.init_near_zero(5, 3, 0.1, np.random.default_rng(9)).flat()
    b = pol.init_near_zero(5, 3, 0.1, np.random.default_rng(9)).flat()
    assert np.array_equal(a, b)


def test_gradient_matches_finite_differences():
    rng = np.random.default_rng(10)
    for _ in range(10):
        p = random_params(rng, D=5, F=3, scale=0.5)
        states = random_states(rng, 4, 3, 4, 3)
        obj = entropy_objective(rng.normal(size=3))
        g = pol.value_and_grad(p, states, obj).gradient.flat()
        fd = fd_gradient(p, states, obj)
        assert np.linalg.norm(g - fd) / max(np.linalg.norm(fd), 1e-12) < 1e-4


def test_constant_objective_zero_gradient():
    rng = np.random.default_rng(11)
    p = random_params(rng)
    res = pol.value_and_grad(p, random_states(rng, 3, 4, 4, 3), lambda a: (np.ones(len(a)), np.ones_like(a)))
    assert np.allclose(res.gradient.flat(), 0.0, atol=1e-15)


def test_gradient_linear_in_objective_scale():
    rng = np.random.default_rng(12)
    p = random_params(rng)
    s = random_states(rng, 3, 4, 4, 3)
    obj = entropy_objective(rng.normal(size=4))
    g1 = pol.value_and_grad(p, s, obj).gradient.flat()
    g3 = pol.value_and_grad(p, s, lambda a: tuple(3.0 * v for v in obj(a))).gradient.flat()
    assert np.allclose(g3, 3.0 * g1, rtol=1e-12, atol=1e-15)


def test_sample_grad_norms_bound_mean_gradient():
    rng = np.random.default_rng(13)
    p = random_params(rng)
    s = random_states(rng, 6, 4, 4, 3)
    res = pol.value_and_grad(p, s, entropy_objective(rng.normal(size=4)))
    assert res.sample_grad_norms.shape == (6,)
    assert res.gradient.norm() <= res.sample_grad_norms.max() + 1e-15


@pytest.mark.skipif(not _kernels.HAVE_NUMBA, reason="numba unavailable")
def test_backends_agree():
    rng = np.random.default_rng(14)
    p = random_params(rng, D=7)
    s = random_states(rng, 5, 6, 8, 3)
    obj = entropy_objective(rng.normal(size=6))
    a = pol.value_and_grad(p, s, obj, "numpy")
    b = pol.value_and_grad(p, s, obj, "numba")
    assert np.allclose(a.allocations, b.allocations, rtol=0, atol=1e-14)
    assert np.allclose(a.gradient.flat(), b.gradient.flat(), rtol=1e-12, atol=1e-15)


def test_env_flag_selects_numpy(monkeypatch):
    monkeypatch.setenv("PIMTL_DISABLE_NUMBA", "1")
    assert _kernels.default_backend() == "numpy"
    monkeypatch.setenv("PIMTL_DISABLE_NUMBA", "0")
    assert _kernels.default_backend() == ("numba" if _kernels.HAVE_NUMBA else "numpy")
    with pytest.raises(ConfigError):
        _kernels.get_kernels("fortran")


def test_bad_row_width():
    p = random_params(np.random.default_rng(0), F=3)
    with pytest.raises(DimensionError):
        pol.entity_scores(p, np.ones((4, 1 + 3 * 2 + 1)))


def test_non_finite_objective_raises():
    rng = np.random.default_rng(15)
    p = random_params(rng)
    with pytest.raises(NumericError):
        pol.value_and_grad(p, random_states(rng, 2, 3, 4, 3), lambda a: (np.full(len(a), np.nan), a))


def test_checkpoint_round_trip_bit_exact(tmp_path):
    rng = np.random.default_rng(16)
    p = pol.init_near_zero(6, 3, 0.7, rng, input_offset=1.0, input_scale=50.0)
    p = p.with_flat(p.flat() * np.pi)  # non-representable decimals
    path = tmp_path / "ck" / "policy.json"
    pol.save_params(p, path)
    q = pol.load_params(path)
    assert q.flat().tobytes() == p.flat().tobytes()
    assert (q.input_offset, q.input_scale) == (1.0, 50.0)
    assert json.loads(path.read_text())["format"] == pol.CHECKPOINT_FORMAT


def test_checkpoint_rejects_unknown_format():
    with pytest.raises(DomainError):
        pol.params_from_dict({"format": "other"})
