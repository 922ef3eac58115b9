import numpy as np
import pytest
from oracles import exhaustive_dataset, policy_q, random_mdp, value_iteration

from pimtl.envs.synthetic import SyntheticConfig, make_action_set, sample_dataset, synthetic_reward
from pimtl.errors import DimensionError, DomainError
from pimtl.lspi import (
    Dataset,
    EntityFeatures,
    LinearQ,
    PooledFeatures,
    TabularFeatures,
    check_action_set,
    greedy_action,
    greedy_indices,
    lspi,
    lstdq,
    one_hot_actions,
    xlogx,
)


def test_xlogx_zero_convention():
    assert np.array_equal(xlogx(np.array([0.0, 1.0])), [0.0, 0.0])
    assert xlogx(np.array([0.5]))[0] == pytest.approx(0.5 * np.log(0.5))


def test_feature_shapes_broadcast():
    f = EntityFeatures(4)
    x = np.random.default_rng(0).random((5, 4))
    acts = make_action_set(4, 7)
    assert f(x, acts[:5]).shape == (5, 9)
    assert f(x[:, None], acts[None]).shape == (5, 7, 9)
    assert PooledFeatures(4)(x[:, None], acts[None]).shape == (5, 7, 3)
    with pytest.raises(DimensionError):
        f(x[:, :3], acts[:5, :3])


def test_zero_rewards_give_zero_weights():
    rng = np.random.default_rng(1)
    acts = make_action_set(3, 8)
    data = Dataset(rng.random((20, 3)), acts[rng.integers(0, 8, 20)], np.zeros(20), rng.random((20, 3)))
    q = lstdq(data, lambda s: np.tile(acts[0], (len(s), 1)), EntityFeatures(3), 0.5)
    assert np.array_equal(q.weights, np.zeros(7))


def test_gamma_zero_tabular_gives_group_means():
    rng = np.random.default_rng(2)
    nS, nA = 4, 3
    s = rng.integers(0, nS, 200)
    a = rng.integers(0, nA, 200)
    r = rng.normal(size=200)
    data = Dataset(s, np.eye(nA)[a], r, s)
    q = lstdq(data, lambda st: np.tile(np.eye(nA)[0], (len(st), 1)), TabularFeatures(nS, nA), 0.0)
    for i in range(nS):
        for j in range(nA):
            mask = (s == i) & (a == j)
            if mask.any():
                assert q.weights[i * nA + j] == pytest.approx(r[mask].mean(), abs=1e-12)


def test_lstdq_exact_samples_match_policy_q():
    rng = np.random.default_rng(3)
    P, R = random_mdp(rng, 5, 3)
    policy = rng.integers(0, 3, 5)
    data = exhaustive_dataset(P, R)
    q = lstdq(data, lambda st: np.eye(3)[policy[np.asarray(st)]], TabularFeatures(5, 3), 0.9)
    assert np.allclose(q.weights.reshape(5, 3), policy_q(P, R, 0.9, policy), atol=1e-8)


def test_lspi_matches_value_iteration_q():
    rng = np.random.default_rng(4)
    P, R = random_mdp(rng, 5, 3)
    res = lspi(exhaustive_dataset(P, R), TabularFeatures(5, 3), one_hot_actions(3), 0.9, 50)
    q_star = value_iteration(P, R, 0.9)
    assert np.allclose(res.q.weights.reshape(5, 3), q_star, atol=1e-8)
    chosen = greedy_indices(res.q, TabularFeatures(5, 3), one_hot_actions(3), np.arange(5))
    assert np.array_equal(chosen, q_star.argmax(axis=1))


def test_lspi_fixed_point_from_optimal_start():
    rng = np.random.default_rng(5)
    P, R = random_mdp(rng, 4, 2)
    q_star = value_iteration(P, R, 0.8)
    feats = TabularFeatures(4, 2)
    res = lspi(exhaustive_dataset(P, R), feats, one_hot_actions(2), 0.8, 1, initial=LinearQ(q_star.ravel()))
    assert np.array_equal(greedy_indices(res.q, feats, one_hot_actions(2), np.arange(4)), q_star.argmax(axis=1))


def test_greedy_tie_and_single_action():
    feats = EntityFeatures(2)
    acts = make_action_set(2, 5)
    assert np.array_equal(greedy_action(LinearQ(np.zeros(5)), feats, acts, [0.3, 0.4]), acts[0])
    assert np.array_equal(greedy_action(LinearQ(np.ones(5)), feats, acts[2:3], [0.3, 0.4]), acts[2])
    assert np.array_equal(greedy_indices(None, feats, acts, np.zeros((3, 2))), [0, 0, 0])


def test_truncation_clips_values():
    q = LinearQ(np.array([100.0, 0.0, 0.0, 0.0, 0.0]), v_max=2.0)
    assert q.values(EntityFeatures(2), [1.0, 1.0], [1.0, 0.0]) == 2.0


def test_action_independent_reward_zero_regret():
    rng = np.random.default_rng(6)
    acts = make_action_set(3, 10)
    x = rng.random((50, 3))
    data = Dataset(x, acts[rng.integers(0, 10, 50)], x.sum(axis=1), rng.random((50, 3)))
    res = lspi(data, PooledFeatures(3), acts, 0.0, 5)
    chosen = res.policy(x)
    # any choice is optimal when reward ignores the action
    assert chosen.shape == (50, 3)


def test_entity_features_recover_optimum_in_action_set():
    cfg = SyntheticConfig.with_spread(4, 0.0, noise_std=0.0)
    acts = make_action_set(4, 32)
    data = sample_dataset(cfg, acts, 3000, np.random.default_rng(7))
    res = lspi(data, EntityFeatures(4), acts, 0.0, 5)
    x = np.random.default_rng(8).random((200, 4))
    best = synthetic_reward(x[:, None], acts[None], cfg).argmax(axis=1)
    assert np.array_equal(res.policy(x), acts[best])


def test_errors():
    feats = EntityFeatures(2)
    empty = Dataset(np.zeros((0, 2)), np.zeros((0, 2)), np.zeros(0), np.zeros((0, 2)))
    with pytest.raises(DomainError):
        lstdq(empty, lambda s: s, feats, 0.5)
    one = Dataset(np.ones((1, 2)), [[0.5, 0.5]], [1.0], np.ones((1, 2)))
    with pytest.raises(DomainError):
        lstdq(one, lambda s: np.full_like(s, 0.5), feats, 1.0)
    with pytest.raises(DomainError):
        lspi(one, feats, [[0.5, 0.5]], 0.5, 0)
    with pytest.raises(DimensionError):
        Dataset(np.ones((2, 2)), np.ones((1, 2)), [1.0], np.ones((1, 2)))
    with pytest.raises(DomainError):
        check_action_set([[0.5, 0.5], [0.5, 0.5]])
