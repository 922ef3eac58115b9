"""Entropy-regularised allocation task.

Each of ``m`` entities has a scalar state ``x_i`` in [0, 1]. The reward of an
allocation is ``sum_i x_i a_i - beta_i a_i ln a_i``: concentrate on high
``x_i`` or spread out. With equal ``beta_i`` the reward is permutation
invariant; the spread ``max beta - min beta`` measures how far it is from
being so.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..core import Transition, renormalize, uniform_allocation
from ..errors import DimensionError, DomainError, NumericError
from ..lspi import Dataset, xlogx


@dataclass(frozen=True, eq=False)
class SyntheticConfig:
    m: int
    entropy_weights: np.ndarray
    noise_std: float = 0.05

    def __post_init__(self):
        w = np.asarray(self.entropy_weights, dtype=np.float64)
        object.__setattr__(self, "entropy_weights", w)
        if w.shape != (self.m,):
            raise DimensionError(f"need {self.m} entropy weights, got shape {w.shape}")
        if np.any(w <= 0):
            raise DomainError("entropy weights must be positive")
        if self.noise_std < 0:
            raise DomainError("noise_std must be non-negative")

    @property
    def epsilon(self) -> float:
        return float(self.entropy_weights.max() - self.entropy_weights.min())

    @classmethod
    def with_spread(cls, m: int, epsilon: float, center: float = 0.5, noise_std: float = 0.05):
        """Entropy weights evenly spaced on ``[center - eps/2, center + eps/2]``."""
        if epsilon == 0:
            w = np.full(m, center)
        else:
            w = np.linspace(center - epsilon / 2, center + epsilon / 2, m)
        return cls(m, w, noise_std)


def synthetic_reward(x, a, cfg: SyntheticConfig, rng: np.random.Generator | None = None,
                     entropy_weights=None):
    """Reward for states ``x`` and allocations ``a`` (leading axes broadcast).

    Gaussian noise of std ``cfg.noise_std`` is added when ``rng`` is given.
    """
    x = np.asarray(x, dtype=np.float64)
    a = np.asarray(a, dtype=np.float64)
    beta = cfg.entropy_weights if entropy_weights is None else entropy_weights
    if x.shape[-1] != a.shape[-1] or a.shape[-1] != len(beta):
        raise DimensionError(f"length mismatch: x {x.shape}, a {a.shape}, beta {len(beta)}")
    r = (x * a).sum(axis=-1) - (beta * xlogx(a)).sum(axis=-1)
    if rng is not None and cfg.noise_std > 0:
        r = r + rng.normal(0.0, cfg.noise_std, size=np.shape(r))
    return r


def reward_gradient(x, a, beta) -> np.ndarray:
    """d reward / d a for strictly positive ``a``."""
    return x - beta * (np.log(a) + 1.0)


def synthetic_optimal_allocation(x, cfg: SyntheticConfig, max_iter: int = 200, entropy_weights=None):
    """Noiseless reward maximiser on the simplex.

    Stationarity gives ``a_i = exp((x_i - lam) / beta_i - 1)``; the
    multiplier ``lam`` is found by bisection so the weights sum to one.
    Accepts a single state or a batch ``(..., m)``.
    """
    x = np.asarray(x, dtype=np.float64)
    beta = np.asarray(cfg.entropy_weights if entropy_weights is None else entropy_weights)
    if np.any(beta <= 0):
        raise DomainError("entropy weights must be positive")
    m = x.shape[-1]

    def total(lam):
        return np.exp((x - lam[..., None]) / beta - 1.0).sum(axis=-1)

    # at lo some a_i = 1 (sum >= 1); at hi every a_i <= 1/m (sum <= 1)
    lo = (x - beta).max(axis=-1)
    hi = (x + beta * (np.log(m) - 1.0)).max(axis=-1)
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        over = total(mid) > 1.0
        lo = np.where(over, mid, lo)
        hi = np.where(over, hi, mid)
        if np.all(hi - lo <= 4 * np.finfo(float).eps * np.maximum(1.0, np.abs(hi))):
            break
    lam = 0.5 * (lo + hi)
    a = np.exp((x - lam[..., None]) / beta - 1.0)
    if np.any(np.abs(a.sum(axis=-1) - 1.0) > 1e-12):
        raise NumericError("bisection for the optimal allocation did not converge")
    return renormalize(a)


def make_action_set(m: int, size: int = 64, seed: int = 0) -> np.ndarray:
    """Uniform allocation followed by ``size - 1`` flat-Dirichlet draws."""
    rng = np.random.default_rng(seed)
    draws = rng.dirichlet(np.ones(m), size=size - 1)
    return np.vstack([uniform_allocation(m), draws])


def random_permutations(n: int, m: int, rng: np.random.Generator) -> np.ndarray:
    return np.argsort(rng.random((n, m)), axis=1)


def _scatter(rows: np.ndarray, sigma: np.ndarray) -> np.ndarray:
    out = np.empty_like(rows)
    np.put_along_axis(out, sigma, rows, axis=1)
    return out


def augment_dataset(data: Dataset, target_count: int, rng: np.random.Generator) -> Dataset:
    """Grow ``data`` to ``target_count`` samples with permuted copies.

    Each copy takes a uniformly chosen original and a uniform permutation,
    permutes state, action and next state, and keeps the recorded reward.
    """
    n = len(data)
    if n == 0:
        raise DomainError("cannot augment an empty dataset")
    if target_count < n:
        raise DomainError(f"target count {target_count} is below the {n} originals")
    extra = target_count - n
    if extra == 0:
        return data
    m = data.states.shape[-1]
    src = rng.integers(0, n, size=extra)
    sigma = random_permutations(extra, m, rng)
    return Dataset(
        states=np.concatenate([data.states, _scatter(data.states[src], sigma)]),
        actions=np.concatenate([data.actions, _scatter(data.actions[src], sigma)]),
        rewards=np.concatenate([data.rewards, data.rewards[src]]),
        next_states=np.concatenate([data.next_states, _scatter(data.next_states[src], sigma)]),
    )


def permute_augment(examples, target_count: int, rng: np.random.Generator) -> list[tuple]:
    """List form of :func:`augment_dataset` for ``(x, a, reward)`` tuples.

    A fourth element (next state) is permuted along with ``x`` when present.
    """
    examples = list(examples)
    if not examples:
        raise DomainError("cannot augment an empty example list")
    if target_count < len(examples):
        raise DomainError(f"target count {target_count} is below the {len(examples)} originals")
    has_next = len(examples[0]) > 3
    x = np.array([e[0] for e in examples], dtype=np.float64)
    data = Dataset(
        states=x,
        actions=np.array([e[1] for e in examples], dtype=np.float64),
        rewards=np.array([e[2] for e in examples], dtype=np.float64),
        next_states=np.array([e[3] for e in examples], dtype=np.float64) if has_next else x,
    )
    out = augment_dataset(data, target_count, rng)
    rows = zip(out.states, out.actions, out.rewards, out.next_states)
    if has_next:
        return [(s, a, float(r), s2) for s, a, r, s2 in rows]
    return [(s, a, float(r)) for s, a, r, _ in rows]


def sample_dataset(cfg: SyntheticConfig, actions: np.ndarray, n: int, rng: np.random.Generator) -> Dataset:
    """``n`` i.i.d. transitions: uniform states, uniform candidate actions,
    noisy rewards, and next states independent of the action."""
    x = rng.random((n, cfg.m))
    a = actions[rng.integers(0, len(actions), size=n)]
    r = synthetic_reward(x, a, cfg, rng)
    x_next = rng.random((n, cfg.m))
    return Dataset(x, a, r, x_next)


def regret(policy, states, cfg: SyntheticConfig, optimal_rewards=None) -> float:
    """Mean noiseless reward gap between the optimal allocation and ``policy``."""
    if optimal_rewards is None:
        optimal_rewards = synthetic_reward(states, synthetic_optimal_allocation(states, cfg), cfg)
    chosen = policy(states)
    return float(np.mean(optimal_rewards - synthetic_reward(states, chosen, cfg)))


class SyntheticAllocationEnv:
    """Multi-task version for the policy-gradient trainer.

    A universe of entities, each with its own entropy weight; a task is a
    subset of them. State rows are ``(previous allocation, x_i)`` so the
    policy network's row layout applies with a window of one feature.
    Per-task state sequences are fixed by ``seed``.
    """

    minibatch_sampling = "uniform"
    feature_width = 1

    def __init__(self, entropy_weights, episode_length: int, noise_std: float = 0.05, seed: int = 0):
        self.entropy_weights = np.asarray(entropy_weights, dtype=np.float64)
        self.episode_length = int(episode_length)
        self.noise_std = noise_std
        self.seed = seed
        self._states: dict[tuple[int, str], np.ndarray] = {}

    def _episode(self, task, period: str = "train") -> np.ndarray:
        key = (task.id, period)
        if key not in self._states:
            tag = 0 if period == "train" else 1
            rng = np.random.default_rng([self.seed, task.id, tag])
            self._states[key] = rng.random((self.episode_length + 1, task.size))
        return self._states[key]

    def _cfg(self, task) -> SyntheticConfig:
        return SyntheticConfig(task.size, self.entropy_weights[task.entities], self.noise_std)

    def reset(self, task) -> None:
        task.carry = uniform_allocation(task.size)

    def observe(self, task, n: int, period: str = "train") -> np.ndarray:
        x = self._episode(task, period)[n - 1]
        return np.column_stack([task.carry, x])

    def step(self, task, n, state, action, rng=None, period: str = "train"):
        reward = float(synthetic_reward(state[:, 1], action, self._cfg(task), rng))
        task.carry = np.asarray(action, dtype=np.float64)
        return reward, self.observe(task, n + 1, period)

    def objective(self, task, transitions):
        x = np.stack([tr.state[:, 1] for tr in transitions])
        beta = self.entropy_weights[task.entities]
        cfg = self._cfg(task)

        def f(alloc):
            return synthetic_reward(x, alloc, cfg), reward_gradient(x, alloc, beta)

        return f

    def periods(self, period: str) -> range:
        return range(1, self.episode_length + 1)


def make_transition(state, action, reward, next_state, n) -> Transition:
    return Transition(state, np.asarray(action), float(reward), next_state, int(n))
