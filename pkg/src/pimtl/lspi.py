"""Least-squares policy iteration over a finite set of allocations.

Feature maps broadcast: ``features(states, actions)`` takes arrays whose
leading axes broadcast against each other and returns ``(..., d)``. Greedy
evaluation of ``n`` states against ``K`` candidate actions is then a single
call on ``states[:, None]`` and ``actions[None]``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .core import check_allocation
from .errors import DimensionError, DomainError

_CHUNK = 2048


def xlogx(a: np.ndarray) -> np.ndarray:
    """``a * ln(a)`` with ``0 * ln 0 = 0``."""
    a = np.asarray(a, dtype=np.float64)
    out = np.zeros_like(a)
    pos = a > 0
    out[pos] = a[pos] * np.log(a[pos])
    return out


class FeatureMap:
    dim: int
    bound: float

    def __call__(self, states, actions) -> np.ndarray:  # pragma: no cover - interface
        raise NotImplementedError


class EntityFeatures(FeatureMap):
    """Per-entity features for allocation problems with scalar entity states:
    ``(x_1 a_1, ..., x_m a_m, -a_1 ln a_1, ..., -a_m ln a_m, 1)``.

    The entropy-regularised reward lies exactly in this span for any
    per-entity entropy weights.
    """

    def __init__(self, m: int):
        self.m = m
        self.dim = 2 * m + 1
        self.bound = 1.0

    def __call__(self, states, actions):
        x = np.asarray(states, dtype=np.float64)
        a = np.asarray(actions, dtype=np.float64)
        if x.shape[-1] != self.m or a.shape[-1] != self.m:
            raise DimensionError(f"expected {self.m} entities, got {x.shape[-1]} and {a.shape[-1]}")
        xa = x * a
        ent = np.broadcast_to(-xlogx(a), xa.shape)
        one = np.ones(xa.shape[:-1] + (1,))
        return np.concatenate([xa, ent, one], axis=-1)


class PooledFeatures(FeatureMap):
    """Permutation-invariant features ``(sum_i x_i a_i, -sum_i a_i ln a_i, 1)``."""

    def __init__(self, m: int):
        self.m = m
        self.dim = 3
        self.bound = max(1.0, float(np.log(m)))

    def __call__(self, states, actions):
        x = np.asarray(states, dtype=np.float64)
        a = np.asarray(actions, dtype=np.float64)
        lin = (x * a).sum(axis=-1)
        ent = np.broadcast_to(-xlogx(a).sum(axis=-1), lin.shape)
        return np.stack([lin, ent, np.ones_like(lin)], axis=-1)


class TabularFeatures(FeatureMap):
    """One-hot over ``(state, action)`` pairs; actions are one-hot vectors."""

    def __init__(self, n_states: int, n_actions: int):
        self.n_states = n_states
        self.n_actions = n_actions
        self.dim = n_states * n_actions
        self.bound = 1.0

    def __call__(self, states, actions):
        s = np.asarray(states, dtype=np.int64)
        a = np.argmax(np.asarray(actions), axis=-1)
        idx = s * self.n_actions + a
        out = np.zeros(idx.shape + (self.dim,))
        np.put_along_axis(out, idx[..., None], 1.0, axis=-1)
        return out


def one_hot_actions(n_actions: int) -> np.ndarray:
    return np.eye(n_actions)


@dataclass(frozen=True, eq=False)
class LinearQ:
    weights: np.ndarray
    v_max: float = np.inf

    def values(self, features: FeatureMap, states, actions) -> np.ndarray:
        q = features(states, actions) @ self.weights
        return np.clip(q, -self.v_max, self.v_max)


def check_action_set(actions) -> np.ndarray:
    acts = np.asarray(actions, dtype=np.float64)
    if acts.ndim != 2 or acts.shape[0] == 0:
        raise DimensionError(f"action set must be a non-empty (K, m) array, got {acts.shape}")
    for a in acts:
        check_allocation(a)
    if len(np.unique(acts, axis=0)) != len(acts):
        raise DomainError("action set contains duplicate allocations")
    return acts


@dataclass
class Dataset:
    """Batch of transitions; ``weights`` (optional) scale each sample's
    contribution to the LSTD system."""

    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    next_states: np.ndarray
    weights: np.ndarray | None = None

    def __post_init__(self):
        self.states = np.asarray(self.states)
        self.actions = np.asarray(self.actions, dtype=np.float64)
        self.rewards = np.asarray(self.rewards, dtype=np.float64)
        self.next_states = np.asarray(self.next_states)
        n = len(self.rewards)
        if not (len(self.states) == len(self.actions) == len(self.next_states) == n):
            raise DimensionError("dataset arrays have inconsistent lengths")
        if self.weights is not None:
            self.weights = np.asarray(self.weights, dtype=np.float64)

    def __len__(self) -> int:
        return len(self.rewards)


def greedy_indices(q: LinearQ | None, features: FeatureMap, actions: np.ndarray, states) -> np.ndarray:
    """Index of the best action for each state; ties go to the lowest index."""
    states = np.asarray(states)
    n = len(states)
    if q is None:
        return np.zeros(n, dtype=np.int64)
    out = np.empty(n, dtype=np.int64)
    expand = (slice(None), None) + (Ellipsis,)
    for lo in range(0, n, _CHUNK):
        chunk = states[lo : lo + _CHUNK]
        vals = q.values(features, chunk[expand], actions[None])
        out[lo : lo + _CHUNK] = np.argmax(vals, axis=1)
    return out


def greedy_action(q: LinearQ | None, features: FeatureMap, actions, state) -> np.ndarray:
    actions = np.asarray(actions, dtype=np.float64)
    idx = greedy_indices(q, features, actions, np.asarray(state)[None])
    return actions[idx[0]]


Policy = Callable[[np.ndarray], np.ndarray]


def greedy_policy(q: LinearQ | None, features: FeatureMap, actions: np.ndarray) -> Policy:
    """Map a batch of states to the greedy allocations (``q=None``: action 0)."""

    def policy(states):
        return actions[greedy_indices(q, features, actions, states)]

    return policy


def lstdq(
    data: Dataset,
    policy: Policy,
    features: FeatureMap,
    discount: float,
    v_max: float = np.inf,
) -> LinearQ:
    """Solve ``A w = b`` for the Q-function of ``policy``.

    ``A = sum phi(x,a) (phi(x,a) - discount * phi(x', policy(x')))^T``,
    ``b = sum phi(x,a) r``. Rank-deficient systems get the minimum-norm
    least-squares solution.
    """
    if len(data) == 0:
        raise DomainError("LSTDQ needs at least one transition")
    if not 0.0 <= discount < 1.0:
        raise DomainError(f"discount must lie in [0, 1), got {discount}")
    phi = features(data.states, data.actions)
    phi_next = features(data.next_states, policy(data.next_states))
    wphi = phi if data.weights is None else phi * data.weights[:, None]
    A = wphi.T @ (phi - discount * phi_next)
    b = wphi.T @ data.rewards
    w, *_ = np.linalg.lstsq(A, b, rcond=None)
    return LinearQ(w, v_max)


@dataclass
class LSPIResult:
    policy: Policy
    iterates: list[LinearQ] = field(default_factory=list)

    @property
    def q(self) -> LinearQ:
        return self.iterates[-1]


def lspi(
    data: Dataset,
    features: FeatureMap,
    actions: Sequence,
    discount: float,
    iterations: int,
    v_max: float = np.inf,
    initial: LinearQ | None = None,
) -> LSPIResult:
    """Alternate LSTDQ evaluation and greedy improvement.

    Stops after ``iterations`` evaluations, or earlier once the greedy
    actions at the dataset's next states repeat (later iterates would be
    identical).
    """
    if iterations < 1:
        raise DomainError(f"iterations must be >= 1, got {iterations}")
    actions = np.asarray(actions, dtype=np.float64)
    q = initial
    chosen = greedy_indices(q, features, actions, data.next_states)
    iterates: list[LinearQ] = []
    for _ in range(iterations):
        q = lstdq(data, greedy_policy(q, features, actions), features, discount, v_max)
        iterates.append(q)
        new = greedy_indices(q, features, actions, data.next_states)
        if np.array_equal(new, chosen):
            break
        chosen = new
    return LSPIResult(greedy_policy(q, features, actions), iterates)
