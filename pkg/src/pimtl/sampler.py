"""Prioritized task sampling.

Each task keeps an exponentially smoothed score. Tasks are drawn with
probability proportional to ``score ** priority_exponent`` and the bias this
introduces is corrected with importance-sampling weights
``(T * p_t) ** -is_exponent``, normalised so the largest weight is 1.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError


@dataclass
class SamplerState:
    scores: np.ndarray
    priority_exponent: float = 0.5
    is_exponent: float = 1.0
    smoothing: float = 0.2

    def __post_init__(self):
        self.scores = np.array(self.scores, dtype=np.float64)
        if self.scores.ndim != 1 or self.scores.size == 0:
            raise DomainError("scores must be a non-empty vector")
        if np.any(self.scores < 0) or not np.all(np.isfinite(self.scores)):
            raise DomainError("scores must be finite and non-negative")
        if self.priority_exponent < 0:
            raise DomainError(f"priority exponent must be >= 0, got {self.priority_exponent}")
        if not 0.0 <= self.is_exponent <= 1.0:
            raise DomainError(f"IS exponent must lie in [0, 1], got {self.is_exponent}")
        if not 0.0 <= self.smoothing <= 1.0:
            raise DomainError(f"smoothing must lie in [0, 1], got {self.smoothing}")

    @classmethod
    def initial(cls, n_tasks: int, **kwargs) -> "SamplerState":
        """All scores start at 1 so the first draws are uniform."""
        return cls(np.ones(n_tasks), **kwargs)

    @property
    def n_tasks(self) -> int:
        return self.scores.size


def update_score(state: SamplerState, t: int, batch_score: float) -> SamplerState:
    """Smooth the score of task ``t`` in place and return ``state``."""
    if not math.isfinite(batch_score) or batch_score < 0:
        raise DomainError(f"batch score must be finite and >= 0, got {batch_score}")
    lam = state.smoothing
    state.scores[t] = lam * state.scores[t] + (1.0 - lam) * batch_score
    return state


def probabilities(state: SamplerState) -> np.ndarray:
    s, a = state.scores, state.priority_exponent
    if a > 0 and not np.any(s > 0):
        return np.full(s.size, 1.0 / s.size)
    # numpy gives 0.0 ** 0 == 1, the convention wanted for a == 0
    raw = np.power(s, a)
    return raw / raw.sum()


def raw_is_weights(state: SamplerState, p: np.ndarray | None = None) -> np.ndarray:
    p = probabilities(state) if p is None else p
    with np.errstate(divide="ignore"):
        return (state.n_tasks * p) ** -state.is_exponent


def is_weights(state: SamplerState, p: np.ndarray | None = None) -> np.ndarray:
    raw = raw_is_weights(state, p)
    finite = raw[np.isfinite(raw)]
    w = raw / finite.max()
    # tasks with p = 0 are never drawn; their weight is irrelevant
    w[~np.isfinite(w)] = 0.0
    return w


def sample_task(state: SamplerState, rng: np.random.Generator, p: np.ndarray | None = None) -> int:
    p = probabilities(state) if p is None else p
    return int(rng.choice(p.size, p=p))


@dataclass
class TaskSampler:
    """Sampler state plus cached probabilities and IS weights."""

    state: SamplerState
    p: np.ndarray = field(init=False)
    w: np.ndarray = field(init=False)

    def __post_init__(self):
        self.refresh()

    def refresh(self) -> None:
        self.p = probabilities(self.state)
        self.w = is_weights(self.state, self.p)

    def sample(self, rng: np.random.Generator) -> int:
        return sample_task(self.state, rng, self.p)

    def update(self, t: int, batch_score: float) -> None:
        update_score(self.state, t, batch_score)
        self.refresh()
