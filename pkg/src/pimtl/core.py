"""Domain types shared by every module: allocations, state matrices,
permutations, transitions, replay buffers and tasks.

Allocations and state matrices are plain ``numpy`` arrays; the helpers here
validate them instead of wrapping them in classes.
"""

from __future__ import annotations

import itertools
import math
from collections import deque
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Sequence

import numpy as np

from .errors import DimensionError, DomainError, InsufficientDataError

SIMPLEX_TOL = 1e-9


def check_allocation(a, tol: float = SIMPLEX_TOL) -> np.ndarray:
    """Return ``a`` as a float array, raising if it is not on the simplex."""
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 1 or a.size == 0:
        raise DimensionError(f"allocation must be a non-empty vector, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise DomainError("allocation contains non-finite weights")
    if a.min() < 0.0 or a.max() > 1.0:
        raise DomainError(f"allocation weights outside [0, 1]: min={a.min()}, max={a.max()}")
    if abs(a.sum() - 1.0) > tol:
        raise DomainError(f"allocation sums to {a.sum()!r}, not 1")
    return a


def is_allocation(a, tol: float = SIMPLEX_TOL) -> bool:
    try:
        check_allocation(a, tol)
    except (DimensionError, DomainError):
        return False
    return True


def uniform_allocation(m: int) -> np.ndarray:
    if m < 1:
        raise DomainError(f"entity count must be >= 1, got {m}")
    return np.full(m, 1.0 / m)


def renormalize(a: np.ndarray) -> np.ndarray:
    """Divide by the sum along the last axis (absorbs softmax rounding)."""
    return a / a.sum(axis=-1, keepdims=True)


def check_state(x, m: int | None = None) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    if x.ndim != 2:
        raise DimensionError(f"state matrix must be 2-D (entities x features), got shape {x.shape}")
    if m is not None and x.shape[0] != m:
        raise DimensionError(f"state has {x.shape[0]} rows, expected {m}")
    return x


def check_permutation(sigma) -> np.ndarray:
    sigma = np.asarray(sigma)
    if sigma.ndim != 1 or not np.issubdtype(sigma.dtype, np.integer):
        raise DimensionError("permutation must be a 1-D integer array")
    if not np.array_equal(np.sort(sigma), np.arange(sigma.size)):
        raise DomainError("permutation is not a bijection on {0, ..., m-1}")
    return sigma


def random_permutation(m: int, rng: np.random.Generator) -> np.ndarray:
    return rng.permutation(m)


def invert_permutation(sigma) -> np.ndarray:
    sigma = check_permutation(sigma)
    inv = np.empty_like(sigma)
    inv[sigma] = np.arange(sigma.size)
    return inv


def apply_permutation(x, sigma) -> np.ndarray:
    """Move row ``i`` of ``x`` to row ``sigma[i]``.

    Works on state matrices and on allocation vectors (first axis is the
    entity axis). Returns a new array.
    """
    x = np.asarray(x)
    sigma = check_permutation(sigma)
    if x.shape[0] != sigma.size:
        raise DimensionError(
            f"permutation of length {sigma.size} applied to {x.shape[0]} entities"
        )
    out = np.empty_like(x)
    out[sigma] = x
    return out


@dataclass(frozen=True)
class Transition:
    state: np.ndarray
    action: np.ndarray
    reward: float
    next_state: np.ndarray
    time_index: int

    def __post_init__(self):
        if len(self.action) != len(self.state):
            raise DimensionError(
                f"action length {len(self.action)} != state rows {len(self.state)}"
            )


class ReplayBuffer:
    """Insertion-ordered transition store; the oldest entries are evicted
    once ``capacity`` is reached."""

    def __init__(self, capacity: int):
        if capacity < 1:
            raise DomainError(f"capacity must be >= 1, got {capacity}")
        self.capacity = int(capacity)
        self._items: deque[Transition] = deque(maxlen=self.capacity)

    def __len__(self) -> int:
        return len(self._items)

    def __iter__(self) -> Iterator[Transition]:
        return iter(self._items)

    def __getitem__(self, i: int) -> Transition:
        return self._items[i]

    def add(self, transition: Transition) -> None:
        self._items.append(transition)

    def extend(self, transitions: Iterable[Transition]) -> None:
        self._items.extend(transitions)

    def window(self, start: int, size: int) -> list[Transition]:
        if start < 0 or start + size > len(self._items):
            raise InsufficientDataError(
                f"window [{start}, {start + size}) outside buffer of length {len(self._items)}"
            )
        return list(itertools.islice(self._items, start, start + size))

    def clear(self) -> None:
        self._items.clear()


def truncated_geometric_pmf(p: float, max_offset: int) -> np.ndarray:
    """pmf of ``k = 0..max_offset`` proportional to ``p (1-p)**k``."""
    k = np.arange(max_offset + 1)
    if p >= 1.0:
        pmf = (k == 0).astype(np.float64)
    else:
        pmf = p * (1.0 - p) ** k
    return pmf / pmf.sum()


def sample_truncated_geometric(p: float, max_offset: int, rng: np.random.Generator) -> int:
    """Inverse-CDF draw from :func:`truncated_geometric_pmf`."""
    if not 0.0 < p <= 1.0:
        raise DomainError(f"geometric parameter must lie in (0, 1], got {p}")
    if max_offset == 0 or p >= 1.0:
        return 0
    u = rng.random()
    q = math.log1p(-p)
    # P(K <= k) = (1 - (1-p)^(k+1)) / (1 - (1-p)^(max+1))
    mass = -math.expm1((max_offset + 1) * q)
    k = math.floor(math.log1p(-u * mass) / q)
    return min(max(k, 0), max_offset)


def buffer_sample_geometric(
    buf: ReplayBuffer, batch_size: int, recency_rate: float, rng: np.random.Generator
) -> list[Transition]:
    """Draw ``batch_size`` consecutive transitions, preferring recent ones.

    The window start lies ``k`` positions before the most recent admissible
    start, with ``k`` truncated-geometric in ``recency_rate``.
    """
    if len(buf) < batch_size:
        raise InsufficientDataError(
            f"buffer holds {len(buf)} transitions, minibatch needs {batch_size}"
        )
    last_start = len(buf) - batch_size
    offset = sample_truncated_geometric(recency_rate, last_start, rng)
    return buf.window(last_start - offset, batch_size)


def buffer_sample_uniform(
    buf: ReplayBuffer, batch_size: int, rng: np.random.Generator
) -> list[Transition]:
    """Draw ``batch_size`` distinct transitions uniformly, in buffer order."""
    if len(buf) < batch_size:
        raise InsufficientDataError(
            f"buffer holds {len(buf)} transitions, minibatch needs {batch_size}"
        )
    idx = np.sort(rng.choice(len(buf), size=batch_size, replace=False))
    return [buf[int(i)] for i in idx]


@dataclass
class Task:
    """One allocation problem over an ordered subset of the entity universe."""

    id: int
    entities: np.ndarray
    buffer: ReplayBuffer
    score: float = 1.0
    cursor: int = 1
    # environment carry between rollout chunks, e.g. drifted portfolio weights
    carry: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        self.entities = np.asarray(self.entities, dtype=np.int64)
        if len(np.unique(self.entities)) != len(self.entities):
            raise DomainError(f"task {self.id} has repeated entities")
        if self.score < 0:
            raise DomainError(f"task {self.id} has negative score {self.score}")

    @property
    def size(self) -> int:
        return len(self.entities)


def stack_states(transitions: Sequence[Transition]) -> np.ndarray:
    return np.stack([tr.state for tr in transitions])
