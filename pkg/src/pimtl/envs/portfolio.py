"""Portfolio allocation: weight drift, transaction-cost log returns, state
windows, the equal-weight benchmark and the task scorer.

Period indices are 0-based rows of a :class:`PriceSeries`. The state at the
start of period ``n`` uses prices up to ``n - 1``; the reward of period ``n``
uses the close ratio ``y_n = v_n / v_{n-1}``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..core import ReplayBuffer, Task, Transition, uniform_allocation
from ..errors import DimensionError, DomainError, InsufficientDataError
from .prices import PriceSeries

SMOOTH_ABS_DELTA = 1e-6


@dataclass(frozen=True)
class PortfolioConfig:
    window: int = 30
    commission_rate: float = 0.0025
    universe: int = 50
    task_size: int = 10

    def __post_init__(self):
        if not 0.0 <= self.commission_rate < 1.0:
            raise DomainError(f"commission rate must lie in [0, 1), got {self.commission_rate}")
        if self.window < 2:
            raise DomainError(f"window must be >= 2, got {self.window}")
        if not 1 <= self.task_size <= self.universe:
            raise DomainError(f"task size {self.task_size} not in [1, {self.universe}]")


def portfolio_weights_drift(a, y) -> np.ndarray:
    """End-of-period weights after prices move by ratios ``y``."""
    a = np.asarray(a, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if np.any(y <= 0):
        raise DomainError("price ratios must be positive")
    grown = a * y
    return grown / grown.sum(axis=-1, keepdims=True)


def cost_factor(w_prev, a, c: float):
    """Wealth kept after rebalancing: ``1 - c * sum |w_prev - a|``."""
    return 1.0 - c * np.abs(np.asarray(w_prev) - np.asarray(a)).sum(axis=-1)


def portfolio_reward(w_prev, a, y, c: float):
    """Log return of one period including the rebalancing cost."""
    mu = cost_factor(w_prev, a, c)
    if np.any(mu <= 0):
        raise DomainError(f"commission rate {c} too large for the requested turnover")
    growth = (np.asarray(a) * np.asarray(y)).sum(axis=-1)
    return np.log(mu * growth)


def portfolio_reward_gradient(w_prev, a, y, c: float, delta: float = SMOOTH_ABS_DELTA):
    """d reward / d a with ``|u|`` smoothed to ``sqrt(u^2 + delta^2)``."""
    w_prev, a, y = (np.asarray(v, dtype=np.float64) for v in (w_prev, a, y))
    diff = a - w_prev
    smooth = np.sqrt(diff * diff + delta * delta)
    mu = 1.0 - c * smooth.sum(axis=-1, keepdims=True)
    growth = (a * y).sum(axis=-1, keepdims=True)
    return y / growth - c * (diff / smooth) / mu


def scorer_deviation(allocations, m: int | None = None, reduce: str = "max") -> float:
    """Distance of minibatch allocations from equal weights.

    Per step the l-infinity distance to ``1/m``; reduced over the minibatch
    by ``max`` (default) or ``mean``.
    """
    alloc = np.atleast_2d(np.asarray(allocations, dtype=np.float64))
    if alloc.shape[0] == 0:
        raise DomainError("scorer needs a non-empty minibatch")
    m = alloc.shape[1] if m is None else m
    dev = np.abs(alloc - 1.0 / m).max(axis=1)
    if reduce == "max":
        return float(dev.max())
    if reduce == "mean":
        return float(dev.mean())
    raise DomainError(f"unknown scorer reduction {reduce!r}")


def portfolio_state(series: PriceSeries, task: Task | np.ndarray, n: int, w_prev, window: int) -> np.ndarray:
    """State matrix at the start of period ``n``.

    Row ``i``: ``(w_prev_i, close ratios, high ratios, low ratios)`` where each
    block holds ``v_k / close_{n-1}`` for ``k = n-window .. n-2``.
    """
    entities = task.entities if isinstance(task, Task) else np.asarray(task)
    if n - window < 0:
        raise InsufficientDataError(f"period {n} has fewer than {window} periods of history")
    if n - 1 >= series.n_periods:
        raise InsufficientDataError(f"period {n} is beyond the series ({series.n_periods} periods)")
    w_prev = np.asarray(w_prev, dtype=np.float64)
    if w_prev.shape != (len(entities),):
        raise DimensionError(f"previous weights shape {w_prev.shape} for {len(entities)} entities")
    ref = series.close[n - 1, entities]
    blocks = [
        (arr[n - window : n - 1, entities] / ref).T for arr in (series.close, series.high, series.low)
    ]
    return np.concatenate([w_prev[:, None]] + blocks, axis=1)


def price_ratios(series: PriceSeries, entities, n: int) -> np.ndarray:
    return series.close[n, entities] / series.close[n - 1, entities]


def make_tasks(universe: int, task_size: int, count: int, rng: np.random.Generator,
               capacity: int = 1, entity_pool=None) -> list[Task]:
    """``count`` tasks, each a uniformly random ``task_size``-subset.

    Indices come from ``range(universe)`` or, when given, from
    ``entity_pool`` (e.g. held-out instruments).
    """
    pool = np.arange(universe) if entity_pool is None else np.asarray(entity_pool)
    if task_size > len(pool):
        raise DomainError(f"task size {task_size} exceeds universe of {len(pool)}")
    tasks = []
    for t in range(count):
        ent = rng.choice(pool, size=task_size, replace=False)
        tasks.append(Task(t, ent, ReplayBuffer(capacity)))
    return tasks


class PortfolioEnv:
    """Trainer-facing portfolio environment over a time split of ``series``.

    Training periods are ``[window, split)``, test periods ``[split, end)``.
    Cursors count from 1 within a period: training cursor ``n`` is period
    ``window + n - 1``.
    """

    minibatch_sampling = "geometric"
    feature_width = 3

    def __init__(self, series: PriceSeries, config: PortfolioConfig, split: int):
        if not config.window < split < series.n_periods:
            raise InsufficientDataError(
                f"split {split} must lie strictly between window {config.window} "
                f"and series length {series.n_periods}"
            )
        self.series = series
        self.config = config
        self.split = split
        self.episode_length = split - config.window

    def period_range(self, period: str) -> range:
        """Absolute period indices of ``period`` ("train" or "test")."""
        if period == "train":
            return range(self.config.window, self.split)
        if period == "test":
            return range(self.split, self.series.n_periods)
        raise DomainError(f"unknown period {period!r}")

    def periods(self, period: str) -> range:
        """Cursor values ``1..len`` for ``period``."""
        return range(1, len(self.period_range(period)) + 1)

    def _period(self, cursor: int, period: str) -> int:
        return self.period_range(period).start + cursor - 1

    def reset(self, task: Task) -> None:
        task.carry = uniform_allocation(task.size)

    def observe(self, task: Task, n: int, period: str = "train") -> np.ndarray:
        return portfolio_state(self.series, task, self._period(n, period), task.carry, self.config.window)

    def step(self, task: Task, n: int, state, action, rng=None, period: str = "train"):
        p = self._period(n, period)
        y = price_ratios(self.series, task.entities, p)
        reward = float(portfolio_reward(task.carry, action, y, self.config.commission_rate))
        task.carry = portfolio_weights_drift(action, y)
        if p + 1 < self.series.n_periods:
            next_state = portfolio_state(self.series, task, p + 1, task.carry, self.config.window)
        else:
            next_state = np.concatenate([task.carry[:, None], state[:, 1:]], axis=1)
        return reward, next_state

    def transition_period(self, transition: Transition) -> int:
        return self._period(transition.time_index, "train")

    def objective(self, task: Task, transitions):
        c = self.config.commission_rate
        w_prev = np.stack([tr.state[:, 0] for tr in transitions])
        y = np.stack([price_ratios(self.series, task.entities, self.transition_period(tr)) for tr in transitions])

        def f(alloc):
            return portfolio_reward(w_prev, alloc, y, c), portfolio_reward_gradient(w_prev, alloc, y, c)

        return f


def equal_crp_rewards(series: PriceSeries, entities, periods, c: float) -> np.ndarray:
    """Per-period rewards of rebalancing to equal weights every period."""
    entities = np.asarray(entities)
    m = len(entities)
    u = uniform_allocation(m)
    w = u
    out = []
    for n in periods:
        y = price_ratios(series, entities, n)
        out.append(float(portfolio_reward(w, u, y, c)))
        w = portfolio_weights_drift(u, y)
    return np.array(out)


def annualized_return(mean_log_return: float, periods_per_year: int = 252) -> float:
    return float(np.expm1(periods_per_year * mean_log_return))
