"""Prioritized multi-task policy-gradient training.

One loop iteration: draw a task from the sampler, take a minibatch from its
replay buffer, ascend the IS-weighted mean minibatch reward, re-score the
task from the minibatch allocations, then roll that task's environment
forward a chunk of steps under the current policy (plus exploration noise),
storing the transitions in its buffer only.

Environments are duck-typed. They provide ``episode_length``,
``minibatch_sampling`` ("geometric" or "uniform"), ``reset(task)``,
``observe(task, n, period)``, ``step(task, n, state, action, rng, period)``,
``objective(task, transitions)`` and ``periods(period)``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import policy as pol
from .core import (
    ReplayBuffer,
    Task,
    Transition,
    buffer_sample_geometric,
    buffer_sample_uniform,
    stack_states,
)
from .envs.portfolio import annualized_return, scorer_deviation
from .errors import ConfigError, InsufficientDataError, NumericError
from .sampler import SamplerState, TaskSampler

log = logging.getLogger(__name__)

MODES = ("STL", "MTL-uniform", "P-MTL")


@dataclass
class TrainerConfig:
    mode: str = "P-MTL"
    learning_rate: float = 0.5
    minibatch_size: int = 50
    rollout_chunk: int = 50
    total_steps: int = 1500
    discount: float = 0.99
    seed: int = 0
    exploration_rate: float = 0.05
    recency_rate: float = 0.01
    epoch_steps: int = 0
    buffer_capacity: int = 0  # 0: one episode
    scorer: str = "max"
    backend: str = ""  # "": pick from PIMTL_DISABLE_NUMBA

    def validate(self, n_tasks: int) -> None:
        if self.mode not in MODES:
            raise ConfigError(f"unknown mode {self.mode!r}; choose from {', '.join(MODES)}")
        if self.mode == "STL" and n_tasks != 1:
            raise ConfigError(f"STL mode trains exactly one task, got {n_tasks}")
        if self.minibatch_size < 1 or self.rollout_chunk < 0 or self.total_steps < 0:
            raise ConfigError("minibatch_size >= 1, rollout_chunk >= 0 and total_steps >= 0 required")
        if not 0.0 <= self.exploration_rate <= 1.0:
            raise ConfigError(f"exploration_rate must lie in [0, 1], got {self.exploration_rate}")


@dataclass
class StepRecord:
    step: int
    task_id: int
    batch_score: float
    is_weight: float
    objective: float
    grad_norm: float


@dataclass
class EpochRecord:
    epoch: int
    task_id: int
    train_reward: float
    test_reward: float
    annualized_return: float


@dataclass
class TrainingMetrics:
    steps: list[StepRecord] = field(default_factory=list)
    epochs: list[EpochRecord] = field(default_factory=list)


def explore(alloc: np.ndarray, rate: float, rng: np.random.Generator) -> np.ndarray:
    """Mix the policy allocation with a flat-Dirichlet draw."""
    if rate <= 0:
        return alloc
    noise = rng.dirichlet(np.ones(alloc.size))
    a = (1.0 - rate) * alloc + rate * noise
    return a / a.sum()


def policy_gradient_step(params: pol.PolicyParams, minibatch, reward_fn, lr: float, is_weight: float,
                         backend: str | None = None) -> pol.PolicyParams:
    """One ascent step on the IS-weighted mean minibatch reward."""
    res = pol.value_and_grad(params, minibatch, reward_fn, backend)
    return params.step(res.gradient, lr * is_weight)


def rollout(params, task: Task, env, start: int, stop: int, rng, exploration_rate: float,
            backend: str | None = None) -> int:
    """Run cursors ``start..stop`` (inclusive) of ``task``, storing transitions."""
    if start == 1 or task.carry is None:
        env.reset(task)
    n = start
    for n in range(start, stop + 1):
        state = env.observe(task, n)
        action = explore(pol.forward(params, state, backend), exploration_rate, rng)
        reward, next_state = env.step(task, n, state, action, rng)
        task.buffer.add(Transition(state, action, reward, next_state, n))
    return n


def sample_minibatch(env, task: Task, cfg: TrainerConfig, rng) -> list[Transition]:
    if env.minibatch_sampling == "geometric":
        return buffer_sample_geometric(task.buffer, cfg.minibatch_size, cfg.recency_rate, rng)
    return buffer_sample_uniform(task.buffer, cfg.minibatch_size, rng)


def train(
    cfg: TrainerConfig,
    tasks: list[Task],
    env,
    params: pol.PolicyParams,
    sampler: SamplerState | None = None,
    on_epoch: Callable[[int, pol.PolicyParams], list[EpochRecord]] | None = None,
) -> tuple[pol.PolicyParams, TrainingMetrics]:
    """Train one shared policy on ``tasks``; returns final params and metrics."""
    if not tasks:
        raise ConfigError("need at least one task")
    cfg.validate(len(tasks))
    backend = cfg.backend or None
    if sampler is None:
        sampler = SamplerState.initial(len(tasks))
    if sampler.n_tasks != len(tasks):
        raise ConfigError(f"sampler has {sampler.n_tasks} scores for {len(tasks)} tasks")
    if cfg.mode == "MTL-uniform":
        sampler.priority_exponent = 0.0
    ts = TaskSampler(sampler)

    seeds = np.random.SeedSequence(cfg.seed).spawn(3)
    task_rng, batch_rng, explore_rng = (np.random.default_rng(s) for s in seeds)
    N = env.episode_length
    capacity = cfg.buffer_capacity or N
    if cfg.minibatch_size > N:
        raise InsufficientDataError(f"minibatch of {cfg.minibatch_size} exceeds episode length {N}")

    # warm-up: one full episode per task under the initial policy
    for i, task in enumerate(tasks):
        task.buffer = ReplayBuffer(capacity)
        task.carry = None
        task.score = float(sampler.scores[i])
        rollout(params, task, env, 1, N, explore_rng, cfg.exploration_rate, backend)
        task.cursor = 1

    metrics = TrainingMetrics()
    for step in range(cfg.total_steps):
        t = ts.sample(task_rng)
        task = tasks[t]
        batch = sample_minibatch(env, task, cfg, batch_rng)
        w_t = float(ts.w[t])
        try:
            res = pol.value_and_grad(params, stack_states(batch), env.objective(task, batch), backend)
            params = params.step(res.gradient, cfg.learning_rate * w_t)
        except NumericError as exc:
            raise NumericError(f"step {step}: {exc}") from exc
        score = scorer_deviation(res.allocations, reduce=cfg.scorer)
        ts.update(t, score)
        task.score = float(ts.state.scores[t])

        stop = min(task.cursor + cfg.rollout_chunk, N)
        n = rollout(params, task, env, task.cursor, stop, explore_rng, cfg.exploration_rate, backend)
        task.cursor = n + 1 if n < N else 1

        metrics.steps.append(StepRecord(step, task.id, score, w_t, res.objective, float(res.sample_grad_norms.max())))
        if on_epoch is not None and cfg.epoch_steps and (step + 1) % cfg.epoch_steps == 0:
            metrics.epochs.extend(on_epoch((step + 1) // cfg.epoch_steps, params))
    return params, metrics


@dataclass
class EvalResult:
    task_id: int
    mean_reward: float
    annualized_return: float
    rewards: np.ndarray
    allocations: np.ndarray


def evaluate_task(params, task: Task, env, period: str = "test", backend: str | None = None,
                  policy_fn=None) -> EvalResult:
    """Deterministic rollout over ``period`` without exploration or updates.

    ``policy_fn(state) -> allocation`` overrides the network (e.g. for the
    equal-weight benchmark).
    """
    cursors = env.periods(period)
    if len(cursors) == 0:
        raise InsufficientDataError(f"no {period} data to evaluate on")
    probe = Task(task.id, task.entities, ReplayBuffer(1))
    env.reset(probe)
    rewards, allocs = [], []
    for n in cursors:
        state = env.observe(probe, n, period)
        a = policy_fn(state) if policy_fn is not None else pol.forward(params, state, backend)
        r, _ = env.step(probe, n, state, a, None, period)
        rewards.append(r)
        allocs.append(a)
    rewards = np.array(rewards)
    mean = float(rewards.mean())
    return EvalResult(task.id, mean, annualized_return(mean), rewards, np.array(allocs))


def evaluate(params, tasks: list[Task], env, period: str = "test", backend: str | None = None,
             policy_fn=None) -> list[EvalResult]:
    return [evaluate_task(params, task, env, period, backend, policy_fn) for task in tasks]
