"""Single-task vs multi-task portfolio training on a time split.

Per seed: build (or load) a price panel, draw training tasks from the
training universe and out-of-sample tasks from held-out instruments, then
train each condition from the same initial parameters:

* ``STL``: one policy per evaluation task, trained on that task alone;
* ``MTL-uniform-T{T}`` / ``P-MTL-T{T}``: one shared policy on the first ``T``
  tasks with uniform / prioritized task sampling.

Every condition gets ``steps_per_task`` updates per task per epoch and is
evaluated on the held-out period after each epoch.
"""

from __future__ import annotations

import dataclasses
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import stats

from .. import policy as pol
from ..core import ReplayBuffer, Task, uniform_allocation
from ..envs.portfolio import PortfolioConfig, PortfolioEnv, make_tasks
from ..envs.prices import PriceSeries, generate_synthetic_prices, load_prices
from ..errors import ConfigError, DataError
from ..sampler import SamplerState
from ..trainer import EpochRecord, StepRecord, evaluate_task, train
from .config import ExperimentConfig, dump_config
from .io import EPOCH_COLUMNS, STEP_COLUMNS, summarize, write_csv, write_json

MODE_ALIASES = {"stl": "STL", "mtl": "MTL-uniform", "mtl-uniform": "MTL-uniform", "p-mtl": "P-MTL", "pmtl": "P-MTL"}


def canonical_mode(mode: str) -> str:
    key = mode.strip()
    if key in ("STL", "MTL-uniform", "P-MTL"):
        return key
    try:
        return MODE_ALIASES[key.lower()]
    except KeyError:
        raise ConfigError(f"unknown mode {mode!r}") from None


@dataclass
class RunSpec:
    label: str
    mode: str
    n_tasks: int


def run_specs(cfg: ExperimentConfig) -> list[RunSpec]:
    pc = cfg.portfolio
    specs = []
    for cond in pc.conditions:
        mode = canonical_mode(cond)
        if mode == "STL":
            specs.append(RunSpec("STL", "STL", 1))
        else:
            specs.extend(RunSpec(f"{mode}-T{T}", mode, T) for T in pc.task_counts)
    if not specs:
        raise ConfigError("no conditions to run")
    return specs


@dataclass
class RunOutput:
    seed: int
    label: str
    task_id: int | None  # STL runs are per task
    steps: list[StepRecord]
    epochs: list[EpochRecord]
    params: pol.PolicyParams


@dataclass
class SeedResult:
    seed: int
    runs: list[RunOutput] = field(default_factory=list)
    final_test: dict[str, dict[int, float]] = field(default_factory=dict)
    transfer: list[dict] = field(default_factory=list)
    rollout: list[dict] = field(default_factory=list)


def build_series(cfg: ExperimentConfig, seed: int) -> PriceSeries:
    pc = cfg.portfolio
    need = pc.universe + pc.held_out
    if pc.data:
        series = load_prices(pc.data)
        if series.n_instruments < need:
            raise DataError(f"{pc.data} has {series.n_instruments} instruments, need {need}")
        order = np.random.default_rng([seed, 11]).permutation(series.n_instruments)[:need]
        return series.select(np.sort(order))
    return generate_synthetic_prices(need, pc.n_periods, np.random.default_rng([seed, 10]), cfg.prices)


def build_env(cfg: ExperimentConfig, series: PriceSeries) -> PortfolioEnv:
    pc = cfg.portfolio
    pcfg = PortfolioConfig(pc.window, pc.commission_rate, pc.universe, pc.task_size)
    split = int(round(series.n_periods * (1.0 - pc.test_fraction)))
    return PortfolioEnv(series, pcfg, split)


def fresh(tasks: list[Task]) -> list[Task]:
    """Copies with empty buffers and positions 0..T-1 kept as ids."""
    return [Task(t.id, t.entities.copy(), ReplayBuffer(1)) for t in tasks]


def initial_params(cfg: ExperimentConfig, seed: int) -> pol.PolicyParams:
    p = cfg.policy
    return pol.init_near_zero(
        p.hidden_size, PortfolioEnv.feature_width, p.init_scale,
        np.random.default_rng([seed, 20]), p.input_offset, p.input_scale,
    )


def _train_one(cfg, seed, env, tasks, mode, eval_tasks, backend) -> tuple[pol.PolicyParams, list, list]:
    pc = cfg.portfolio
    T = len(tasks)
    tcfg = dataclasses.replace(
        cfg.trainer, mode=mode, seed=seed, scorer=pc.scorer,
        total_steps=pc.steps_per_task * T * pc.epochs, epoch_steps=pc.steps_per_task * T,
    )
    sampler = SamplerState.initial(
        T, priority_exponent=cfg.sampler.priority_exponent,
        is_exponent=cfg.sampler.is_exponent, smoothing=cfg.sampler.smoothing,
    )

    def on_epoch(epoch, params):
        out = []
        for task in eval_tasks:
            test = evaluate_task(params, task, env, "test", backend)
            tr = evaluate_task(params, task, env, "train", backend)
            out.append(EpochRecord(epoch, task.id, tr.mean_reward, test.mean_reward, test.annualized_return))
        return out

    params, metrics = train(tcfg, tasks, env, initial_params(cfg, seed), sampler, on_epoch)
    return params, metrics.steps, metrics.epochs


def run_seed(cfg: ExperimentConfig, seed: int) -> SeedResult:
    pc = cfg.portfolio
    backend = cfg.trainer.backend or None
    series = build_series(cfg, seed)
    env = build_env(cfg, series)
    specs = run_specs(cfg)
    max_t = max(pc.task_counts, default=1)
    task_rng = np.random.default_rng([seed, 30])
    all_tasks = make_tasks(pc.universe, pc.task_size, max_t, task_rng)
    eval_tasks = all_tasks[: min(pc.eval_tasks, max_t)]
    oos_pool = np.arange(pc.universe, pc.universe + pc.held_out)
    oos_tasks = (
        make_tasks(pc.universe, pc.task_size, pc.oos_tasks, task_rng, entity_pool=oos_pool)
        if pc.oos_tasks and pc.held_out >= pc.task_size else []
    )

    result = SeedResult(seed)
    policies: dict[str, list[pol.PolicyParams]] = {}
    for spec in specs:
        result.final_test[spec.label] = {}
        if spec.mode == "STL":
            for task in eval_tasks:
                (one,) = fresh([task])
                params, steps, epochs = _train_one(cfg, seed, env, [one], "STL", [task], backend)
                result.runs.append(RunOutput(seed, spec.label, task.id, steps, epochs, params))
                policies.setdefault(spec.label, []).append(params)
                result.final_test[spec.label][task.id] = epochs[-1].test_reward if epochs else float("nan")
        else:
            tasks = fresh(all_tasks[: spec.n_tasks])
            params, steps, epochs = _train_one(cfg, seed, env, tasks, spec.mode, eval_tasks, backend)
            result.runs.append(RunOutput(seed, spec.label, None, steps, epochs, params))
            policies[spec.label] = [params]
            last = max((e.epoch for e in epochs), default=0)
            for e in epochs:
                if e.epoch == last:
                    result.final_test[spec.label][e.task_id] = e.test_reward

    crp = lambda state: uniform_allocation(len(state))  # noqa: E731
    for task in oos_tasks:
        base = evaluate_task(None, task, env, "test", policy_fn=crp)
        for label, plist in policies.items():
            rewards = [evaluate_task(p, task, env, "test", backend).mean_reward for p in plist]
            r = float(np.mean(rewards))
            result.transfer.append(dict(seed=seed, condition=label, task_id=task.id, test_reward=r,
                                        crp_reward=base.mean_reward, gain_over_crp=r - base.mean_reward))

    if eval_tasks:
        task = eval_tasks[0]
        dates = [series.dates[p] for p in env.period_range("test")]
        traces = {"EqualCRP": evaluate_task(None, task, env, "test", policy_fn=crp)}
        for label, plist in policies.items():
            traces[label] = evaluate_task(plist[0], task, env, "test", backend)
        for label, ev in traces.items():
            value = np.exp(np.cumsum(ev.rewards))
            for k, date in enumerate(dates):
                row = dict(seed=seed, condition=label, task_id=task.id, date=date, value=float(value[k]))
                row.update({f"alloc_{i}": float(a) for i, a in enumerate(ev.allocations[k])})
                result.rollout.append(row)
    return result


def run_file_stem(run: RunOutput) -> str:
    stem = f"{run.label}_seed{run.seed}"
    return stem if run.task_id is None else f"{stem}_task{run.task_id}"


def _seed_means(results: list[SeedResult], label: str, task_ids=None) -> np.ndarray:
    out = []
    for res in results:
        d = res.final_test.get(label, {})
        keys = sorted(d) if task_ids is None else [k for k in sorted(d) if k in task_ids]
        if keys:
            out.append(np.mean([d[k] for k in keys]))
    return np.array(out)


def compare(results: list[SeedResult], better: str, worse: str) -> dict | None:
    """One-sided paired t-test over seeds that ``better`` beats ``worse``."""
    pairs = []
    for res in results:
        a, b = res.final_test.get(better), res.final_test.get(worse)
        if not a or not b:
            continue
        common = sorted(set(a) & set(b))
        if common:
            pairs.append((np.mean([a[k] for k in common]), np.mean([b[k] for k in common])))
    if len(pairs) < 2:
        return None
    x, y = np.array(pairs).T
    diff = x - y
    if np.all(diff == diff[0]):
        p = 0.0 if diff[0] > 0 else 1.0  # degenerate: zero variance
    else:
        p = float(stats.ttest_rel(x, y, alternative="greater").pvalue)
    return {"better": better, "worse": worse, "n_seeds": len(pairs), "mean_difference": float(diff.mean()),
            "p_value": p}


def score_grad_correlation(runs: list[RunOutput]) -> float:
    """Mean over runs of the Spearman correlation of batch score and gradient norm."""
    vals = []
    for run in runs:
        s = np.array([r.batch_score for r in run.steps])
        g = np.array([r.grad_norm for r in run.steps])
        if len(s) > 2 and np.ptp(s) > 0 and np.ptp(g) > 0:
            vals.append(stats.spearmanr(s, g).statistic)
    return float(np.mean(vals)) if vals else float("nan")


def _seed_list(cfg: ExperimentConfig) -> list[int]:
    return list(range(cfg.seed, cfg.seed + cfg.seeds))


def run_all_seeds(cfg: ExperimentConfig) -> list[SeedResult]:
    seeds = _seed_list(cfg)
    if cfg.workers > 1 and len(seeds) > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            return list(pool.map(run_seed, [cfg] * len(seeds), seeds))
    return [run_seed(cfg, s) for s in seeds]


def write_outputs(cfg: ExperimentConfig, results: list[SeedResult], out) -> dict:
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.txt").write_text(dump_config(cfg), encoding="utf-8")
    labels = [s.label for s in run_specs(cfg)]
    epoch_rows = []
    for res in results:
        for run in res.runs:
            stem = run_file_stem(run)
            write_csv(out / "steps" / f"{stem}.csv", STEP_COLUMNS, run.steps)
            pol.save_params(run.params, out / "checkpoints" / f"{stem}.json")
            for e in run.epochs:
                epoch_rows.append(dict(seed=res.seed, condition=run.label, **dataclasses.asdict(e)))
    write_csv(out / "epochs.csv", EPOCH_COLUMNS, epoch_rows)

    summary = {label: summarize(_seed_means(results, label)) for label in labels}
    write_json(out / "summary.json", summary)

    comparisons = []
    others = [lab for lab in labels if lab != "STL"]
    if "STL" in labels:
        comparisons += [c for lab in others if (c := compare(results, lab, "STL"))]
    for mode in ("MTL-uniform", "P-MTL"):
        ranked = sorted((s for s in run_specs(cfg) if s.mode == mode), key=lambda s: s.n_tasks)
        for small, big in zip(ranked, ranked[1:]):
            if c := compare(results, big.label, small.label):
                comparisons.append(c)
    correlations = {
        lab: score_grad_correlation([r for res in results for r in res.runs if r.label == lab]) for lab in labels
    }
    write_json(out / "comparisons.json", {"tests": comparisons, "score_grad_spearman": correlations})

    if "STL" in labels:
        gain_rows = []
        for res in results:
            base = res.final_test.get("STL", {})
            for lab in others:
                for tid, r in sorted(res.final_test.get(lab, {}).items()):
                    if tid in base:
                        gain_rows.append(dict(seed=res.seed, condition=lab, task_id=tid, test_reward=r,
                                              stl_test_reward=base[tid], gain=r - base[tid]))
        write_csv(out / "gain.csv", ("seed", "condition", "task_id", "test_reward", "stl_test_reward", "gain"),
                  gain_rows)
    transfer = [row for res in results for row in res.transfer]
    write_csv(out / "transfer.csv",
              ("seed", "condition", "task_id", "test_reward", "crp_reward", "gain_over_crp"), transfer)
    rollout_rows = results[0].rollout if results else []
    if rollout_rows:
        cols = list(rollout_rows[0])
        write_csv(out / "rollout.csv", cols, rollout_rows)
    return {"summary": summary, "comparisons": comparisons, "score_grad_spearman": correlations}


def run_portfolio(cfg: ExperimentConfig, out=None) -> dict:
    """Run every seed and write all outputs under ``out`` (default ``cfg.out``)."""
    results = run_all_seeds(cfg)
    return write_outputs(cfg, results, out or cfg.out)
