"""Sample-efficiency experiment on the entropy-regularised allocation task.

For each entropy-weight spread ``eps`` and dataset size ``N``, LSPI is fitted
twice: on ``N`` real transitions, and on ``n_real_augmented`` real
transitions grown to ``N`` with permuted copies. Policies are scored by
regret against the exact optimal allocation on held-out states.

Within a seed, states, actions, noise and permutations are shared across
``eps`` and nested across ``N`` (common random numbers), so curves differ
only through the quantity being varied.
"""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import stats

from ..envs.synthetic import (
    SyntheticConfig,
    augment_dataset,
    make_action_set,
    regret,
    synthetic_optimal_allocation,
    synthetic_reward,
)
from ..errors import ConfigError
from ..lspi import Dataset, EntityFeatures, PooledFeatures, lspi
from .config import ExperimentConfig, SyntheticBoundConfig, dump_config
from .io import summarize, write_csv, write_json

CURVES = ("real", "augmented")


@dataclass
class RegretRow:
    seed: int
    epsilon: float
    n: int
    curve: str
    regret: float


def feature_map(cfg: SyntheticBoundConfig):
    if cfg.features == "entity":
        return EntityFeatures(cfg.m)
    if cfg.features == "pooled":
        return PooledFeatures(cfg.m)
    raise ConfigError(f"unknown synthetic feature map {cfg.features!r}")


def run_seed(cfg: SyntheticBoundConfig, seed: int) -> list[RegretRow]:
    m = cfg.m
    n_max = max(max(cfg.n_grid), cfg.gap_n)
    if cfg.n_real_augmented > min(min(cfg.n_grid), cfg.gap_n):
        raise ConfigError("n_real_augmented must not exceed the smallest N")
    actions = make_action_set(m, cfg.n_actions, cfg.action_seed)
    features = feature_map(cfg)

    data_rng = np.random.default_rng([seed, 0])
    x = data_rng.random((n_max, m))
    a = actions[data_rng.integers(0, len(actions), size=n_max)]
    noise = data_rng.normal(0.0, cfg.noise_std, size=n_max)
    x_next = data_rng.random((n_max, m))
    heldout = np.random.default_rng([seed, 2]).random((cfg.heldout_states, m))

    epsilons = sorted(set(cfg.curve_epsilons) | set(cfg.gap_epsilons))
    rows: list[RegretRow] = []
    for eps in epsilons:
        env = SyntheticConfig.with_spread(m, eps, cfg.beta_center, cfg.noise_std)
        r = synthetic_reward(x, a, env) + noise
        real = Dataset(x, a, r, x_next)
        # same permutation draws for every eps
        aug = augment_dataset(
            Dataset(x[: cfg.n_real_augmented], a[: cfg.n_real_augmented],
                    r[: cfg.n_real_augmented], x_next[: cfg.n_real_augmented]),
            n_max, np.random.default_rng([seed, 1]),
        )
        r_max = 1.0 + env.entropy_weights.max() * np.log(m) + 4 * cfg.noise_std
        v_max = r_max / (1.0 - cfg.discount)
        best = synthetic_reward(heldout, synthetic_optimal_allocation(heldout, env), env)
        grid = cfg.n_grid if eps in cfg.curve_epsilons else (cfg.gap_n,)
        for n in sorted(set(grid) | ({cfg.gap_n} if eps in cfg.gap_epsilons else set())):
            for curve, data in (("real", real), ("augmented", aug)):
                sub = Dataset(data.states[:n], data.actions[:n], data.rewards[:n], data.next_states[:n])
                fit = lspi(sub, features, actions, cfg.discount, cfg.lspi_iterations, v_max)
                rows.append(RegretRow(seed, float(eps), int(n), curve, regret(fit.policy, heldout, env, best)))
    return rows


def curve_table(rows: list[RegretRow]) -> dict[tuple[float, str], dict[int, np.ndarray]]:
    """``{(eps, curve): {N: regrets over seeds}}``."""
    table: dict[tuple[float, str], dict[int, list[float]]] = {}
    for row in rows:
        table.setdefault((row.epsilon, row.curve), {}).setdefault(row.n, []).append(row.regret)
    return {k: {n: np.array(v) for n, v in sorted(d.items())} for k, d in table.items()}


def gap_by_seed(rows: list[RegretRow], n: int) -> dict[float, np.ndarray]:
    """Augmented minus real regret at size ``n`` for each eps, one entry per seed."""
    by = {}
    for row in rows:
        if row.n == n:
            by.setdefault(row.epsilon, {}).setdefault(row.seed, {})[row.curve] = row.regret
    return {
        eps: np.array([d["augmented"] - d["real"] for _, d in sorted(seeds.items())])
        for eps, seeds in sorted(by.items())
    }


def run_rows(cfg: ExperimentConfig) -> list[RegretRow]:
    seeds = range(cfg.seed, cfg.seed + cfg.seeds)
    if cfg.workers > 1 and cfg.seeds > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            chunks = list(pool.map(run_seed, [cfg.synthetic] * cfg.seeds, seeds))
    else:
        chunks = [run_seed(cfg.synthetic, s) for s in seeds]
    return [row for chunk in chunks for row in chunk]


def bound_statistics(rows: list[RegretRow], cfg: SyntheticBoundConfig) -> dict:
    """Curve slope, augmented-vs-real agreement and gap growth in ``eps``."""
    table = curve_table(rows)
    out: dict = {"curves": {}, "gap": {}}
    for (eps, curve), by_n in sorted(table.items()):
        ns = sorted(by_n)
        means = [float(by_n[n].mean()) for n in ns]
        rho = float(stats.spearmanr(ns, means).statistic) if len(ns) > 2 else float("nan")
        out["curves"][f"{eps!r}/{curve}"] = {"n": ns, "mean_regret": means, "spearman_n": rho}
    gaps = gap_by_seed(rows, cfg.gap_n)
    for eps, g in gaps.items():
        se = float(g.std(ddof=1) / np.sqrt(g.size)) if g.size > 1 else float("nan")
        out["gap"][repr(eps)] = {"mean": float(g.mean()), "se": se, "n_seeds": int(g.size)}
    if len(gaps) > 2:
        eps_sorted = sorted(gaps)
        out["gap_spearman_eps"] = float(stats.spearmanr(eps_sorted, [gaps[e].mean() for e in eps_sorted]).statistic)
    return out


def run_synthetic_bound(cfg: ExperimentConfig, out=None) -> dict:
    """Run all seeds and write ``config.txt``, ``curves.csv``, ``gap.csv``,
    ``summary.json`` and ``bound.json`` under ``out``."""
    out = Path(out or cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    rows = run_rows(cfg)
    (out / "config.txt").write_text(dump_config(cfg), encoding="utf-8")
    write_csv(out / "curves.csv", ("seed", "epsilon", "n", "curve", "regret"), rows)
    gaps = gap_by_seed(rows, cfg.synthetic.gap_n)
    seeds = sorted({r.seed for r in rows})
    write_csv(out / "gap.csv", ("seed", "epsilon", "gap"),
              [dict(seed=s, epsilon=eps, gap=float(g[k])) for eps, g in gaps.items() for k, s in enumerate(seeds)])
    summary = {
        f"{curve}/eps={eps!r}/n={n}": summarize(vals)
        for (eps, curve), by_n in sorted(curve_table(rows).items()) for n, vals in by_n.items()
    }
    write_json(out / "summary.json", summary)
    bound = bound_statistics(rows, cfg.synthetic)
    write_json(out / "bound.json", bound)
    return {"summary": summary, "bound": bound, "rows": rows}
