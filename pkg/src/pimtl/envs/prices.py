"""Daily close/high/low price panels: CSV ingestion and a synthetic generator."""

from __future__ import annotations

import csv
import datetime as dt
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..errors import DomainError, IngestionError

CSV_COLUMNS = ("date", "symbol", "close", "high", "low")


@dataclass(frozen=True, eq=False)
class PriceSeries:
    """Prices indexed ``[period, instrument]``."""

    symbols: tuple[str, ...]
    dates: tuple[str, ...]
    close: np.ndarray
    high: np.ndarray
    low: np.ndarray

    def __post_init__(self):
        shape = (len(self.dates), len(self.symbols))
        for name in ("close", "high", "low"):
            arr = getattr(self, name)
            if arr.shape != shape:
                raise IngestionError(f"{name} has shape {arr.shape}, expected {shape}")
            if not np.all(np.isfinite(arr)) or np.any(arr <= 0):
                raise IngestionError(f"{name} prices must be finite and positive")
        if list(self.dates) != sorted(set(self.dates)):
            raise IngestionError("dates must be strictly increasing")
        bad = np.argwhere((self.low > self.close) | (self.close > self.high))
        if len(bad):
            n, i = bad[0]
            raise IngestionError(
                f"low <= close <= high violated for {self.symbols[i]} on {self.dates[n]}"
            )

    @property
    def n_periods(self) -> int:
        return len(self.dates)

    @property
    def n_instruments(self) -> int:
        return len(self.symbols)

    def select(self, instruments) -> "PriceSeries":
        idx = np.asarray(instruments)
        return PriceSeries(
            tuple(self.symbols[i] for i in idx), self.dates,
            self.close[:, idx], self.high[:, idx], self.low[:, idx],
        )


def load_prices(path) -> PriceSeries:
    """Read a long-format CSV with columns ``date,symbol,close,high,low``.

    Every symbol must have a row for every date that appears in the file.
    """
    path = Path(path)
    try:
        fh = path.open(newline="", encoding="utf-8")
    except OSError as exc:
        raise IngestionError(f"cannot open {path}: {exc}") from exc
    cells: dict[tuple[str, str], tuple[float, float, float]] = {}
    with fh:
        reader = csv.DictReader(fh)
        missing = [c for c in CSV_COLUMNS if c not in (reader.fieldnames or ())]
        if missing:
            raise IngestionError(f"{path}: missing column(s) {', '.join(missing)}")
        for lineno, row in enumerate(reader, start=2):
            date, sym = row["date"].strip(), row["symbol"].strip()
            try:
                dt.date.fromisoformat(date)
            except ValueError:
                raise IngestionError(f"{path}:{lineno}: bad date {date!r}") from None
            try:
                vals = tuple(float(row[c]) for c in ("close", "high", "low"))
            except (TypeError, ValueError):
                raise IngestionError(f"{path}:{lineno}: unparseable price for {sym} on {date}") from None
            if (date, sym) in cells:
                raise IngestionError(f"{path}:{lineno}: duplicate row for {sym} on {date}")
            close, high, low = vals
            if not (low <= close <= high):
                raise IngestionError(
                    f"{path}:{lineno}: low <= close <= high violated for {sym} on {date}"
                )
            cells[(date, sym)] = vals
    if not cells:
        raise IngestionError(f"{path}: no price rows")
    dates = sorted({d for d, _ in cells})
    symbols = sorted({s for _, s in cells})
    for sym in symbols:
        for date in dates:
            if (date, sym) not in cells:
                raise IngestionError(f"{path}: no price for symbol {sym} on {date} (incomplete coverage)")
    arr = np.array([[cells[(d, s)] for s in symbols] for d in dates])
    return PriceSeries(tuple(symbols), tuple(dates), arr[..., 0], arr[..., 1], arr[..., 2])


def save_prices(series: PriceSeries, path) -> None:
    """Write ``series`` in the format :func:`load_prices` reads (17 significant digits)."""
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(CSV_COLUMNS)
        for n, date in enumerate(series.dates):
            for i, sym in enumerate(series.symbols):
                w.writerow([date, sym] + [repr(float(a[n, i])) for a in (series.close, series.high, series.low)])


@dataclass(frozen=True)
class PriceRegime:
    """Hyper-parameters of the synthetic market.

    Log-returns are ``drift_i + loadings_i . f_t + vol_i * noise`` where the
    latent factors ``f_t`` follow a persistent AR(1) process; the persistence
    is what makes recent price moves informative about the next one.
    """

    n_factors: int = 3
    factor_persistence: float = 0.97
    factor_vol: float = 0.0015
    loading_scale: float = 1.0
    drift_mean: float = 0.0002
    drift_std: float = 0.0003
    vol_mean: float = 0.012
    vol_dispersion: float = 0.25
    range_vol: float = 0.006


def generate_synthetic_prices(
    n_instruments: int,
    n_periods: int,
    rng: np.random.Generator,
    regime: PriceRegime | None = None,
    start: str = "2010-01-04",
    initial_price: float = 100.0,
) -> PriceSeries:
    """Geometric random walk driven by shared latent trend factors."""
    if n_periods < 2:
        raise DomainError("need at least two periods")
    r = regime or PriceRegime()
    M, P, K = n_instruments, n_periods, r.n_factors
    drift = rng.normal(r.drift_mean, r.drift_std, size=M)
    vol = r.vol_mean * np.exp(r.vol_dispersion * rng.standard_normal(M))
    loadings = r.loading_scale * rng.standard_normal((M, K))
    f = np.zeros((P, K))
    if K:
        stationary = r.factor_vol / np.sqrt(max(1e-12, 1.0 - r.factor_persistence**2))
        f[0] = stationary * rng.standard_normal(K)
        shocks = r.factor_vol * rng.standard_normal((P, K))
        for n in range(1, P):
            f[n] = r.factor_persistence * f[n - 1] + shocks[n]
    eps = rng.standard_normal((P, M))
    log_ret = drift + f @ loadings.T + vol * eps
    log_ret[0] = 0.0
    close = initial_price * np.exp(np.cumsum(log_ret, axis=0))
    spread_hi = np.abs(r.range_vol * rng.standard_normal((P, M)))
    spread_lo = np.minimum(np.abs(r.range_vol * rng.standard_normal((P, M))), 0.5)
    high = close * (1.0 + spread_hi)
    low = close * (1.0 - spread_lo)
    dates = business_days(start, P)
    symbols = tuple(f"S{i:03d}" for i in range(M))
    return PriceSeries(symbols, dates, close, high, low)


def business_days(start: str, count: int) -> tuple[str, ...]:
    day = dt.date.fromisoformat(start)
    out = []
    while len(out) < count:
        if day.weekday() < 5:
            out.append(day.isoformat())
        day += dt.timedelta(days=1)
    return tuple(out)
