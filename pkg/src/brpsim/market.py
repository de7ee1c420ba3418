"""Per-ISP market data: loading, validation, writing and synthetic series."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

ISP_PER_DAY = 96
ISP_PER_HOUR = 4
DELTA_T = 0.25  # hours per ISP

VALID_STATES = (-1, 0, 1, 2)
MARKET_HEADER = ("isp", "lambda_da", "lambda_up", "lambda_down", "reg_state")


class MarketDataError(ValueError):
    """Malformed or inconsistent market data."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


def _frozen(a, dtype) -> np.ndarray:
    arr = np.array(a, dtype=dtype, copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class MarketSeries:
    """DA price, regulation prices (EUR/MWh) and regulation state per ISP."""

    lambda_da: np.ndarray
    lambda_up: np.ndarray
    lambda_down: np.ndarray
    reg_state: np.ndarray
    isp_index: np.ndarray = field(default=None)

    def __post_init__(self):
        n = len(self.lambda_da)
        for name in ("lambda_da", "lambda_up", "lambda_down"):
            object.__setattr__(self, name, _frozen(getattr(self, name), float))
        object.__setattr__(self, "reg_state", _frozen(self.reg_state, np.int64))
        if self.isp_index is None:
            object.__setattr__(self, "isp_index", _frozen(np.arange(n), np.int64))
        else:
            object.__setattr__(self, "isp_index", _frozen(self.isp_index, np.int64))

        lengths = {len(self.lambda_da), len(self.lambda_up), len(self.lambda_down),
                   len(self.reg_state), len(self.isp_index)}
        if len(lengths) != 1:
            raise MarketDataError(f"series lengths differ: {sorted(lengths)}")
        if n == 0 or n % ISP_PER_DAY:
            raise MarketDataError(f"series length {n} is not a positive multiple of {ISP_PER_DAY}")
        if not np.array_equal(self.isp_index, np.arange(n)):
            raise MarketDataError("isp index must run 0..n-1 without gaps")
        bad = ~np.isin(self.reg_state, VALID_STATES)
        if bad.any():
            i = int(np.flatnonzero(bad)[0])
            raise MarketDataError(f"isp {i}: reg_state {self.reg_state[i]} not in {VALID_STATES}")
        for name in ("lambda_da", "lambda_up", "lambda_down"):
            if not np.isfinite(getattr(self, name)).all():
                raise MarketDataError(f"{name} contains non-finite values")
        hourly = self.lambda_da.reshape(-1, ISP_PER_HOUR)
        uneven = (hourly != hourly[:, :1]).any(axis=1)
        if uneven.any():
            h = int(np.flatnonzero(uneven)[0])
            raise MarketDataError(f"lambda_da not constant within hour {h} (isps {4 * h}..{4 * h + 3})")

    def __len__(self) -> int:
        return len(self.lambda_da)

    @property
    def n_days(self) -> int:
        return len(self) // ISP_PER_DAY

    def day(self, d: int) -> "MarketSeries":
        sl = slice(d * ISP_PER_DAY, (d + 1) * ISP_PER_DAY)
        return MarketSeries(self.lambda_da[sl], self.lambda_up[sl], self.lambda_down[sl],
                            self.reg_state[sl])

    def single_price(self) -> np.ndarray:
        """Price a single-price settlement would apply at each ISP (simplified mid rule)."""
        mid = 0.5 * (self.lambda_up + self.lambda_down)
        return np.where(self.reg_state == 1, self.lambda_up,
                        np.where(self.reg_state == -1, self.lambda_down, mid))


def expand_hourly(hourly: Sequence[float]) -> np.ndarray:
    """Repeat hourly DA prices onto ISP resolution."""
    return np.repeat(np.asarray(hourly, dtype=float), ISP_PER_HOUR)


def load_market_data(path) -> MarketSeries:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(path)
    cols: list[list] = [[], [], [], [], []]
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(h.strip() for h in header) != MARKET_HEADER:
            raise MarketDataError(f"expected header {','.join(MARKET_HEADER)}, got {header}", line=1)
        for row in reader:
            line = reader.line_num
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(MARKET_HEADER):
                raise MarketDataError(f"expected {len(MARKET_HEADER)} fields, got {len(row)}", line=line)
            try:
                isp = int(row[0])
                prices = [float(row[k]) for k in (1, 2, 3)]
                state = int(row[4])
            except ValueError as exc:
                raise MarketDataError(f"cannot parse row {row}: {exc}", line=line) from None
            if state not in VALID_STATES:
                raise MarketDataError(f"isp {isp}: reg_state {state} not in {VALID_STATES}", line=line)
            if isp != len(cols[0]):
                raise MarketDataError(f"isp {isp} out of sequence (expected {len(cols[0])})", line=line)
            cols[0].append(isp)
            for k, p in enumerate(prices, start=1):
                cols[k].append(p)
            cols[4].append(state)
    return MarketSeries(lambda_da=cols[1], lambda_up=cols[2], lambda_down=cols[3],
                        reg_state=cols[4], isp_index=cols[0])


def write_market_data(series: MarketSeries, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(MARKET_HEADER)
        for i in range(len(series)):
            # repr() keeps the shortest string that round-trips the float exactly
            w.writerow([i, repr(float(series.lambda_da[i])), repr(float(series.lambda_up[i])),
                        repr(float(series.lambda_down[i])), int(series.reg_state[i])])
    return path


# -- synthetic series ---------------------------------------------------------

@dataclass(frozen=True)
class Spike:
    """Forced regulation state and price at a set of ISPs."""

    isps: tuple
    state: int
    lambda_up: float | None = None
    lambda_down: float | None = None

    @classmethod
    def from_dict(cls, d: dict) -> "Spike":
        return cls(isps=tuple(int(i) for i in d["isps"]), state=int(d["state"]),
                   lambda_up=d.get("lambda_up"), lambda_down=d.get("lambda_down"))


# Hourly DA shape in EUR/MWh: cheap early morning, morning and evening peaks.
_DA_SHAPE = np.array([62, 58, 52, 46, 44, 48, 60, 78, 86, 80, 70, 62,
                      58, 56, 60, 68, 80, 96, 104, 98, 88, 78, 70, 66], dtype=float)


def baseline_prices(days: int, seed: int, up_margin: float = 10.0,
                    down_margin: float = 60.0, day_sigma: float = 8.0):
    """Smooth daily-periodic DA price plus fixed regulation margins, state 0 everywhere."""
    rng = np.random.default_rng(seed)
    level = rng.normal(0.0, day_sigma, size=days)
    hourly = (_DA_SHAPE[None, :] + level[:, None]).ravel()
    da = expand_hourly(np.round(hourly, 2))
    return (da, np.round(da + up_margin, 2), np.round(da - down_margin, 2),
            np.zeros(da.size, dtype=np.int64))


def synthesize_stress_series(days: int, spikes: Iterable = (), seed: int = 0,
                             up_margin: float = 10.0, down_margin: float = 60.0) -> MarketSeries:
    """Baseline prices with regulation-state spikes pasted at chosen ISPs.

    Spikes may be :class:`Spike` instances or dicts with keys ``isps``, ``state``,
    ``lambda_up`` and ``lambda_down``.
    """
    da, up, down, state = baseline_prices(days, seed, up_margin, down_margin)
    n = da.size
    for sp in spikes:
        if isinstance(sp, dict):
            sp = Spike.from_dict(sp)
        if sp.state not in VALID_STATES:
            raise MarketDataError(f"spike state {sp.state} not in {VALID_STATES}")
        idx = np.asarray(sp.isps, dtype=np.int64)
        if idx.size and (idx.min() < 0 or idx.max() >= n):
            raise MarketDataError(f"spike isp out of range 0..{n - 1}: {sorted(sp.isps)}")
        state[idx] = sp.state
        if sp.lambda_up is not None:
            up[idx] = sp.lambda_up
        if sp.lambda_down is not None:
            down[idx] = sp.lambda_down
    return MarketSeries(da, up, down, state)


def synthesize_market(days: int, seed: int = 0, p_short: float = 0.18, p_long: float = 0.18,
                      p_both: float = 0.04, persistence: float = 0.7) -> MarketSeries:
    """Random year-style series: Markov regulation states with heavy-tailed imbalance prices.

    Short ISPs carry an upward price above DA, long ISPs a downward price that is
    occasionally deeply negative. Used for long runs and benchmarks.
    """
    rng = np.random.default_rng(seed)
    da, up, down, _ = baseline_prices(days, seed, up_margin=10.0, down_margin=60.0)
    n = da.size
    p_bal = 1.0 - p_short - p_long - p_both
    probs = np.array([p_long, p_bal, p_short, p_both])
    states = np.array([-1, 0, 1, 2])
    draws = rng.choice(4, size=n, p=probs)
    keep = rng.random(n) < persistence
    state = np.empty(n, dtype=np.int64)
    cur = 1
    for i in range(n):
        if i == 0 or not keep[i]:
            cur = draws[i]
        state[i] = states[cur]
    tail = rng.standard_exponential(n)
    up = np.where(np.isin(state, (1, 2)), da + 40.0 + 60.0 * tail, up)
    down_long = da - 50.0 - 120.0 * tail
    down = np.where(np.isin(state, (-1, 2)), down_long, down)
    return MarketSeries(da, np.round(up, 2), np.round(down, 2), state)
