"""Connection-point transport model per region, overload detection and DSO flags.

Flows are in MW, load-positive: baseload minus PV plus EV charging. A negative
flow is reverse flow towards the transmission grid.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .market import DELTA_T

LOADING_HEADER = ("isp", "region", "flow_mw", "loading", "scheduled_loading", "overload", "flagged")
FLAG_LEAD = 2


class GridError(ValueError):
    pass


@dataclass
class RegionConfig:
    region_id: str
    line_rating: float                  # MW
    baseload: np.ndarray                # MW per ISP
    pv: np.ndarray                      # MW per ISP
    groups: tuple = ()                  # ids of attached virtual-battery groups

    def __post_init__(self):
        self.baseload = np.asarray(self.baseload, dtype=float)
        self.pv = np.asarray(self.pv, dtype=float)
        self.groups = tuple(self.groups)
        if not self.line_rating > 0:
            raise GridError(f"region {self.region_id}: line rating must be positive")
        if self.baseload.shape != self.pv.shape or self.baseload.ndim != 1:
            raise GridError(f"region {self.region_id}: baseload and pv must be equal-length 1-d arrays")

    @property
    def horizon(self) -> int:
        return self.baseload.size

    def check_horizon(self, n: int) -> None:
        if self.horizon != n:
            raise GridError(f"region {self.region_id}: profiles cover {self.horizon} ISPs, need {n}")


@dataclass
class CongestionFlags:
    """``flags[t]`` is True when the DSO announced congestion for ISP ``t``."""

    region_id: str
    flags: np.ndarray
    lead: int = FLAG_LEAD
    made_at: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))


def connection_flow(region: RegionConfig, t, brp_energies) -> float | np.ndarray:
    """Flow at ISP ``t`` (or an index array) given kWh per attached group."""
    e = np.asarray(brp_energies, dtype=float)
    charging = e.sum(axis=0) if e.ndim > np.ndim(t) else e
    return region.baseload[t] - region.pv[t] + charging / DELTA_T / 1000.0


def loading(flow, rating: float):
    return np.abs(flow) / rating


def is_overload(load) -> np.ndarray | bool:
    # strictly above the rating; exactly 1.0 is still within limits
    return np.asarray(load) > 1.0


def _price_sign(state: int, lam_up: float, lam_down: float) -> float:
    if state == 1:
        p = lam_up
    elif state == -1:
        p = lam_down
    else:
        p = 0.5 * (lam_up + lam_down)
    return float(np.sign(p))


def worst_case_shift(e_da, cap, price_sign: float):
    """Per-ISP extra consumption (kWh) if every BRP chased the current price sign.

    A negative price rewards a shortage, so BRPs charge up to the power limit; a
    positive one rewards a surplus, so they stop charging.
    """
    e_da = np.asarray(e_da, dtype=float)
    cap = np.asarray(cap, dtype=float)
    if price_sign < 0:
        return np.clip(cap - e_da, 0.0, None)
    if price_sign > 0:
        return -np.clip(e_da, 0.0, None)
    return np.zeros_like(e_da)


def dso_congestion_forecast(region: RegionConfig, t: int, eprograms, market_state_at_t=None,
                            worst_case: bool = True, threshold: float = 1.0, caps=None):
    """Flags for ISPs ``t+1`` and ``t+2`` (truncated at the horizon end).

    ``eprograms`` is a [groups x horizon] array of scheduled kWh; ``caps`` the matching
    per-ISP purchase limits (kWh). ``market_state_at_t`` is ``(state, lam_up, lam_down)``
    observed at ``t``, or ``None`` when nothing is known yet (schedule only).
    Returns ``(isps, flags, projected_loading)``.
    """
    e = np.atleast_2d(np.asarray(eprograms, dtype=float))
    n = e.shape[1]
    isps = np.arange(t + 1, min(t + FLAG_LEAD, n - 1) + 1)
    if isps.size == 0:
        return isps, np.zeros(0, dtype=bool), np.zeros(0)
    sched = e[:, isps]
    if worst_case and market_state_at_t is not None:
        if caps is None:
            raise GridError("worst-case forecast needs the per-ISP purchase limits")
        sign = _price_sign(*market_state_at_t)
        sched = sched + worst_case_shift(sched, np.atleast_2d(caps)[:, isps], sign)
    proj = loading(connection_flow(region, isps, sched), region.line_rating)
    return isps, proj > threshold, proj


def forecast_flags(region: RegionConfig, eprograms, caps, states, lam_up, lam_down,
                   worst_case: bool = True, threshold: float = 1.0) -> CongestionFlags:
    """Flag series where ISP ``t`` is judged from the forecast made at ``t - 2``.

    The first two ISPs have no earlier forecast; they are judged on the schedule alone.
    """
    e = np.atleast_2d(np.asarray(eprograms, dtype=float))
    n = e.shape[1]
    region.check_horizon(n)
    flags = np.zeros(n, dtype=bool)
    made_at = np.full(n, -1, dtype=np.int64)
    if n:
        isps = np.arange(min(FLAG_LEAD, n))
        proj = loading(connection_flow(region, isps, e[:, isps]), region.line_rating)
        flags[isps] = proj > threshold
    for t in range(n - FLAG_LEAD):
        isps, f, _ = dso_congestion_forecast(region, t, e, (int(states[t]), lam_up[t], lam_down[t]),
                                             worst_case, threshold, caps)
        # the t+2 entry is the one announced with the full lead time
        flags[t + FLAG_LEAD] = f[-1]
        made_at[t + FLAG_LEAD] = t
    return CongestionFlags(region.region_id, flags, FLAG_LEAD, made_at)


@dataclass
class LoadingTrace:
    region_id: str
    isps: np.ndarray
    flow: np.ndarray
    loading: np.ndarray
    scheduled_loading: np.ndarray
    flagged: np.ndarray

    @property
    def overload(self) -> np.ndarray:
        return is_overload(self.loading)


def loading_trace(region: RegionConfig, e_rt, e_da, flags=None, isps=None) -> LoadingTrace:
    """Realised and scheduled loading from [groups x horizon] energy arrays."""
    e_rt = np.atleast_2d(np.asarray(e_rt, dtype=float))
    e_da = np.atleast_2d(np.asarray(e_da, dtype=float))
    n = e_rt.shape[1]
    region.check_horizon(n)
    t = np.arange(n)
    flow = connection_flow(region, t, e_rt) if e_rt.shape[0] else region.baseload - region.pv
    sflow = connection_flow(region, t, e_da) if e_da.shape[0] else region.baseload - region.pv
    flagged = np.zeros(n, dtype=bool) if flags is None else np.asarray(flags, dtype=bool)
    return LoadingTrace(region.region_id, t if isps is None else np.asarray(isps), flow,
                        loading(flow, region.line_rating), loading(sflow, region.line_rating), flagged)


def write_loading_traces(traces, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(LOADING_HEADER)
        for tr in traces:
            for i in range(tr.isps.size):
                w.writerow([int(tr.isps[i]), tr.region_id, repr(float(tr.flow[i])),
                            repr(float(tr.loading[i])), repr(float(tr.scheduled_loading[i])),
                            "true" if tr.overload[i] else "false",
                            "true" if tr.flagged[i] else "false"])
    return path
