"""End-to-end case runner.

Order of work for one case:

1. day-ahead purchase program per group, day by day with a lookahead window;
2. DSO flags per region from the programs (announced two ISPs ahead);
3. a mechanism per region and ISP according to the scope;
4. rolling-horizon real-time decisions per group under that mechanism;
5. settlement with the same mechanism, loading traces from realised energy.

Groups are independent price takers, so steps 1 and 4 run per group and may be
spread over worker processes without changing any result.
"""
from __future__ import annotations

import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .config import ConfigError, SimConfig
from .fleet import MobilityParams, VirtualBattery, build_virtual_battery, fleet_horizon, \
    generate_sessions, read_fleet, write_fleet
from .grid import CongestionFlags, LoadingTrace, RegionConfig, forecast_flags, loading_trace
from .market import ISP_PER_DAY, MarketSeries
from .milp import SolverError
from .optimizer import EProgram, RtTrace, rolling_horizon_day, solve_da_stage
from .scenarios import da_scenarios
from .settlement import DUAL, SINGLE, TWO_PRICE, settle_series

CASES = {
    "sp": (SINGLE, None),
    "tp": (TWO_PRICE, None),
    "dp": (DUAL, None),
    "proposed-tp": (SINGLE, TWO_PRICE),
    "proposed-dp": (SINGLE, DUAL),
}


class StageError(RuntimeError):
    """A stage failed; ``stage`` and ``isp`` say where."""

    def __init__(self, stage: str, isp, message: str):
        super().__init__(f"{stage} stage failed at isp {isp}: {message}")
        self.stage = stage
        self.isp = isp


@dataclass(frozen=True)
class CaseSpec:
    name: str
    scope: str              # none | global | local
    base: str
    alt: str | None = None

    def __post_init__(self):
        if self.scope not in ("none", "global", "local"):
            raise ValueError(f"unknown scope {self.scope!r}")
        if self.scope != "none" and self.alt is None:
            raise ValueError(f"case {self.name}: scope {self.scope} needs an alternative mechanism")
        if self.alt is not None and self.alt not in (TWO_PRICE, DUAL):
            raise ValueError(f"case {self.name}: alternative must be two_price or dual_price")

    @classmethod
    def from_name(cls, name: str, scope: str = "none") -> "CaseSpec":
        if name not in CASES:
            raise ValueError(f"unknown case {name!r}; choose from {sorted(CASES)}")
        base, alt = CASES[name]
        if alt is None and scope != "none":
            raise ValueError(f"case {name} applies one mechanism everywhere; scope must be none")
        return cls(name, scope, base, alt)

    @property
    def label(self) -> str:
        return self.name if self.scope == "none" else f"{self.name}/{self.scope}"


@dataclass
class CaseResult:
    spec: CaseSpec
    groups: list
    region_of: dict
    eprograms: dict                 # group -> EProgram over the simulated horizon
    traces: dict                    # group -> RtTrace over the simulated horizon
    ledger: list                    # (isp, brp_id, mechanism, state, dev, price, cash)
    loading: dict                   # region -> LoadingTrace
    flags: dict                     # region -> CongestionFlags
    schedules: dict                 # region -> list of mechanism names per ISP
    da_margin: dict                 # group -> EUR
    cashflow: dict                  # group -> EUR
    days: int = 0
    meta: dict = field(default_factory=dict)

    def benefit(self, group: str | None = None) -> float:
        if group is not None:
            return self.da_margin[group] + self.cashflow[group]
        return float(sum(self.da_margin[g] + self.cashflow[g] for g in self.groups))


# -- fleet --------------------------------------------------------------------------

def group_sessions(cfg: SimConfig) -> dict:
    """Sessions per group, read from ``fleet_dir`` when configured, else generated."""
    out = {}
    mob = MobilityParams.from_dict(cfg.mobility)
    for k, g in enumerate(cfg.groups):
        if cfg.fleet_dir:
            out[g] = read_fleet(cfg.resolve(cfg.fleet_dir) / f"fleet_{g}.csv", eta=cfg.eta)
        else:
            out[g] = generate_sessions(cfg.group_size, mob, seed=[cfg.seeds.fleet, k],
                                       days=cfg.days, eta=cfg.eta)
    return out


def write_group_fleets(cfg: SimConfig, out_dir) -> list:
    out_dir = Path(out_dir)
    mob = MobilityParams.from_dict(cfg.mobility)
    paths = []
    for k, g in enumerate(cfg.groups):
        sessions = generate_sessions(cfg.group_size, mob, seed=[cfg.seeds.fleet, k],
                                     days=cfg.days, eta=cfg.eta)
        paths.append(write_fleet(sessions, out_dir / f"fleet_{g}.csv"))
    return paths


def build_batteries(cfg: SimConfig, sessions: dict) -> dict:
    horizon = fleet_horizon(cfg.days)
    return {g: build_virtual_battery(s, horizon, eta=cfg.eta) for g, s in sessions.items()}


# -- stages -------------------------------------------------------------------------

def day_ahead_program(vb: VirtualBattery, market: MarketSeries, cfg: SimConfig,
                      backend: str = "highs") -> EProgram:
    """Commit each day's first 96 ISPs of a program solved over day + lookahead."""
    n = cfg.horizon
    end_all = min(vb.horizon, len(market))
    e_da = np.zeros(n)
    energy = np.zeros(n)
    objective = 0.0
    e_init = vb.e_init
    for d in range(cfg.days):
        s = d * ISP_PER_DAY
        stop = min(s + ISP_PER_DAY + cfg.lookahead, end_all)
        w = vb.window(s, stop, e_init)
        da = da_scenarios(market.lambda_da[s:stop], cfg.n_da_scenarios, cfg.da_noise,
                          seed=[cfg.seeds.da, d], start=s)
        try:
            prog = solve_da_stage(w, da, cfg.retail_price, backend=backend)
        except SolverError as exc:
            raise StageError("day-ahead", getattr(exc, "isp", s), str(exc)) from exc
        k = ISP_PER_DAY
        e_da[s:s + k] = prog.e_da[:k]
        energy[s:s + k] = prog.energy[:k]
        margin = da.probabilities @ (cfg.retail_price - da.scenarios[:, :k])
        objective += float(prog.e_da[:k] @ margin / 1000.0)
        e_init = float(prog.energy[k - 1])
    return EProgram(e_da, objective, energy, 0, vb.e_init)


def mechanism_schedules(spec: CaseSpec, flags: dict, n: int) -> dict:
    if spec.scope == "none":
        return {r: [spec.base] * n for r in flags}
    if spec.scope == "local":
        return {r: [spec.alt if f else spec.base for f in fl.flags] for r, fl in flags.items()}
    anywhere = np.zeros(n, dtype=bool)
    for fl in flags.values():
        anywhere |= fl.flags
    sched = [spec.alt if f else spec.base for f in anywhere]
    return {r: list(sched) for r in flags}


def real_time_trace(vb: VirtualBattery, eprog: EProgram, market: MarketSeries, schedule,
                    cfg: SimConfig) -> RtTrace:
    n = cfg.horizon
    e_rt = np.zeros(n)
    surplus = np.zeros(n)
    shortage = np.zeros(n)
    objective = np.zeros(n)
    binaries = np.zeros(n, dtype=np.int64)
    e_init = vb.e_init
    for d in range(cfg.days):
        s = d * ISP_PER_DAY
        sl = slice(s, s + ISP_PER_DAY)
        w = vb.window(s, s + ISP_PER_DAY, e_init)
        ep = EProgram(eprog.e_da[sl], 0.0, eprog.energy[sl], s, e_init)
        try:
            tr = rolling_horizon_day(w, ep, market, schedule[sl], cfg.retail_price,
                                     fan_seed=cfg.seeds.rt, n_up=cfg.n_up, n_down=cfg.n_down,
                                     sigma_rel=cfg.rt_sigma, backend=cfg.backend,
                                     visible_ahead=cfg.visible_ahead, base_mechanism=SINGLE)
        except SolverError as exc:
            raise StageError("real-time", s, str(exc)) from exc
        e_rt[sl], surplus[sl], shortage[sl] = tr.e_rt, tr.surplus, tr.shortage
        objective[sl], binaries[sl] = tr.objective, tr.binaries
        # the running deviation closes at day end, so the day ends on the plan
        e_init = float(eprog.energy[s + ISP_PER_DAY - 1])
    energy = vb.window(0, n, vb.e_init).trajectory(e_rt)
    return RtTrace(0, eprog.e_da.copy(), e_rt, surplus, shortage, list(schedule), objective,
                   energy, binaries)


def _group_job(args):
    g, vb, market, cfg, schedule, eprog = args
    if eprog is None:
        da_backend = "highs" if cfg.backend == "dp" else cfg.backend
        return g, day_ahead_program(vb, market, cfg, backend=da_backend)
    return g, real_time_trace(vb, eprog, market, schedule, cfg)


def _map(jobs, workers: int):
    if workers == 0:
        workers = os.cpu_count() or 1
    if workers <= 1 or len(jobs) <= 1:
        return [_group_job(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=min(workers, len(jobs))) as ex:
        return list(ex.map(_group_job, jobs))


def run_case(cfg: SimConfig, spec: CaseSpec, market: MarketSeries | None = None,
             sessions: dict | None = None) -> CaseResult:
    market = market if market is not None else cfg.market()
    if len(market) < cfg.horizon:
        raise ConfigError(f"market data covers {len(market)} ISPs, {cfg.horizon} needed")
    sessions = sessions if sessions is not None else group_sessions(cfg)
    vbs = build_batteries(cfg, sessions)
    n = cfg.horizon
    groups = cfg.groups
    region_of = {g: cfg.region_of(g) for g in groups}
    regions: dict[str, RegionConfig] = {r.region_id: r.build(n) for r in cfg.regions}

    eprogs = dict(_map([(g, vbs[g], market, cfg, None, None) for g in groups], cfg.workers))

    states = market.reg_state[:n]
    up, down, da = market.lambda_up[:n], market.lambda_down[:n], market.lambda_da[:n]
    flags: dict[str, CongestionFlags] = {}
    for rid, reg in regions.items():
        gs = reg.groups
        e = np.array([eprogs[g].e_da for g in gs])
        caps = np.array([vbs[g].e_max_step[:n] for g in gs])
        flags[rid] = forecast_flags(reg, e, caps, states, up, down, cfg.worst_case, cfg.threshold)
    schedules = mechanism_schedules(spec, flags, n)

    jobs = [(g, vbs[g], market, cfg, schedules[region_of[g]], eprogs[g]) for g in groups]
    traces = dict(_map(jobs, cfg.workers))

    ledger, margin, cash = [], {}, {}
    for g in groups:
        tr = traces[g]
        sched = schedules[region_of[g]]
        price, cf = settle_series(sched, tr.dev, states, up, down, da, cfg.settlement_variant)
        margin[g] = float(eprogs[g].e_da @ (cfg.retail_price - da) / 1000.0)
        cash[g] = float(cf.sum())
        ledger.extend(zip(range(n), [g] * n, sched, states.tolist(), tr.dev.tolist(),
                          price.tolist(), cf.tolist()))
    ledger.sort(key=lambda r: (r[0], groups.index(r[1])))

    load = {}
    for rid, reg in regions.items():
        gs = reg.groups
        load[rid] = loading_trace(reg, [traces[g].e_rt for g in gs], [eprogs[g].e_da for g in gs],
                                  flags[rid].flags)
    return CaseResult(spec, groups, region_of, eprogs, traces, ledger, load, flags, schedules,
                      margin, cash, cfg.days,
                      meta={"horizon": n, "backend": cfg.backend})


def loading_traces(result: CaseResult) -> list[LoadingTrace]:
    return [result.loading[r] for r in sorted(result.loading)]
