"""Day-ahead purchase stage and rolling-horizon real-time deviation stage.

Sign convention: every energy is consumption-positive (kWh bought / charged).
A deviation is ``dev = e_da - e_rt``; positive is a surplus (consumed less than
scheduled), negative a shortage. ``up >= 0`` and ``dn <= 0`` split it.
"""
from __future__ import annotations

from collections.abc import Sequence
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from . import kernels
from .fleet import VirtualBattery
from .milp import MilpModel, SolverError, solve
from .rtdp import solve_rt_dp
from .scenarios import PriceScenarioSet, rt_fan
from .settlement import DUAL, MECHANISMS, SINGLE, TWO_PRICE

TIE_EPS = 1e-6      # EUR per kWh of |deviation|
DA_TIE_EPS = 1e-9   # EUR per kWh per ISP of delay in the day-ahead stage


class InfeasibleEnvelope(SolverError):
    def __init__(self, isp: int, window: tuple, detail: str):
        super().__init__(f"envelope infeasible at isp {isp} (window {window[0]}..{window[1]}): {detail}",
                         certificate=[f"isp{isp}"])
        self.isp = isp
        self.window = window


@dataclass
class EProgram:
    e_da: np.ndarray            # kWh bought per ISP
    objective_value: float      # expected DA margin, EUR
    energy: np.ndarray          # planned stored energy per ISP
    start: int = 0
    e_init: float = 0.0


@dataclass
class RtDecision:
    isp: int
    e_rt: float
    dev: float
    u: int                      # 1 when the deviation is a shortage

    @property
    def surplus(self) -> float:
        return max(self.dev, 0.0)

    @property
    def shortage(self) -> float:
        return min(self.dev, 0.0)


@dataclass
class RtTrace:
    start: int
    e_da: np.ndarray
    e_rt: np.ndarray
    surplus: np.ndarray
    shortage: np.ndarray
    mechanism: list
    objective: np.ndarray       # horizon objective at each decision step
    energy: np.ndarray          # realised stored energy
    binaries: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))

    @property
    def dev(self) -> np.ndarray:
        return self.surplus + self.shortage

    @property
    def isps(self) -> np.ndarray:
        return self.start + np.arange(self.e_rt.size)


# -- day-ahead stage ------------------------------------------------------------

def _first_unreachable(vb: VirtualBattery):
    lo_r = hi_r = vb.e_init
    free_since = 0
    step = vb.eta * vb.e_max_step
    for k in range(vb.horizon):
        flow = vb.e_arr[k] - vb.e_dep[k]
        lo_r, hi_r = lo_r + flow, hi_r + flow + step[k]
        if lo_r > vb.e_upper[k] + 1e-9 or hi_r < vb.e_lower[k] - 1e-9:
            detail = (f"reachable [{lo_r:.3f}, {hi_r:.3f}] kWh vs envelope "
                      f"[{vb.e_lower[k]:.3f}, {vb.e_upper[k]:.3f}] kWh")
            return k, (vb.start + free_since, vb.start + k), detail
        if lo_r < vb.e_lower[k] or hi_r > vb.e_upper[k]:
            free_since = k
        lo_r, hi_r = max(lo_r, vb.e_lower[k]), min(hi_r, vb.e_upper[k])
    return None


def repair_purchases(vb: VirtualBattery, e_buy, terminal=None) -> np.ndarray:
    """Move a purchase profile onto the envelope exactly (absorbs solver tolerances)."""
    flow = vb.e_arr - vb.e_dep
    step = vb.eta * vb.e_max_step
    x = flow + vb.eta * np.asarray(e_buy, dtype=float)
    fixed, bad = kernels.project_running_sum(
        x, vb.e_init, vb.e_lower, vb.e_upper, flow, flow + step,
        0.0 if terminal is None else terminal, terminal is not None)
    if bad >= 0:
        found = _first_unreachable(vb)
        if found:
            raise InfeasibleEnvelope(vb.start + found[0], found[1], found[2])
        raise InfeasibleEnvelope(vb.start + bad, (vb.start + bad, vb.start + bad),
                                 "terminal energy not reachable")
    return np.clip((fixed - flow) / vb.eta, 0.0, vb.e_max_step)


def build_da_model(vb: VirtualBattery, da_set: PriceScenarioSet, retail: float) -> MilpModel:
    K = vb.horizon
    base = vb.e_init + np.cumsum(vb.e_arr - vb.e_dep)
    # variables: e_da[0..K-1], cum[0..K-1] (running purchases)
    margin = da_set.probabilities @ (retail - da_set.scenarios)
    c = np.concatenate([margin / 1000.0 - DA_TIE_EPS * np.arange(K), np.zeros(K)])
    rows = np.concatenate([np.arange(K), np.arange(K), np.arange(1, K)])
    cols = np.concatenate([K + np.arange(K), np.arange(K), K + np.arange(K - 1)])
    vals = np.concatenate([np.ones(K), -np.ones(K), -np.ones(K - 1)])
    A_eq = sp.csr_matrix((vals, (rows, cols)), shape=(K, 2 * K))
    lb = np.concatenate([np.zeros(K), (vb.e_lower - base) / vb.eta])
    ub = np.concatenate([vb.e_max_step, (vb.e_upper - base) / vb.eta])
    names = [f"e_da[{k}]" for k in range(K)] + [f"cum[{k}]" for k in range(K)]
    return MilpModel(c, None, None, A_eq, np.zeros(K), lb, np.maximum(ub, lb), [], names=names,
                     row_names_eq=[f"balance[{k}]" for k in range(K)], meta={"K": K})


def solve_da_stage(vb: VirtualBattery, da_set: PriceScenarioSet, retail: float,
                   backend: str = "highs") -> EProgram:
    """Expected-margin-maximising purchase schedule over the battery horizon."""
    if da_set.horizon != vb.horizon:
        raise ValueError(f"scenario horizon {da_set.horizon} != battery horizon {vb.horizon}")
    found = _first_unreachable(vb)
    if found:
        raise InfeasibleEnvelope(vb.start + found[0], found[1], found[2])
    K = vb.horizon
    if K == 0 or not vb.p_charge_max.any():
        return EProgram(np.zeros(K), 0.0, vb.trajectory(np.zeros(K)), vb.start, vb.e_init)
    model = build_da_model(vb, da_set, retail)
    sol = solve(model, backend=backend)
    e_da = repair_purchases(vb, sol.x[:K])
    margin = da_set.probabilities @ (retail - da_set.scenarios)
    return EProgram(e_da, float(e_da @ margin / 1000.0), vb.trajectory(e_da), vb.start, vb.e_init)


# -- real-time stage ------------------------------------------------------------

def deviation_prices(mech, state, lam_up, lam_down, lam_da):
    """Per-kWh settlement prices (EUR/MWh) for a surplus and for a shortage."""
    mid = 0.5 * (lam_up + lam_down)
    if mech == SINGLE:
        p = lam_up if state == 1 else lam_down if state == -1 else mid
        return p, p
    if mech == TWO_PRICE:
        if state == 1:
            return lam_da, lam_up
        if state == -1:
            return lam_down, lam_da
        return mid, mid
    if mech == DUAL:
        return lam_down, lam_up
    raise ValueError(f"unknown mechanism {mech!r}")


def _price_matrices(mechs, states, up, dn, lam_da):
    """Surplus / shortage price matrices [S x L] for per-ISP mechanisms."""
    mid = 0.5 * (up + dn)
    codes = np.array([{SINGLE: 0, TWO_PRICE: 1, DUAL: 2}[m] for m in mechs])
    st = np.broadcast_to(states, up.shape)
    da = np.broadcast_to(lam_da, up.shape)
    single = np.select([st == 1, st == -1], [up, dn], mid)
    two_s = np.select([st == 1, st == -1], [da, dn], mid)
    two_d = np.select([st == 1, st == -1], [up, da], mid)
    is_two = np.broadcast_to(codes == 1, up.shape)
    is_dual = np.broadcast_to(codes == 2, up.shape)
    a = np.where(is_dual, dn, np.where(is_two, two_s, single))
    b = np.where(is_dual, up, np.where(is_two, two_d, single))
    return a, b


@dataclass
class RtArrays:
    """Scenario data of one real-time decision, shared by the MILP and the DP."""

    c_up: np.ndarray        # [S x L] objective slope of a surplus, EUR/kWh
    c_dn: np.ndarray        # [S x L] objective slope of a shortage
    up_price: np.ndarray    # [S x L] EUR/MWh
    dn_price: np.ndarray
    dev_lo: np.ndarray      # [L] per-step deviation bounds
    dev_hi: np.ndarray
    cum_lo: np.ndarray      # [L] running deviation bounds, last pinned to 0
    cum_hi: np.ndarray
    pi: np.ndarray
    mechs: list
    cap: np.ndarray


def rt_arrays(vb: VirtualBattery, eprog: EProgram, mech, states, fan: PriceScenarioSet,
              lam_da, t0: int) -> RtArrays:
    K = vb.horizon
    if not 0 <= t0 < K:
        raise ValueError(f"t0={t0} outside window 0..{K - 1}")
    L = K - t0
    if fan.horizon != L:
        raise ValueError(f"fan covers {fan.horizon} ISPs, model needs {L}")
    mechs = [mech] * L if isinstance(mech, str) else list(mech)
    if len(mechs) != L:
        raise ValueError("mechanism schedule must cover t0..end")
    for m in mechs:
        if m not in MECHANISMS:
            raise ValueError(f"unknown mechanism id {m!r}")
    states = np.asarray(states)[t0:]
    lam_da = np.asarray(lam_da, dtype=float)[t0:]
    dn_p = fan.down if fan.down is not None else fan.scenarios
    a, b = _price_matrices(mechs, states, fan.scenarios, dn_p, lam_da)
    e_da = eprog.e_da[t0:]
    cap = vb.e_max_step[t0:]
    e_plan = eprog.energy[t0:]
    cum_lo = np.minimum((e_plan - vb.e_upper[t0:]) / vb.eta, 0.0)
    cum_hi = np.maximum((e_plan - vb.e_lower[t0:]) / vb.eta, 0.0)
    cum_lo[-1] = cum_hi[-1] = 0.0
    return RtArrays(a / 1000.0 - TIE_EPS, b / 1000.0 + TIE_EPS, a, b,
                    -np.clip(cap - e_da, 0.0, None), np.clip(np.minimum(e_da, cap), 0.0, None),
                    cum_lo, cum_hi, fan.probabilities, mechs, cap)


def build_rt_model(vb: VirtualBattery, eprog: EProgram, mech, states, fan: PriceScenarioSet,
                   lam_da, retail: float, t0: int, dev_so_far: float = 0.0,
                   exclusivity: str = "auto") -> MilpModel:
    """Deviation model over ISPs ``t0..end`` of the battery window (local indices).

    ``mech`` is one mechanism name or a sequence covering ``t0..end``; ``states`` and
    ``lam_da`` cover the whole window. The t0 decision is shared by all scenarios;
    later ISPs are scenario-indexed. The running deviation must return to zero at
    the window end. ``exclusivity="auto"`` adds the surplus/shortage binary only where
    the two deviation prices would otherwise reward trading both ways at once.
    """
    if exclusivity not in ("auto", "all"):
        raise ValueError("exclusivity must be 'auto' or 'all'")
    arr = rt_arrays(vb, eprog, mech, states, fan, lam_da, t0)
    L = vb.horizon - t0
    S = fan.n_scenarios
    pi = arr.pi
    c_up, c_dn, cap = arr.c_up, arr.c_dn, arr.cap
    up_max, dn_min, cum_lo, cum_hi = arr.dev_hi, arr.dev_lo, arr.cum_lo, arr.cum_hi
    a, b, mechs = arr.up_price, arr.dn_price, arr.mechs
    e_da = eprog.e_da[t0:]
    lam_da = np.asarray(lam_da, dtype=float)[t0:]

    # variable blocks: P = 1 + S*(L-1) slots per kind; slot 0 is the shared t0 slot
    P = 1 + S * (L - 1)
    slot_s = np.concatenate([[-1], np.repeat(np.arange(S), L - 1)])
    slot_k = np.concatenate([[0], np.tile(np.arange(1, L), S)])
    slot_w = np.concatenate([[1.0], pi[slot_s[1:]]])
    sk_s = np.where(slot_s < 0, 0, slot_s)
    cu = np.where(slot_s < 0, pi @ c_up[:, 0], c_up[sk_s, slot_k])
    cd = np.where(slot_s < 0, pi @ c_dn[:, 0], c_dn[sk_s, slot_k])

    if exclusivity == "all":
        need_bin = np.ones(P, dtype=bool)
    else:
        need_bin = convex_kinks(arr)
    nb = int(need_bin.sum())
    n = 3 * P + nb
    c = np.concatenate([slot_w * cu, slot_w * cd, np.zeros(P), np.zeros(nb)])
    lb = np.concatenate([np.zeros(P), dn_min[slot_k], cum_lo[slot_k], np.zeros(nb)])
    ub = np.concatenate([up_max[slot_k], np.zeros(P), cum_hi[slot_k], np.ones(nb)])

    # balance rows: cum_slot - cum_prev - up - dn = (dev_so_far if t0 slot)
    prev = np.full(P, -1)
    later = np.arange(1, P)
    first_of_s = (slot_k[later] == 1)
    prev[later] = np.where(first_of_s, 0, later - 1)
    r = np.arange(P)
    rows = [r, r, r]
    cols = [2 * P + r, r, P + r]
    vals = [np.ones(P), -np.ones(P), -np.ones(P)]
    has_prev = prev >= 0
    rows.append(r[has_prev])
    cols.append(2 * P + prev[has_prev])
    vals.append(-np.ones(has_prev.sum()))
    A_eq = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                         shape=(P, n))
    b_eq = np.zeros(P)
    b_eq[0] = dev_so_far

    bin_slots = np.flatnonzero(need_bin)
    if nb:
        j = np.arange(nb)
        big = cap[slot_k[bin_slots]]
        # up + cap*u <= cap ;  -dn - cap*u <= 0
        rows_u = np.concatenate([j, j, nb + j, nb + j])
        cols_u = np.concatenate([bin_slots, 3 * P + j, P + bin_slots, 3 * P + j])
        vals_u = np.concatenate([np.ones(nb), big, -np.ones(nb), -big])
        A_ub = sp.csr_matrix((vals_u, (rows_u, cols_u)), shape=(2 * nb, n))
        b_ub = np.concatenate([big, np.zeros(nb)])
    else:
        A_ub, b_ub = None, None

    meta = dict(P=P, S=S, L=L, t0=t0, slot_s=slot_s, slot_k=slot_k, bin_slots=bin_slots,
                up_price=a, dn_price=b, mechs=mechs,
                constant_da=float(e_da @ (lam_da - retail) / 1000.0))
    return MilpModel(c, A_ub, b_ub, A_eq, b_eq, lb, np.maximum(ub, lb), 3 * P + np.arange(nb),
                     names=_LazyNames(_rt_var_names, meta),
                     row_names_eq=_LazyNames(_rt_row_names, meta), meta=meta)


def _slot_name(kind, meta, i):
    s, k = meta["slot_s"][i], meta["t0"] + meta["slot_k"][i]
    return f"{kind}[s{s},t{k}]" if s >= 0 else f"{kind}[t{k}]"


def _rt_var_names(meta):
    P = meta["P"]
    return ([_slot_name("up", meta, i) for i in range(P)] + [_slot_name("dn", meta, i) for i in range(P)]
            + [_slot_name("cum", meta, i) for i in range(P)]
            + [_slot_name("u", meta, i) for i in meta["bin_slots"]])


def _rt_row_names(meta):
    return [_slot_name("bal", meta, i) for i in range(meta["P"])]


class _LazyNames(Sequence):
    """Names built on first access; most solves never look at them."""

    def __init__(self, make, meta):
        self._make, self._meta, self._names = make, meta, None

    def _get(self):
        if self._names is None:
            self._names = self._make(self._meta)
        return self._names

    def __getitem__(self, i):
        return self._get()[i]

    def __len__(self):
        return len(self._get())


@dataclass
class RtSolution:
    up: np.ndarray              # per slot, netted
    dn: np.ndarray
    objective: float
    bound: float
    optimal: bool
    u: np.ndarray


def net_deviations(model: MilpModel, x) -> tuple:
    P = model.meta["P"]
    dev = x[:P] + x[P:2 * P]
    return np.maximum(dev, 0.0), np.minimum(dev, 0.0)


def solve_rt_model(model: MilpModel, backend: str = "highs") -> RtSolution:
    """Solve and net each surplus/shortage pair so at most one side is non-zero."""
    sol = solve(model, backend=backend)
    up, dn = net_deviations(model, sol.x)
    P = model.meta["P"]
    x = np.array(sol.x, copy=True)
    x[:P], x[P:2 * P] = up, dn
    obj = float(model.c @ x)
    u = (dn < 0).astype(np.int64)
    return RtSolution(up, dn, obj, max(sol.bound, obj), sol.optimal, u)


def convex_kinks(arr: RtArrays) -> np.ndarray:
    """Slots (t0 first, then scenario-major) where surplus pays more than shortage costs."""
    S, L = arr.c_up.shape
    cu = np.concatenate([[arr.pi @ arr.c_up[:, 0]], arr.c_up[:, 1:].ravel()])
    cd = np.concatenate([[arr.pi @ arr.c_dn[:, 0]], arr.c_dn[:, 1:].ravel()])
    k = np.concatenate([[0], np.tile(np.arange(1, L), S)])
    return (cu > cd + 1e-15) & (arr.dev_hi[k] > 0) & (arr.dev_lo[k] < 0)


def decide_rt(vb, eprog, mech, states, fan, lam_da, retail, t0, dev_so_far=0.0,
              backend="dp", exclusivity="auto"):
    """First-step deviation, horizon objective and exclusivity-binary count at ``t0``.

    ``backend="dp"`` runs the exact value-function recursion; any MILP backend
    builds and solves the equivalent model.
    """
    if backend == "dp":
        arr = rt_arrays(vb, eprog, mech, states, fan, lam_da, t0)
        d, obj, feasible, _ = solve_rt_dp(dev_so_far, arr.c_up, arr.c_dn, arr.dev_lo, arr.dev_hi,
                                          arr.cum_lo, arr.cum_hi, arr.pi)
        if not feasible:
            raise SolverError(f"no deviation plan returns to the day-ahead schedule from "
                              f"{dev_so_far:.6g} kWh", certificate=[f"bal[t{t0}]"])
        return float(d), float(obj), int(convex_kinks(arr).sum())
    model = build_rt_model(vb, eprog, mech, states, fan, lam_da, retail, t0, dev_so_far, exclusivity)
    sol = solve_rt_model(model, backend)
    return float(sol.up[0] + sol.dn[0]), sol.objective, int(model.binaries.size)


def _mech_view(schedule, t0, base, visible_ahead):
    view = list(schedule[t0:])
    if visible_ahead is not None:
        for k in range(visible_ahead + 1, len(view)):
            view[k] = base
    return view


def rolling_horizon_day(vb: VirtualBattery, eprog: EProgram, market, mech_schedule,
                        retail: float, fans=None, fan_seed: int = 0, n_up: int = 5,
                        n_down: int = 5, sigma_rel: float = 0.5, backend: str = "dp",
                        visible_ahead: int | None = 1, base_mechanism: str = SINGLE,
                        exclusivity: str = "auto") -> RtTrace:
    """Commit one real-time decision per ISP of the battery window.

    ``market`` is the full :class:`MarketSeries`; the window is
    ``vb.start .. vb.start + vb.horizon``. ``mech_schedule`` is one mechanism or a
    per-ISP list for the window. At step ``t0`` the BRP sees the scheduled mechanism
    for ``t0 .. t0 + visible_ahead`` and assumes ``base_mechanism`` beyond.
    ``fans`` optionally maps local ``t0`` to a prepared :class:`PriceScenarioSet`.
    """
    K = vb.horizon
    w0 = vb.start
    sched = [mech_schedule] * K if isinstance(mech_schedule, str) else list(mech_schedule)
    if len(sched) != K:
        raise ValueError("mechanism schedule must cover the window")
    states = np.asarray(market.reg_state[w0:w0 + K])
    lam_da = np.asarray(market.lambda_da[w0:w0 + K])
    e_rt = np.zeros(K)
    surplus = np.zeros(K)
    shortage = np.zeros(K)
    objective = np.zeros(K)
    binaries = np.zeros(K, dtype=np.int64)
    cap = vb.e_max_step
    dmin = eprog.e_da - cap
    dmax = eprog.e_da.copy()
    cum_lo = np.minimum((eprog.energy - vb.e_upper) / vb.eta, 0.0)
    cum_hi = np.maximum((eprog.energy - vb.e_lower) / vb.eta, 0.0)
    cum = 0.0
    for t0 in range(K):
        if cap[t0] <= 0.0:
            e_rt[t0] = eprog.e_da[t0]
            continue
        if fans is not None:
            fan = fans[t0]
        else:
            fan = rt_fan(market.lambda_up, market.lambda_down, w0 + t0, n_up, n_down, sigma_rel,
                         seed=fan_seed, stop=w0 + K)
        view = _mech_view(sched, t0, base_mechanism, visible_ahead)
        try:
            dev, obj, nbin = decide_rt(vb, eprog, view, states, fan, lam_da, retail, t0, cum,
                                       backend, exclusivity)
        except SolverError as exc:
            raise SolverError(f"rolling horizon failed at isp {w0 + t0}: {exc}",
                              certificate=exc.certificate) from exc
        # keep the running deviation inside the set that can still return to zero
        fixed, bad = kernels.project_running_sum(
            np.concatenate([[dev], np.zeros(K - t0 - 1)]), cum, cum_lo[t0:], cum_hi[t0:],
            dmin[t0:], dmax[t0:], 0.0, True)
        if bad == 0:
            raise SolverError(f"no feasible deviation at isp {w0 + t0}")
        dev = float(fixed[0])
        if abs(dev) < 1e-9:
            dev = 0.0
        cum += dev
        e_rt[t0] = min(max(eprog.e_da[t0] - dev, 0.0), cap[t0])
        surplus[t0] = max(dev, 0.0)
        shortage[t0] = min(dev, 0.0)
        objective[t0] = obj
        binaries[t0] = nbin
    energy = vb.trajectory(e_rt)
    return RtTrace(w0, eprog.e_da.copy(), e_rt, surplus, shortage, sched, objective, energy, binaries)
