"""Hot numeric kernels, each with a numba loop version and a vectorised numpy version.

The public names (``envelope``, ``settle_vector``) dispatch on ``USE_NUMBA``;
both variants stay importable so the benchmark and tests can compare them.
"""
import numpy as np

from ._accel import USE_NUMBA, njit

# mechanism codes shared with settlement / optimizer
SINGLE, TWO_PRICE, DUAL = 0, 1, 2


# -- virtual battery envelope -------------------------------------------------

@njit
def envelope_numba(arrival, departure, soc, target, step, pmax, horizon):
    lo = np.zeros(horizon)
    up = np.zeros(horizon)
    p_sum = np.zeros(horizon)
    e_arr = np.zeros(horizon)
    e_dep = np.zeros(horizon)
    n_parked = np.zeros(horizon, dtype=np.int64)
    for n in range(arrival.shape[0]):
        a = arrival[n]
        d = departure[n]
        e_arr[a] += soc[n]
        if d < horizon:
            e_dep[d] += target[n]
        for t in range(a, d):
            asap = soc[n] + step[n] * (t - a + 1)
            if asap > target[n]:
                asap = target[n]
            alap = target[n] - step[n] * (d - 1 - t)
            if alap < soc[n]:
                alap = soc[n]
            up[t] += asap
            lo[t] += alap
            p_sum[t] += pmax[n]
            n_parked[t] += 1
    return lo, up, p_sum, e_arr, e_dep, n_parked


def envelope_numpy(arrival, departure, soc, target, step, pmax, horizon):
    arrival = np.asarray(arrival, dtype=np.int64)
    departure = np.asarray(departure, dtype=np.int64)
    length = departure - arrival
    owner = np.repeat(np.arange(arrival.size), length)
    starts = np.repeat(np.cumsum(length) - length, length)
    k = np.arange(owner.size) - starts
    t = arrival[owner] + k
    asap = np.minimum(soc[owner] + step[owner] * (k + 1), target[owner])
    alap = np.maximum(soc[owner], target[owner] - step[owner] * (length[owner] - 1 - k))
    lo = np.bincount(t, weights=alap, minlength=horizon)
    up = np.bincount(t, weights=asap, minlength=horizon)
    p_sum = np.bincount(t, weights=pmax[owner], minlength=horizon)
    n_parked = np.bincount(t, minlength=horizon).astype(np.int64)
    e_arr = np.bincount(arrival, weights=soc, minlength=horizon)
    inside = departure < horizon
    e_dep = np.bincount(departure[inside], weights=target[inside], minlength=horizon)
    return lo, up, p_sum, e_arr, e_dep, n_parked


def envelope(arrival, departure, soc, target, step, pmax, horizon):
    args = (np.ascontiguousarray(arrival, dtype=np.int64),
            np.ascontiguousarray(departure, dtype=np.int64),
            np.ascontiguousarray(soc, dtype=np.float64),
            np.ascontiguousarray(target, dtype=np.float64),
            np.ascontiguousarray(step, dtype=np.float64),
            np.ascontiguousarray(pmax, dtype=np.float64),
            int(horizon))
    if USE_NUMBA:
        return envelope_numba(*args)
    return envelope_numpy(*args)


# -- vectorised settlement ----------------------------------------------------

@njit
def settle_numba(mech, state, dev, lam_up, lam_down, lam_da, nl_full):
    n = dev.shape[0]
    price = np.empty(n)
    for i in range(n):
        mid = 0.5 * (lam_up[i] + lam_down[i])
        m = mech[i]
        s = state[i]
        if m == DUAL or (m == SINGLE and nl_full and s == 2):
            price[i] = lam_down[i] if dev[i] > 0 else lam_up[i]
        elif m == SINGLE:
            if s == 1:
                price[i] = lam_up[i]
            elif s == -1:
                price[i] = lam_down[i]
            else:
                price[i] = mid
        else:
            if s == 1:
                price[i] = lam_da[i] if dev[i] > 0 else lam_up[i]
            elif s == -1:
                price[i] = lam_down[i] if dev[i] > 0 else lam_da[i]
            else:
                price[i] = mid
    return price, price * dev / 1000.0


def settle_numpy(mech, state, dev, lam_up, lam_down, lam_da, nl_full):
    mid = 0.5 * (lam_up + lam_down)
    surplus = dev > 0
    single = np.select([state == 1, state == -1], [lam_up, lam_down], mid)
    dual = np.where(surplus, lam_down, lam_up)
    if nl_full:
        single = np.where(state == 2, dual, single)
    two = np.select([state == 1, state == -1],
                    [np.where(surplus, lam_da, lam_up), np.where(surplus, lam_down, lam_da)], mid)
    price = np.select([mech == SINGLE, mech == TWO_PRICE], [single, two], dual)
    return price, price * dev / 1000.0


def settle_vector(mech, state, dev, lam_up, lam_down, lam_da, nl_full=False):
    """Applied price (EUR/MWh) and cashflow (EUR, positive = BRP receives) per ISP."""
    args = (np.ascontiguousarray(mech, dtype=np.int64),
            np.ascontiguousarray(state, dtype=np.int64),
            np.ascontiguousarray(dev, dtype=np.float64),
            np.ascontiguousarray(lam_up, dtype=np.float64),
            np.ascontiguousarray(lam_down, dtype=np.float64),
            np.ascontiguousarray(lam_da, dtype=np.float64),
            bool(nl_full))
    if USE_NUMBA:
        return settle_numba(*args)
    return settle_numpy(*args)


# -- bounded primal simplex ---------------------------------------------------

LP_OPTIMAL, LP_ITER_LIMIT, LP_INFEASIBLE, LP_UNBOUNDED = 0, 1, 2, 3
_AT_LOWER, _AT_UPPER, _BASIC = 0, 1, 2


def simplex_core(T, xB, basis, status, ub, cost, max_iter, bland_after):
    """Minimise ``cost @ x`` from a feasible basis of a bounded-variable tableau.

    ``T`` holds B^-1 A (m x N) and is pivoted in place. Nonbasic variables sit at
    0 (``status`` 0) or at ``ub`` (``status`` 1); ``xB`` holds basic values.
    Dantzig pricing switches to Bland's rule after ``bland_after`` pivots.
    Returns ``(code, iterations)``.
    """
    m, N = T.shape
    tol = 1e-9
    piv_tol = 1e-9
    d = cost.copy()
    for i in range(m):
        cb = cost[basis[i]]
        if cb != 0.0:
            d -= cb * T[i]
    it = 0
    while it < max_iter:
        movable = ub > 1e-12
        cand = movable & (((status == _AT_LOWER) & (d < -tol)) | ((status == _AT_UPPER) & (d > tol)))
        if not cand.any():
            return LP_OPTIMAL, it
        if it < bland_after:
            j = int(np.argmax(np.abs(d) * cand))
        else:
            j = int(np.argmax(cand))
        dirn = 1.0 if status[j] == _AT_LOWER else -1.0
        theta = ub[j]
        r = -1
        for i in range(m):
            a = T[i, j] * dirn
            if a > piv_tol:
                lim = xB[i] / a
            elif a < -piv_tol:
                ubi = ub[basis[i]]
                if ubi == np.inf:
                    continue
                lim = (ubi - xB[i]) / (-a)
            else:
                continue
            if lim < 0.0:
                lim = 0.0
            if lim < theta - 1e-12 or (r >= 0 and lim <= theta + 1e-12 and basis[i] < basis[r]
                                         and it >= bland_after):
                theta = lim
                r = i
        if r < 0 and theta == np.inf:
            return LP_UNBOUNDED, it
        xB -= (theta * dirn) * T[:, j]
        if r < 0:
            status[j] = _AT_UPPER if status[j] == _AT_LOWER else _AT_LOWER
        else:
            leaving = basis[r]
            a_r = T[r, j] * dirn
            newval = theta if dirn > 0 else ub[j] - theta
            prow = T[r] / T[r, j]
            for i in range(m):
                if i != r:
                    f = T[i, j]
                    if f != 0.0:
                        T[i] -= f * prow
            T[r] = prow
            d -= d[j] * prow
            basis[r] = j
            status[j] = _BASIC
            status[leaving] = _AT_LOWER if a_r > 0 else _AT_UPPER
            xB[r] = newval
        it += 1
    return LP_ITER_LIMIT, it


simplex_numba = njit(simplex_core)


def simplex(T, xB, basis, status, ub, cost, max_iter, bland_after):
    if USE_NUMBA:
        return simplex_numba(T, xB, basis, status, ub, cost, max_iter, bland_after)
    return simplex_core(T, xB, basis, status, ub, cost, max_iter, bland_after)


# -- running-sum reachability ---------------------------------------------------

def _project_running_sum(x, s0, s_lo, s_hi, x_lo, x_hi, terminal, has_terminal):
    """Nearest feasible increments for ``S_k = S_{k-1} + x_k`` under box limits.

    Backward pass builds the set of running sums from which the remaining limits
    (and the terminal value, if any) stay reachable; forward pass clips each step
    into it. Returns ``(x_fixed, first_bad)``, ``first_bad`` is -1 when feasible.
    """
    K = x.shape[0]
    f_lo = np.empty(K)
    f_hi = np.empty(K)
    lo_k = terminal if has_terminal else s_lo[K - 1]
    hi_k = terminal if has_terminal else s_hi[K - 1]
    f_lo[K - 1] = max(lo_k, s_lo[K - 1])
    f_hi[K - 1] = min(hi_k, s_hi[K - 1])
    for k in range(K - 1, 0, -1):
        f_lo[k - 1] = max(s_lo[k - 1], f_lo[k] - x_hi[k])
        f_hi[k - 1] = min(s_hi[k - 1], f_hi[k] - x_lo[k])
    out = np.empty(K)
    prev = s0
    for k in range(K):
        lo = max(prev + x_lo[k], f_lo[k])
        hi = min(prev + x_hi[k], f_hi[k])
        if lo > hi + 1e-9:
            return out, k
        s = prev + x[k]
        if s < lo:
            s = lo
        if s > hi:
            s = hi
        out[k] = s - prev
        prev = s
    return out, -1


project_running_sum_numba = njit(_project_running_sum)
project_running_sum_numpy = _project_running_sum


def project_running_sum(x, s0, s_lo, s_hi, x_lo, x_hi, terminal=0.0, has_terminal=False):
    args = (np.ascontiguousarray(x, dtype=np.float64), float(s0),
            np.ascontiguousarray(s_lo, dtype=np.float64), np.ascontiguousarray(s_hi, dtype=np.float64),
            np.ascontiguousarray(x_lo, dtype=np.float64), np.ascontiguousarray(x_hi, dtype=np.float64),
            float(terminal), bool(has_terminal))
    if USE_NUMBA:
        return project_running_sum_numba(*args)
    return _project_running_sum(*args)
