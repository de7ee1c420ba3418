"""Exact dynamic programme for the real-time deviation problem.

Given the t0 decision, each price scenario is an independent one-dimensional
problem in the running deviation ``c``. Its value function is continuous and
piecewise linear, so it can be carried backwards exactly as breakpoint arrays:

    V_{k-1}(c) = max( max_{0 <= d <= dhi} a*d + W_k(c + d),
                      max_{dlo <= d <= 0} b*d + W_k(c + d) )

where ``W_k`` is ``V_k`` restricted to the running-deviation bounds at ``k``.
Each branch is a sliding-window maximum of ``W_k(y) + slope*y``; their upper
envelope stays piecewise linear whether or not the surplus/shortage kink is
concave, so the same recursion covers every pricing mechanism.
"""
import types

import numpy as np

from ._accel import HAS_NUMBA, USE_NUMBA, njit

_NEG = -1e300


def _eval(xs, vs, n, x):
    if x <= xs[0]:
        return vs[0]
    if x >= xs[n - 1]:
        return vs[n - 1]
    lo = 0
    hi = n - 1
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if xs[mid] <= x:
            lo = mid
        else:
            hi = mid
    w = xs[hi] - xs[lo]
    if w <= 0.0:
        return max(vs[lo], vs[hi])
    return vs[lo] + (vs[hi] - vs[lo]) * (x - xs[lo]) / w


def _simplify(xs, vs, n, tol):
    """Drop duplicate abscissae and collinear interior points in place; returns new length."""
    if n <= 1:
        return n
    m = 1
    for i in range(1, n):
        if xs[i] - xs[m - 1] <= tol:
            if vs[i] > vs[m - 1]:
                vs[m - 1] = vs[i]
            continue
        xs[m] = xs[i]
        vs[m] = vs[i]
        m += 1
    if m <= 2:
        return m
    k = 1
    for i in range(1, m - 1):
        x0, v0 = xs[k - 1], vs[k - 1]
        x1, v1 = xs[i], vs[i]
        x2, v2 = xs[i + 1], vs[i + 1]
        interp = v0 + (v2 - v0) * (x1 - x0) / (x2 - x0)
        if abs(interp - v1) <= 1e-12 * (1.0 + abs(v1)):
            continue
        xs[k] = x1
        vs[k] = v1
        k += 1
    xs[k] = xs[m - 1]
    vs[k] = vs[m - 1]
    return k + 1


def _window_max(xs, fs, n, s0, s1, tol):
    """M(c) = max F(y) over y in [c+s0, c+s1] clipped to F's domain; F given by points."""
    X0 = xs[0]
    XN = xs[n - 1]
    c_lo = X0 - s1
    c_hi = XN - s0
    ev = np.empty(2 * n + 2)
    m = 0
    for i in range(n):
        for e in (xs[i] - s0, xs[i] - s1):
            if c_lo <= e <= c_hi:
                ev[m] = e
                m += 1
    ev[m] = c_lo
    ev[m + 1] = c_hi
    m += 2
    ev = np.sort(ev[:m])
    # dedupe events
    k = 1
    for i in range(1, m):
        if ev[i] - ev[k - 1] > tol:
            ev[k] = ev[i]
            k += 1
    m = k
    out_x = np.empty(4 * m + 4)
    out_v = np.empty(4 * m + 4)
    cnt = 0
    if m == 1:
        c = ev[0]
        lo = min(max(c + s0, X0), XN)
        hi = min(max(c + s1, X0), XN)
        best = max(_eval(xs, fs, n, lo), _eval(xs, fs, n, hi))
        for i in range(n):
            if lo < xs[i] < hi and fs[i] > best:
                best = fs[i]
        out_x[0] = c
        out_v[0] = best
        return out_x, out_v, 1
    dq = np.empty(n, dtype=np.int64)
    ts = np.empty(5)
    dq_head = 0
    dq_tail = 0
    nxt = 0
    for j in range(m - 1):
        ea = ev[j]
        eb = ev[j + 1]
        mid = 0.5 * (ea + eb)
        lm = min(max(mid + s0, X0), XN)
        rm = min(max(mid + s1, X0), XN)
        while nxt < n and xs[nxt] < rm:
            while dq_tail > dq_head and fs[dq[dq_tail - 1]] <= fs[nxt]:
                dq_tail -= 1
            dq[dq_tail] = nxt
            dq_tail += 1
            nxt += 1
        while dq_tail > dq_head and xs[dq[dq_head]] <= lm:
            dq_head += 1
        inner = fs[dq[dq_head]] if dq_tail > dq_head else _NEG
        la0 = _eval(xs, fs, n, min(max(ea + s0, X0), XN))
        la1 = _eval(xs, fs, n, min(max(eb + s0, X0), XN))
        ra0 = _eval(xs, fs, n, min(max(ea + s1, X0), XN))
        ra1 = _eval(xs, fs, n, min(max(eb + s1, X0), XN))
        # upper envelope of three lines on t in [0, 1]
        nt = 0
        ts[nt] = 0.0
        nt += 1
        for p in range(3):
            p0 = la0 if p == 0 else ra0
            p1 = la1 if p == 0 else ra1
            for q in range(p + 1, 3):
                q0 = ra0 if q == 1 else inner
                q1 = ra1 if q == 1 else inner
                d0 = p0 - q0
                d1 = p1 - q1
                if q0 > _NEG and d0 * d1 < 0.0:
                    t = d0 / (d0 - d1)
                    # insertion keeps ts sorted
                    r = nt
                    while r > 0 and ts[r - 1] > t:
                        ts[r] = ts[r - 1]
                        r -= 1
                    ts[r] = t
                    nt += 1
        ts[nt] = 1.0
        nt += 1
        for ti in range(nt):
            t = ts[ti]
            if ti == nt - 1 and j < m - 2:
                continue  # shared with next interval
            best = la0 + (la1 - la0) * t
            v = ra0 + (ra1 - ra0) * t
            if v > best:
                best = v
            if inner > best:
                best = inner
            out_x[cnt] = ea + (eb - ea) * t
            out_v[cnt] = best
            cnt += 1
    return out_x, out_v, cnt


def _upper_envelope(px, pv, pn, qx, qv, qn, tol):
    allx = np.sort(np.concatenate((px[:pn], qx[:qn])))
    out_x = np.empty(3 * (pn + qn) + 2)
    out_v = np.empty(3 * (pn + qn) + 2)
    cnt = 0
    prev_x = 0.0
    prev_dp = 0.0
    prev_ok = False
    for i in range(allx.size):
        x = allx[i]
        in_p = px[0] - tol <= x <= px[pn - 1] + tol
        in_q = qx[0] - tol <= x <= qx[qn - 1] + tol
        vp = _eval(px, pv, pn, x) if in_p else _NEG
        vq = _eval(qx, qv, qn, x) if in_q else _NEG
        both = in_p and in_q
        dp = vp - vq
        if both and prev_ok and dp * prev_dp < 0.0:
            t = prev_dp / (prev_dp - dp)
            xc = prev_x + (x - prev_x) * t
            out_x[cnt] = xc
            out_v[cnt] = max(_eval(px, pv, pn, xc), _eval(qx, qv, qn, xc))
            cnt += 1
        out_x[cnt] = x
        out_v[cnt] = max(vp, vq)
        cnt += 1
        prev_ok = both
        prev_dp = dp
        prev_x = x
    return out_x, out_v, cnt


def _restrict(xs, vs, n, lo, hi, tol):
    if hi < xs[0] - tol or lo > xs[n - 1] + tol or hi < lo - tol:
        return xs[:0].copy(), vs[:0].copy(), 0
    lo = max(lo, xs[0])
    hi = min(hi, xs[n - 1])
    if hi < lo:
        hi = lo
    out_x = np.empty(n + 2)
    out_v = np.empty(n + 2)
    out_x[0] = lo
    out_v[0] = _eval(xs, vs, n, lo)
    cnt = 1
    for i in range(n):
        if lo + tol < xs[i] < hi - tol:
            out_x[cnt] = xs[i]
            out_v[cnt] = vs[i]
            cnt += 1
    if hi > lo + tol:
        out_x[cnt] = hi
        out_v[cnt] = _eval(xs, vs, n, hi)
        cnt += 1
    return out_x, out_v, cnt


def _backward(c_up, c_dn, dlo, dhi, cum_lo, cum_hi, tol):
    """Value function of the running deviation after step 0, for one scenario."""
    L = dlo.shape[0]
    xs = np.zeros(1)
    vs = np.zeros(1)
    n = 1
    for k in range(L - 1, 0, -1):
        fp = vs[:n] + c_up[k] * xs[:n]
        px, pv, pn = _window_max(xs[:n], fp, n, 0.0, dhi[k], tol)
        for i in range(pn):
            pv[i] -= c_up[k] * px[i]
        fq = vs[:n] + c_dn[k] * xs[:n]
        qx, qv, qn = _window_max(xs[:n], fq, n, dlo[k], 0.0, tol)
        for i in range(qn):
            qv[i] -= c_dn[k] * qx[i]
        ex, evv, en = _upper_envelope(px, pv, pn, qx, qv, qn, tol)
        en = _simplify(ex, evv, en, tol)
        xs, vs, n = _restrict(ex, evv, en, cum_lo[k - 1], cum_hi[k - 1], tol)
        if n == 0:
            return xs, vs, 0
        n = _simplify(xs, vs, n, tol)
    return xs, vs, n


def _solve_core(c_prev, c_up, c_dn, dlo, dhi, cum_lo, cum_hi, pi):
    """Returns ``(dev0, objective, feasible, max_breakpoints)``."""
    S, L = c_up.shape
    tol = 1e-10
    nmax = 1
    for k in range(L):
        scale = abs(cum_lo[k]) + abs(cum_hi[k])
        if scale > 1e9:
            return 0.0, 0.0, False, 0
    width = np.zeros(S, dtype=np.int64)
    X = np.empty((S, 64))
    Vv = np.empty((S, 64))
    dom_lo = -1e300
    dom_hi = 1e300
    for s in range(S):
        xs, vs, n = _backward(c_up[s], c_dn[s], dlo, dhi, cum_lo, cum_hi, tol)
        if n == 0:
            return 0.0, 0.0, False, 0
        if n > X.shape[1]:
            X2 = np.empty((S, 2 * n))
            V2 = np.empty((S, 2 * n))
            # grow the table; rows already filled keep their widths
            X2[:, :X.shape[1]] = X
            V2[:, :Vv.shape[1]] = Vv
            X = X2
            Vv = V2
        X[s, :n] = xs[:n]
        Vv[s, :n] = vs[:n]
        width[s] = n
        if n > nmax:
            nmax = n
        dom_lo = max(dom_lo, xs[0])
        dom_hi = min(dom_hi, xs[n - 1])
    if L == 1:
        dom_lo = max(dom_lo, cum_lo[0])
        dom_hi = min(dom_hi, cum_hi[0])
    c_lo = max(c_prev + dlo[0], dom_lo)
    c_hi = min(c_prev + dhi[0], dom_hi)
    if c_lo > c_hi + 1e-9:
        return 0.0, 0.0, False, nmax
    if c_hi < c_lo:
        c_hi = c_lo
    a0 = 0.0
    b0 = 0.0
    for s in range(S):
        a0 += pi[s] * c_up[s, 0]
        b0 += pi[s] * c_dn[s, 0]
    total = 3
    for s in range(S):
        total += width[s]
    cand = np.empty(total)
    cand[0] = c_lo
    cand[1] = c_hi
    cand[2] = min(max(c_prev, c_lo), c_hi)
    q = 3
    for s in range(S):
        for i in range(width[s]):
            x = X[s, i]
            cand[q] = min(max(x, c_lo), c_hi)
            q += 1
    best_val = -1e300
    best_d = 0.0
    for i in range(total):
        c = cand[i]
        d = c - c_prev
        val = a0 * d if d > 0 else b0 * d
        for s in range(S):
            val += pi[s] * _eval(X[s], Vv[s], width[s], c)
        if val > best_val + 1e-12 * (1.0 + abs(best_val)) or (
                abs(val - best_val) <= 1e-12 * (1.0 + abs(best_val)) and abs(d) < abs(best_d)):
            best_val = val
            best_d = d
    return best_d, best_val, True, nmax


def _compile_kernels():
    """Jitted copies of the kernels above that call each other, not the plain versions."""
    ns = {"np": np, "_NEG": _NEG, "__name__": __name__}
    for f in (_eval, _simplify, _window_max, _upper_envelope, _restrict, _backward, _solve_core):
        ns[f.__name__] = njit(types.FunctionType(f.__code__, ns, f.__name__))
    return ns["_solve_core"]


solve_core_numba = _compile_kernels() if HAS_NUMBA else _solve_core


def solve_rt_dp(c_prev, c_up, c_dn, dlo, dhi, cum_lo, cum_hi, pi, jit=None):
    """Optimal shared first-step deviation and its expected horizon value.

    ``c_up``/``c_dn`` are [S x L] objective slopes of surplus and shortage (EUR/kWh,
    tie-break included); ``dlo``/``dhi`` bound each step's deviation, ``cum_lo``/
    ``cum_hi`` the running deviation (last entry pinned to 0 for the terminal).
    """
    args = (float(c_prev), np.ascontiguousarray(c_up, dtype=np.float64),
            np.ascontiguousarray(c_dn, dtype=np.float64),
            np.ascontiguousarray(dlo, dtype=np.float64), np.ascontiguousarray(dhi, dtype=np.float64),
            np.ascontiguousarray(cum_lo, dtype=np.float64),
            np.ascontiguousarray(cum_hi, dtype=np.float64),
            np.ascontiguousarray(pi, dtype=np.float64))
    use = USE_NUMBA if jit is None else jit
    if use:
        return solve_core_numba(*args)
    return _solve_core(*args)
