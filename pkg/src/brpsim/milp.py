"""Small exact MILP engine: bounded simplex relaxations + best-first branch and bound.

Models are stated as maximisation problems::

    max c @ x   s.t.  A_ub @ x <= b_ub,  A_eq @ x == b_eq,  lb <= x <= ub,
                      x[j] in {0, 1} for j in binaries

The native LP path runs the dense tableau kernel in :mod:`brpsim.kernels` and is
meant for small instances. ``backend="highs"`` hands the whole model to HiGHS via
scipy, which is what the full-day rolling horizon uses.
"""
from __future__ import annotations

import heapq
import itertools
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp
from scipy.optimize import Bounds, LinearConstraint, linprog, milp

from . import kernels


class SolverError(RuntimeError):
    """Raised when a model cannot be solved (infeasible, unbounded, numerical trouble)."""

    def __init__(self, message: str, certificate=None):
        super().__init__(message)
        self.certificate = certificate


def _empty(names) -> bool:
    # lazy name sequences are left alone so they are only built when read
    return names is None or (isinstance(names, (list, tuple)) and not names)


@dataclass
class MilpModel:
    c: np.ndarray
    A_ub: sp.csr_matrix
    b_ub: np.ndarray
    A_eq: sp.csr_matrix
    b_eq: np.ndarray
    lb: np.ndarray
    ub: np.ndarray
    binaries: np.ndarray                     # indices of binary variables
    names: list = field(default_factory=list)
    row_names_ub: list = field(default_factory=list)
    row_names_eq: list = field(default_factory=list)
    meta: dict = field(default_factory=dict)
    constant: float = 0.0                    # added to every reported objective

    def __post_init__(self):
        n = len(self.c)
        self.c = np.asarray(self.c, dtype=float)
        self.lb = np.asarray(self.lb, dtype=float)
        self.ub = np.asarray(self.ub, dtype=float)
        self.A_ub = sp.csr_matrix(self.A_ub if self.A_ub is not None else (0, n))
        self.A_eq = sp.csr_matrix(self.A_eq if self.A_eq is not None else (0, n))
        self.b_ub = np.asarray(self.b_ub if self.b_ub is not None else [], dtype=float)
        self.b_eq = np.asarray(self.b_eq if self.b_eq is not None else [], dtype=float)
        self.binaries = np.asarray(self.binaries, dtype=np.int64)
        if self.A_ub.shape[1] != n or self.A_eq.shape[1] != n:
            raise ValueError("constraint matrices must have one column per variable")
        if self.A_ub.shape[0] != self.b_ub.size or self.A_eq.shape[0] != self.b_eq.size:
            raise ValueError("right-hand side length does not match constraint rows")
        if self.lb.size != n or self.ub.size != n:
            raise ValueError("bounds must have one entry per variable")
        if not np.isfinite(self.lb).all():
            raise ValueError("all lower bounds must be finite")
        if self.binaries.size and (self.binaries.min() < 0 or self.binaries.max() >= n):
            raise ValueError("binary index out of range")
        if _empty(self.names):
            self.names = [f"x{j}" for j in range(n)]
        if _empty(self.row_names_ub):
            self.row_names_ub = [f"ub{i}" for i in range(self.A_ub.shape[0])]
        if _empty(self.row_names_eq):
            self.row_names_eq = [f"eq{i}" for i in range(self.A_eq.shape[0])]

    @property
    def n_vars(self) -> int:
        return self.c.size

    def objective(self, x) -> float:
        return float(self.c @ x) + self.constant

    def max_violation(self, x) -> float:
        x = np.asarray(x, dtype=float)
        v = [0.0, float(np.max(self.lb - x, initial=0.0)), float(np.max(x - self.ub, initial=0.0))]
        if self.A_ub.shape[0]:
            v.append(float(np.max(self.A_ub @ x - self.b_ub, initial=0.0)))
        if self.A_eq.shape[0]:
            v.append(float(np.max(np.abs(self.A_eq @ x - self.b_eq), initial=0.0)))
        return max(v)


@dataclass
class LpResult:
    status: str                 # optimal | infeasible | unbounded | iteration_limit
    x: np.ndarray | None = None
    objective: float = -np.inf  # of the maximisation, without model.constant
    iterations: int = 0
    violated_rows: list = field(default_factory=list)


@dataclass
class MilpSolution:
    status: str                 # optimal | time_limit | node_limit
    x: np.ndarray
    objective: float
    bound: float
    optimal: bool
    nodes: int = 0
    gap: float = 0.0


# -- LP relaxations -----------------------------------------------------------

def _lp_native(model: MilpModel, lb, ub, max_iter=None) -> LpResult:
    n = model.n_vars
    A_ub = model.A_ub.toarray()
    A_eq = model.A_eq.toarray()
    m_ub, m_eq = A_ub.shape[0], A_eq.shape[0]
    width = ub - lb
    if (width < -1e-12).any():
        return LpResult("infeasible", violated_rows=[])
    width = np.maximum(width, 0.0)
    b_ub = model.b_ub - A_ub @ lb
    b_eq = model.b_eq - A_eq @ lb

    # rows: [A_ub | I | art] and [A_eq | 0 | art]; artificials only where needed
    neg_ub = b_ub < 0
    art_rows = np.concatenate([np.flatnonzero(neg_ub), m_ub + np.arange(m_eq)])
    k = art_rows.size
    m = m_ub + m_eq
    N = n + m_ub + k
    T = np.zeros((m, N))
    rhs = np.concatenate([b_ub, b_eq])
    T[:m_ub, :n] = A_ub
    T[m_ub:, :n] = A_eq
    T[np.arange(m_ub), n + np.arange(m_ub)] = 1.0
    flip = rhs < 0
    T[flip] *= -1.0
    rhs = np.abs(rhs)
    T[art_rows, n + m_ub + np.arange(k)] = 1.0

    basis = np.empty(m, dtype=np.int64)
    basis[:m_ub] = n + np.arange(m_ub)
    basis[art_rows] = n + m_ub + np.arange(k)
    status = np.zeros(N, dtype=np.int64)
    status[basis] = 2
    upper = np.concatenate([width, np.full(m_ub, np.inf), np.full(k, np.inf)])
    xB = rhs.copy()
    if max_iter is None:
        max_iter = 50 * (m + N) + 1000
    bland_after = 10 * (m + N)
    total_it = 0

    if k:
        cost1 = np.zeros(N)
        cost1[n + m_ub:] = 1.0
        code, it = kernels.simplex(T, xB, basis, status, upper, cost1, max_iter, bland_after)
        total_it += it
        if code != kernels.LP_OPTIMAL:
            return LpResult("iteration_limit", iterations=total_it)
        art_val = np.zeros(k)
        is_art = basis >= n + m_ub
        art_val[basis[is_art] - n - m_ub] = xB[is_art]
        if art_val.sum() > 1e-7 * max(1.0, np.abs(rhs).max(initial=0.0)):
            bad = [int(art_rows[i]) for i in np.flatnonzero(art_val > 1e-9)]
            return LpResult("infeasible", iterations=total_it, violated_rows=bad)
        upper[n + m_ub:] = 0.0

    cost2 = np.zeros(N)
    cost2[:n] = -model.c
    code, it = kernels.simplex(T, xB, basis, status, upper, cost2, max_iter, bland_after)
    total_it += it
    if code == kernels.LP_UNBOUNDED:
        return LpResult("unbounded", iterations=total_it)
    if code != kernels.LP_OPTIMAL:
        return LpResult("iteration_limit", iterations=total_it)
    full = np.where(status == 1, upper, 0.0)
    full[basis] = xB
    x = lb + np.clip(full[:n], 0.0, width)
    return LpResult("optimal", x=x, objective=float(model.c @ x), iterations=total_it)


def _lp_highs(model: MilpModel, lb, ub) -> LpResult:
    if (ub - lb < -1e-12).any():
        return LpResult("infeasible")
    res = linprog(-model.c,
                  A_ub=model.A_ub if model.A_ub.shape[0] else None,
                  b_ub=model.b_ub if model.A_ub.shape[0] else None,
                  A_eq=model.A_eq if model.A_eq.shape[0] else None,
                  b_eq=model.b_eq if model.A_eq.shape[0] else None,
                  bounds=np.column_stack([lb, ub]), method="highs")
    if res.status == 0:
        return LpResult("optimal", x=res.x, objective=float(model.c @ res.x), iterations=res.nit)
    if res.status == 2:
        return LpResult("infeasible")
    if res.status == 3:
        return LpResult("unbounded")
    return LpResult("iteration_limit")


def solve_lp(model: MilpModel, lb=None, ub=None, engine: str = "native") -> LpResult:
    """Solve the LP relaxation of ``model`` (binaries relaxed to [0, 1])."""
    lb = model.lb if lb is None else np.asarray(lb, dtype=float)
    ub = model.ub if ub is None else np.asarray(ub, dtype=float)
    if engine == "native":
        return _lp_native(model, lb, ub)
    if engine == "highs":
        return _lp_highs(model, lb, ub)
    raise ValueError(f"unknown LP engine {engine!r}")


# -- branch and bound -----------------------------------------------------------

def _most_fractional(x, binaries, int_tol):
    if not binaries.size:
        return -1
    frac = np.abs(x[binaries] - np.round(x[binaries]))
    k = int(np.argmax(frac))
    return int(binaries[k]) if frac[k] > int_tol else -1


def _polish(model, x, lp_engine):
    """Fix binaries at their rounded values and re-solve the remaining LP."""
    if not model.binaries.size:
        return x
    lb = model.lb.copy()
    ub = model.ub.copy()
    vals = np.round(x[model.binaries])
    lb[model.binaries] = vals
    ub[model.binaries] = vals
    res = solve_lp(model, lb, ub, lp_engine)
    return res.x if res.status == "optimal" else x


def solve_milp(model: MilpModel, gap_tol: float = 1e-6, time_limit_s: float | None = None,
               lp_engine: str = "native", max_nodes: int = 200_000,
               int_tol: float = 1e-6) -> MilpSolution:
    """Best-first branch and bound over the binaries, branching on the most fractional one.

    Raises :class:`SolverError` with the violated rows when the root relaxation is
    infeasible or when no integer-feasible point exists.
    """
    start = time.perf_counter()
    root = solve_lp(model, engine=lp_engine)
    if root.status == "infeasible":
        rows = [model.row_names_ub[i] if i < len(model.row_names_ub)
                else model.row_names_eq[i - len(model.row_names_ub)] for i in root.violated_rows]
        raise SolverError("LP relaxation infeasible", certificate=rows)
    if root.status != "optimal":
        raise SolverError(f"LP relaxation not solved: {root.status}")

    counter = itertools.count()
    heap = [(-root.objective, next(counter), model.lb.copy(), model.ub.copy(), root.x)]
    best_x, best_obj = None, -np.inf
    nodes = 0
    status = "optimal"

    def closed(bound):
        return best_x is not None and bound - best_obj <= gap_tol * max(1.0, abs(best_obj))

    while heap:
        neg_bound, _, lb, ub, x = heap[0]
        if closed(-neg_bound):
            break
        heapq.heappop(heap)
        if time_limit_s is not None and time.perf_counter() - start > time_limit_s:
            heapq.heappush(heap, (neg_bound, next(counter), lb, ub, x))
            status = "time_limit"
            break
        if nodes >= max_nodes:
            heapq.heappush(heap, (neg_bound, next(counter), lb, ub, x))
            status = "node_limit"
            break
        nodes += 1
        j = _most_fractional(x, model.binaries, int_tol)
        if j < 0:
            obj = float(model.c @ x)
            if obj > best_obj:
                best_x, best_obj = x, obj
            continue
        for val in (0.0, 1.0):
            clb, cub = lb.copy(), ub.copy()
            clb[j] = cub[j] = val
            res = solve_lp(model, clb, cub, lp_engine)
            if res.status != "optimal":
                continue
            if best_x is not None and res.objective <= best_obj + gap_tol * max(1.0, abs(best_obj)):
                continue
            heapq.heappush(heap, (-res.objective, next(counter), clb, cub, res.x))

    if best_x is None:
        if status != "optimal":
            raise SolverError(f"no integer solution found before {status}")
        raise SolverError("no integer-feasible point", certificate=["binaries"])
    bound = max([best_obj] + [-h[0] for h in heap])
    x = _polish(model, best_x, lp_engine)
    obj = float(model.c @ x)
    gap = (bound - obj) / max(1.0, abs(obj))
    return MilpSolution(status=status, x=x, objective=obj + model.constant,
                        bound=bound + model.constant, optimal=(status == "optimal"),
                        nodes=nodes, gap=max(gap, 0.0))


def solve_highs(model: MilpModel, gap_tol: float = 1e-6, time_limit_s: float | None = None) -> MilpSolution:
    """Whole-model solve with HiGHS (LP when there are no binaries)."""
    if not model.binaries.size:
        res = _lp_highs(model, model.lb, model.ub)
        if res.status != "optimal":
            raise SolverError(f"HiGHS LP {res.status}")
        obj = res.objective + model.constant
        return MilpSolution("optimal", res.x, obj, obj, True)
    integrality = np.zeros(model.n_vars)
    integrality[model.binaries] = 1
    cons = []
    if model.A_ub.shape[0]:
        cons.append(LinearConstraint(model.A_ub, -np.inf, model.b_ub))
    if model.A_eq.shape[0]:
        cons.append(LinearConstraint(model.A_eq, model.b_eq, model.b_eq))
    options = {"mip_rel_gap": gap_tol}
    if time_limit_s is not None:
        options["time_limit"] = time_limit_s
    res = milp(-model.c, constraints=cons, integrality=integrality,
               bounds=Bounds(model.lb, model.ub), options=options)
    if res.x is None:
        raise SolverError(f"HiGHS MILP failed: {res.message}")
    x = _polish(model, res.x, "highs")
    obj = float(model.c @ x)
    bound = -res.mip_dual_bound if getattr(res, "mip_dual_bound", None) is not None else obj
    return MilpSolution("optimal" if res.status == 0 else "time_limit", x, obj + model.constant,
                        max(bound, obj) + model.constant, res.status == 0,
                        nodes=int(getattr(res, "mip_node_count", 0) or 0),
                        gap=float(getattr(res, "mip_gap", 0.0) or 0.0))


def solve(model: MilpModel, backend: str = "highs", gap_tol: float = 1e-6,
          time_limit_s: float | None = None) -> MilpSolution:
    """Dispatch: ``native`` (own B&B + own simplex), ``bnb-highs`` (own B&B, HiGHS LPs), ``highs``."""
    if backend == "native":
        return solve_milp(model, gap_tol, time_limit_s, lp_engine="native")
    if backend == "bnb-highs":
        return solve_milp(model, gap_tol, time_limit_s, lp_engine="highs")
    if backend == "highs":
        return solve_highs(model, gap_tol, time_limit_s)
    raise ValueError(f"unknown backend {backend!r}")


# -- LP text format -------------------------------------------------------------

def _terms(row_idx, row_val, names):
    parts = []
    for j, v in zip(row_idx, row_val):
        sign = "-" if v < 0 else "+"
        parts.append(f"{sign} {abs(v):.12g} {names[j]}")
    text = " ".join(parts) if parts else "0 " + names[0]
    return text[2:] if text.startswith("+ ") else text


def write_lp(model: MilpModel, path) -> Path:
    """Dump the model in CPLEX LP format for cross-checking with external solvers."""
    path = Path(path)
    names = [n.replace("[", "(").replace("]", ")").replace(",", "_") for n in model.names]
    nz = np.flatnonzero(model.c)
    lines = ["\\ written by brpsim", "Maximize", " obj: " + _terms(nz, model.c[nz], names),
             "Subject To"]
    for block, rhs, rnames, op in ((model.A_ub, model.b_ub, model.row_names_ub, "<="),
                                   (model.A_eq, model.b_eq, model.row_names_eq, "=")):
        for i in range(block.shape[0]):
            lo, hi = block.indptr[i], block.indptr[i + 1]
            lines.append(f" {rnames[i]}: {_terms(block.indices[lo:hi], block.data[lo:hi], names)} "
                         f"{op} {rhs[i]:.12g}")
    lines.append("Bounds")
    for j, nm in enumerate(names):
        hi = "+inf" if np.isinf(model.ub[j]) else f"{model.ub[j]:.12g}"
        lines.append(f" {model.lb[j]:.12g} <= {nm} <= {hi}")
    if model.binaries.size:
        lines.append("Binaries")
        lines.append(" " + " ".join(names[j] for j in model.binaries))
    lines.append("End")
    path.write_text("\n".join(lines) + "\n")
    return path
