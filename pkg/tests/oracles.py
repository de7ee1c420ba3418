"""Independent reference implementations used as test oracles.

Nothing here imports the code under test except plain data containers, so a
mistake in the package cannot hide behind the same mistake in its oracle.
"""
import itertools

import numpy as np
from scipy.optimize import linprog

# (mechanism, regulation state, deviation side) -> which price settles it.
# side is "+" for a surplus and "-" for a shortage (zero deviation never matters).
_BRANCHES = {}
for _side in "+-":
    for _st in (-1, 0, 1, 2):
        _BRANCHES[("single", _st, _side)] = {1: "up", -1: "down"}.get(_st, "mid")
        _BRANCHES[("dual_price", _st, _side)] = "down" if _side == "+" else "up"
_BRANCHES.update({
    ("two_price", 1, "+"): "da", ("two_price", 1, "-"): "up",
    ("two_price", -1, "+"): "down", ("two_price", -1, "-"): "da",
    ("two_price", 0, "+"): "mid", ("two_price", 0, "-"): "mid",
    ("two_price", 2, "+"): "mid", ("two_price", 2, "-"): "mid",
})


def oracle_price(mech, state, dev, up, down, da):
    which = _BRANCHES[(mech, state, "+" if dev > 0 else "-")]
    return {"up": up, "down": down, "da": da, "mid": (up + down) / 2.0}[which]


def oracle_cash(mech, state, dev, up, down, da):
    # EUR = EUR/MWh * kWh / 1000
    return oracle_price(mech, state, dev, up, down, da) * dev / 1000.0


def enumerate_binaries(model):
    """Best objective over every 0/1 assignment of the binaries, each branch an LP.

    Returns ``(objective, x)`` or ``(None, None)`` when every branch is infeasible.
    """
    bins = list(model.binaries)
    best, best_x = None, None
    A_ub = model.A_ub.toarray() if model.A_ub.shape[0] else None
    A_eq = model.A_eq.toarray() if model.A_eq.shape[0] else None
    for combo in itertools.product((0.0, 1.0), repeat=len(bins)):
        lb = model.lb.copy()
        ub = model.ub.copy()
        for j, v in zip(bins, combo):
            lb[j] = ub[j] = v
        res = linprog(-model.c, A_ub=A_ub, b_ub=model.b_ub if A_ub is not None else None,
                      A_eq=A_eq, b_eq=model.b_eq if A_eq is not None else None,
                      bounds=list(zip(lb, ub)), method="highs")
        if res.status != 0:
            continue
        obj = float(model.c @ res.x) + model.constant
        if best is None or obj > best:
            best, best_x = obj, res.x
    return best, best_x


def brute_force_stats(overloaded_isps, isps_per_day=96):
    """Table-style counters from a plain list of overloaded ISP indices."""
    isps = sorted(set(overloaded_isps))
    days = sorted({i // isps_per_day for i in isps})
    weeks = sorted({d // 7 for d in days})
    return len(isps), len(days), len(weeks), 0.25 * len(isps)
