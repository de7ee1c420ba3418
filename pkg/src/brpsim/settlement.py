"""Ex-post imbalance settlement per ISP.

Deviations are in kWh, positive for a surplus (consumed less than scheduled),
negative for a shortage. Prices are EUR/MWh; a positive cashflow is paid to the BRP.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import kernels

SINGLE, TWO_PRICE, DUAL = "single", "two_price", "dual_price"
MECHANISMS = (SINGLE, TWO_PRICE, DUAL)
MECH_CODE = {SINGLE: kernels.SINGLE, TWO_PRICE: kernels.TWO_PRICE, DUAL: kernels.DUAL}
CODE_MECH = {v: k for k, v in MECH_CODE.items()}
LEDGER_HEADER = ("isp", "brp_id", "mechanism", "state", "dev_kwh", "price_eur_mwh", "cash_eur")


class SettlementError(ValueError):
    pass


@dataclass(frozen=True)
class SettlementRecord:
    isp: int
    mechanism: str
    reg_state: int
    dev: float
    applied_price: float
    cashflow: float


def _check_state(state):
    if state not in (-1, 0, 1, 2):
        raise SettlementError(f"invalid regulation state {state!r}")


def mid_price(lam_up, lam_down):
    return 0.5 * (lam_up + lam_down)


def _record(isp, mech, state, dev, price):
    return SettlementRecord(isp, mech, state, float(dev), float(price), float(price) * dev / 1000.0)


def settle_single(dev: float, state: int, lam_up: float, lam_down: float,
                  variant: str = "nl_simplified", isp: int = 0,
                  nl_full_guards: bool = False) -> SettlementRecord:
    """Single price: upward price when short, downward when long, mid otherwise.

    ``variant="nl_full"`` settles state 2 with the dual rule. ``nl_full_guards``
    falls back to the mid price when the upward price is below it (short system)
    or the downward price above it (long system). Both are off by default.
    """
    _check_state(state)
    if variant not in ("nl_simplified", "nl_full"):
        raise SettlementError(f"unknown single-price variant {variant!r}")
    mid = mid_price(lam_up, lam_down)
    if state == 1:
        price = mid if nl_full_guards and lam_up < mid else lam_up
    elif state == -1:
        price = mid if nl_full_guards and lam_down > mid else lam_down
    elif state == 2 and variant == "nl_full":
        price = lam_down if dev > 0 else lam_up
    else:
        price = mid
    return _record(isp, SINGLE, state, dev, price)


def settle_two_price(dev: float, state: int, lam_up: float, lam_down: float, lam_da: float,
                     isp: int = 0) -> SettlementRecord:
    _check_state(state)
    if state == 1:
        price = lam_da if dev > 0 else lam_up
    elif state == -1:
        price = lam_down if dev > 0 else lam_da
    else:
        price = mid_price(lam_up, lam_down)
    return _record(isp, TWO_PRICE, state, dev, price)


def settle_dual(dev: float, lam_up: float, lam_down: float, state: int = 0,
                isp: int = 0) -> SettlementRecord:
    price = lam_down if dev > 0 else lam_up
    return _record(isp, DUAL, state, dev, price)


def settle(mechanism: str, dev, state, lam_up, lam_down, lam_da, isp: int = 0,
           variant: str = "nl_simplified") -> SettlementRecord:
    if mechanism == SINGLE:
        return settle_single(dev, state, lam_up, lam_down, variant, isp)
    if mechanism == TWO_PRICE:
        return settle_two_price(dev, state, lam_up, lam_down, lam_da, isp)
    if mechanism == DUAL:
        _check_state(state)
        return settle_dual(dev, lam_up, lam_down, state, isp)
    raise SettlementError(f"unknown mechanism {mechanism!r}")


def select_mechanism(region_congested: bool, alt: str) -> str:
    """Mechanism for a region: the alternative when congested, single price otherwise."""
    if alt not in (TWO_PRICE, DUAL):
        raise SettlementError(f"alternative mechanism must be two_price or dual_price, got {alt!r}")
    return alt if region_congested else SINGLE


def settle_series(mechanisms, dev, states, lam_up, lam_down, lam_da, variant="nl_simplified"):
    """Vectorised settlement: ``(price, cash)`` arrays. ``mechanisms`` holds names or codes."""
    mech = np.asarray(mechanisms)
    if mech.dtype.kind in "US":
        try:
            mech = np.array([MECH_CODE[m] for m in mech], dtype=np.int64)
        except KeyError as exc:
            raise SettlementError(f"unknown mechanism {exc.args[0]!r}") from None
    states = np.asarray(states)
    if not np.isin(states, (-1, 0, 1, 2)).all():
        raise SettlementError("invalid regulation state in series")
    return kernels.settle_vector(mech, states, dev, lam_up, lam_down, lam_da,
                                 nl_full=(variant == "nl_full"))


def write_ledger(rows, path) -> Path:
    """``rows``: iterable of ``(isp, brp_id, mechanism, state, dev, price, cash)``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(LEDGER_HEADER)
        for isp, brp, mech, state, dev, price, cash in rows:
            w.writerow([int(isp), brp, mech, int(state), repr(float(dev)), repr(float(price)),
                        repr(float(cash))])
    return path
