"""Equiprobable price scenario sets: DA forecasts and the real-time imbalance-price fan."""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

KINDS = ("da", "rt_up", "rt_down", "rt_joint")


@dataclass(frozen=True)
class PriceScenarioSet:
    """Rows are scenarios, columns ISPs (EUR/MWh).

    ``rt_joint`` sets carry both ``scenarios`` (upward prices) and ``down``.
    ``start`` is the absolute ISP of column 0.
    """

    scenarios: np.ndarray
    probabilities: np.ndarray
    kind: str
    down: np.ndarray | None = None
    start: int = 0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"kind must be one of {KINDS}")
        sc = np.atleast_2d(np.asarray(self.scenarios, dtype=float))
        object.__setattr__(self, "scenarios", sc)
        p = np.asarray(self.probabilities, dtype=float)
        object.__setattr__(self, "probabilities", p)
        if p.size != sc.shape[0]:
            raise ValueError("one probability per scenario row required")
        if abs(p.sum() - 1.0) > 1e-12:
            raise ValueError(f"probabilities sum to {p.sum()!r}")
        if self.down is not None:
            dn = np.atleast_2d(np.asarray(self.down, dtype=float))
            if dn.shape != sc.shape:
                raise ValueError("down matrix must match the up matrix")
            object.__setattr__(self, "down", dn)

    @property
    def n_scenarios(self) -> int:
        return self.scenarios.shape[0]

    @property
    def horizon(self) -> int:
        return self.scenarios.shape[1]

    @property
    def up(self) -> np.ndarray:
        return self.scenarios

    def expected(self) -> np.ndarray:
        return self.probabilities @ self.scenarios


def _equal(n: int) -> np.ndarray:
    p = np.full(n, 1.0 / n)
    # put the rounding residue on the last entry so the sum is exactly 1
    p[-1] = 1.0 - p[:-1].sum()
    return p


def da_scenarios(base, n: int = 10, noise_sigma_rel: float = 0.2, seed: int = 0,
                 start: int = 0) -> PriceScenarioSet:
    """``n`` rows of ``base * (1 + eps)`` with ``eps ~ N(0, noise_sigma_rel)``."""
    if n < 1:
        raise ValueError("need at least one scenario")
    if noise_sigma_rel < 0:
        raise ValueError("noise must be non-negative")
    base = np.asarray(base, dtype=float)
    rng = np.random.default_rng(seed)
    eps = rng.normal(0.0, noise_sigma_rel, size=(n, base.size)) if noise_sigma_rel else 0.0
    return PriceScenarioSet(base[None, :] * (1.0 + eps) * np.ones((n, 1)), _equal(n), "da", start=start)


def rt_fan(actual_up, actual_down, t0: int, n_up: int = 5, n_down: int = 5, sigma_rel: float = 0.5,
           seed: int = 0, stop: int | None = None) -> PriceScenarioSet:
    """Joint up/down price fan over ISPs ``t0..stop-1`` (``stop`` defaults to series end).

    Column 0 carries the actual prices in every row; later columns get independent
    multiplicative Gaussian errors. Row ``i * n_down + j`` pairs up-draw ``i`` with
    down-draw ``j``. The RNG is keyed on ``(seed, t0)`` only.
    """
    actual_up = np.asarray(actual_up, dtype=float)
    actual_down = np.asarray(actual_down, dtype=float)
    n = actual_up.size
    stop = n if stop is None else stop
    if not 0 <= t0 < n or not t0 < stop <= n:
        raise ValueError(f"t0={t0} outside horizon 0..{n - 1}")
    if sigma_rel < 0:
        raise ValueError("sigma must be non-negative")
    up = actual_up[t0:stop]
    dn = actual_down[t0:stop]
    rng = np.random.default_rng([int(seed), int(t0)])
    eps_up = rng.normal(0.0, sigma_rel, size=(n_up, up.size))
    eps_dn = rng.normal(0.0, sigma_rel, size=(n_down, dn.size))
    eps_up[:, 0] = 0.0
    eps_dn[:, 0] = 0.0
    up_rows = up[None, :] * (1.0 + eps_up)
    dn_rows = dn[None, :] * (1.0 + eps_dn)
    joint_up = np.repeat(up_rows, n_down, axis=0)
    joint_dn = np.tile(dn_rows, (n_up, 1))
    return PriceScenarioSet(joint_up, _equal(n_up * n_down), "rt_joint", down=joint_dn, start=t0)


def dump_scenarios(fan: PriceScenarioSet, path) -> Path:
    """One row per (scenario, isp)."""
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["scenario", "isp", "probability", "price_up", "price_down"])
        for s in range(fan.n_scenarios):
            for k in range(fan.horizon):
                dn = "" if fan.down is None else repr(float(fan.down[s, k]))
                w.writerow([s, fan.start + k, repr(float(fan.probabilities[s])),
                            repr(float(fan.scenarios[s, k])), dn])
    return path
