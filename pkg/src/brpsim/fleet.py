"""EV sessions, ASAP/ALAP charging paths and virtual-battery envelopes."""
from __future__ import annotations

import csv
from dataclasses import dataclass, fields, replace
from pathlib import Path

import numpy as np

from . import kernels
from .market import DELTA_T, ISP_PER_DAY

FLEET_HEADER = ("ev_id", "arrival_isp", "departure_isp", "capacity_kwh", "p_max_kw",
                "soc_init_kwh", "e_target_kwh", "e_trip_kwh")
EV_TYPES = {50.0: 3.7, 75.0: 11.0}  # capacity kWh -> charging rate kW
_TOL = 1e-9


class FleetError(ValueError):
    pass


@dataclass(frozen=True)
class EvSession:
    arrival_isp: int
    departure_isp: int
    capacity: float
    p_max: float
    soc_init: float
    e_target: float
    e_trip: float = 0.0
    ev_id: int = 0

    @property
    def n_plugged(self) -> int:
        return self.departure_isp - self.arrival_isp

    @property
    def need(self) -> float:
        return self.e_target - self.soc_init

    def step(self, eta: float, delta_t: float = DELTA_T) -> float:
        """Largest stored-energy increment in one ISP."""
        return eta * self.p_max * delta_t

    def check(self, eta: float, delta_t: float = DELTA_T) -> None:
        if not self.arrival_isp < self.departure_isp:
            raise FleetError(f"ev {self.ev_id}: arrival {self.arrival_isp} not before departure "
                             f"{self.departure_isp}")
        if EV_TYPES.get(float(self.capacity)) != float(self.p_max):
            raise FleetError(f"ev {self.ev_id}: capacity {self.capacity} kWh does not pair with "
                             f"{self.p_max} kW")
        if not -_TOL <= self.soc_init <= self.e_target + _TOL <= self.capacity + 2 * _TOL:
            raise FleetError(f"ev {self.ev_id}: need 0 <= soc_init <= e_target <= capacity")
        if self.need / eta > self.p_max * delta_t * self.n_plugged + _TOL:
            raise FleetError(f"ev {self.ev_id}: {self.need:.3f} kWh cannot be charged in "
                             f"{self.n_plugged} ISPs")


@dataclass(frozen=True)
class EnergyPath:
    """Stored energy at the end of each plugged ISP, ``start`` being the arrival ISP."""

    start: int
    energy: np.ndarray

    @property
    def stop(self) -> int:
        return self.start + self.energy.size


def asap_path(s: EvSession, eta: float = 1.0, delta_t: float = DELTA_T) -> EnergyPath:
    k = np.arange(1, s.n_plugged + 1)
    return EnergyPath(s.arrival_isp, np.minimum(s.soc_init + s.step(eta, delta_t) * k, s.e_target))


def alap_path(s: EvSession, eta: float = 1.0, delta_t: float = DELTA_T) -> EnergyPath:
    k = np.arange(s.n_plugged - 1, -1, -1)
    return EnergyPath(s.arrival_isp, np.maximum(s.e_target - s.step(eta, delta_t) * k, s.soc_init))


@dataclass
class VirtualBattery:
    """Aggregate envelope of one EV group (kWh, kW per ISP).

    Energy dynamics: ``E[t] = E[t-1] + e_arr[t] - e_dep[t] + eta * e_buy[t]`` with
    ``E[-1] = e_init`` and ``e_lower[t] <= E[t] <= e_upper[t]``.
    """

    e_upper: np.ndarray
    e_lower: np.ndarray
    p_charge_max: np.ndarray
    e_arr: np.ndarray
    e_dep: np.ndarray
    n_parked: np.ndarray
    e_init: float = 0.0
    eta: float = 1.0
    delta_t: float = DELTA_T
    start: int = 0

    @property
    def horizon(self) -> int:
        return self.e_upper.size

    @property
    def e_max_step(self) -> np.ndarray:
        """Most energy that can be bought in each ISP (kWh)."""
        return self.p_charge_max * self.delta_t

    def window(self, start: int, stop: int, e_init: float) -> "VirtualBattery":
        sl = slice(start, stop)
        return VirtualBattery(self.e_upper[sl], self.e_lower[sl], self.p_charge_max[sl],
                              self.e_arr[sl], self.e_dep[sl], self.n_parked[sl],
                              float(e_init), self.eta, self.delta_t, self.start + start)

    def trajectory(self, e_buy) -> np.ndarray:
        """Stored energy per ISP for a given purchase profile."""
        return self.e_init + np.cumsum(self.e_arr - self.e_dep + self.eta * np.asarray(e_buy))

    def __add__(self, other: "VirtualBattery") -> "VirtualBattery":
        if (self.horizon, self.eta, self.delta_t) != (other.horizon, other.eta, other.delta_t):
            raise FleetError("can only add batteries with equal horizon, eta and delta_t")
        return VirtualBattery(self.e_upper + other.e_upper, self.e_lower + other.e_lower,
                              self.p_charge_max + other.p_charge_max, self.e_arr + other.e_arr,
                              self.e_dep + other.e_dep, self.n_parked + other.n_parked,
                              self.e_init + other.e_init, self.eta, self.delta_t, self.start)


def build_virtual_battery(sessions, horizon: int, eta: float = 1.0,
                          delta_t: float = DELTA_T) -> VirtualBattery:
    sessions = list(sessions)
    for s in sessions:
        if s.arrival_isp < 0 or s.departure_isp > horizon:
            raise FleetError(f"ev {s.ev_id}: session {s.arrival_isp}..{s.departure_isp} "
                             f"outside horizon {horizon}")
    arr = np.array([s.arrival_isp for s in sessions], dtype=np.int64)
    dep = np.array([s.departure_isp for s in sessions], dtype=np.int64)
    soc = np.array([s.soc_init for s in sessions], dtype=float)
    target = np.array([s.e_target for s in sessions], dtype=float)
    pmax = np.array([s.p_max for s in sessions], dtype=float)
    lo, up, p_sum, e_arr, e_dep, n_parked = kernels.envelope(
        arr, dep, soc, target, eta * pmax * delta_t, pmax, horizon)
    return VirtualBattery(up, lo, p_sum, e_arr, e_dep, n_parked, 0.0, eta, delta_t)


# -- session generation ---------------------------------------------------------

@dataclass(frozen=True)
class MobilityParams:
    arrival_mean_h: float = 18.0
    arrival_sd_h: float = 1.5
    departure_mean_h: float = 8.0       # next morning
    departure_sd_h: float = 1.0
    trip_min_kwh: float = 3.0
    trip_max_kwh: float = 15.0
    target_soc: float = 0.8             # fraction of capacity at departure
    p_large: float = 0.5                # share of 75 kWh / 11 kW vehicles
    max_retries: int = 50

    @classmethod
    def from_dict(cls, d: dict | None) -> "MobilityParams":
        d = dict(d or {})
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise FleetError(f"unknown mobility keys: {sorted(unknown)}")
        return cls(**d)


def _isp_of(hours, day: int) -> int:
    return int(round(hours * 4)) + day * ISP_PER_DAY


def generate_sessions(group_size: int = 100, mobility: MobilityParams | None = None,
                      seed: int = 0, days: int = 1, eta: float = 0.95,
                      delta_t: float = DELTA_T) -> list[EvSession]:
    """One overnight session per EV and day: arrive on day ``d``, leave the next morning."""
    mobility = mobility or MobilityParams()
    rng = np.random.default_rng(seed)
    sessions = []
    large = rng.random(group_size) < mobility.p_large
    for ev in range(group_size):
        capacity = 75.0 if large[ev] else 50.0
        p_max = EV_TYPES[capacity]
        target = round(mobility.target_soc * capacity, 6)
        for day in range(days):
            for _ in range(mobility.max_retries):
                arr_h = min(max(rng.normal(mobility.arrival_mean_h, mobility.arrival_sd_h), 12.0), 23.75)
                dep_h = min(max(rng.normal(mobility.departure_mean_h, mobility.departure_sd_h), 0.25), 11.75)
                a = _isp_of(arr_h, day)
                d = _isp_of(dep_h, day + 1)
                room = min(eta * p_max * delta_t * (d - a), target)
                lo_trip = mobility.trip_min_kwh
                hi_trip = min(mobility.trip_max_kwh, room)
                if hi_trip < lo_trip or d <= a:
                    continue
                trip = lo_trip if hi_trip == lo_trip else rng.uniform(lo_trip, hi_trip)
                s = EvSession(a, d, capacity, p_max, target - trip, target, trip, ev)
                try:
                    s.check(eta, delta_t)
                except FleetError:
                    continue
                sessions.append(s)
                break
            else:
                raise FleetError(f"ev {ev} day {day}: no feasible session after "
                                 f"{mobility.max_retries} draws")
    sessions.sort(key=lambda s: (s.arrival_isp, s.ev_id))
    return sessions


def fleet_horizon(days: int) -> int:
    """Horizon covering ``days`` nights plus the final morning."""
    return (days + 1) * ISP_PER_DAY


# -- fleet file -----------------------------------------------------------------

def write_fleet(sessions, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(FLEET_HEADER)
        for s in sessions:
            w.writerow([s.ev_id, s.arrival_isp, s.departure_isp, repr(float(s.capacity)),
                        repr(float(s.p_max)), repr(float(s.soc_init)), repr(float(s.e_target)),
                        repr(float(s.e_trip))])
    return path


def read_fleet(path, eta: float | None = None) -> list[EvSession]:
    path = Path(path)
    out = []
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(h.strip() for h in header) != FLEET_HEADER:
            raise FleetError(f"{path}: expected header {','.join(FLEET_HEADER)}")
        for row in reader:
            if not row:
                continue
            try:
                s = EvSession(ev_id=int(row[0]), arrival_isp=int(row[1]), departure_isp=int(row[2]),
                              capacity=float(row[3]), p_max=float(row[4]), soc_init=float(row[5]),
                              e_target=float(row[6]), e_trip=float(row[7]))
            except (ValueError, IndexError) as exc:
                raise FleetError(f"{path} line {reader.line_num}: {exc}") from None
            if eta is not None:
                s.check(eta)
            out.append(s)
    return out


def shift_sessions(sessions, offset: int) -> list[EvSession]:
    return [replace(s, arrival_isp=s.arrival_isp + offset, departure_isp=s.departure_isp + offset)
            for s in sessions]
