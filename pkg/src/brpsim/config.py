"""Simulation configuration loaded from YAML or JSON.

Keys mirror the :class:`SimConfig` field names exactly; unknown keys are rejected.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np
import yaml

from .fleet import FleetError, MobilityParams
from .market import ISP_PER_DAY, MarketSeries, Spike, load_market_data, synthesize_market, \
    synthesize_stress_series
from .settlement import DUAL, MECHANISMS, SINGLE, TWO_PRICE

SCOPES = ("none", "global", "local")
DATA_DIR = Path(__file__).resolve().parent / "data"
STRESS_CONFIG = DATA_DIR / "stress_3day.yaml"
BACKENDS = ("dp", "highs", "native", "bnb-highs")


class ConfigError(ValueError):
    pass


def _reject_unknown(cls, d: dict, where: str):
    unknown = set(d) - {f.name for f in fields(cls)}
    if unknown:
        raise ConfigError(f"{where}: unknown keys {sorted(unknown)}")


def _profile(value, n: int, what: str) -> np.ndarray:
    """Scalar, hourly day (24), ISP day (96, tiled) or full-length profile in MW."""
    arr = np.atleast_1d(np.asarray(value, dtype=float))
    if arr.size == 1:
        return np.full(n, float(arr[0]))
    if arr.size == 24:
        arr = np.repeat(arr, ISP_PER_DAY // 24)
    if arr.size == ISP_PER_DAY:
        return np.tile(arr, -(-n // ISP_PER_DAY))[:n]
    if arr.size == n:
        return arr
    raise ConfigError(f"{what}: need 1, 24, {ISP_PER_DAY} or {n} values, got {arr.size}")


@dataclass
class RegionSpec:
    region_id: str
    line_rating: float
    groups: list
    baseload: object = 0.0
    pv: object = 0.0

    @classmethod
    def from_dict(cls, d: dict) -> "RegionSpec":
        _reject_unknown(cls, d, "region")
        try:
            spec = cls(**d)
        except TypeError as exc:
            raise ConfigError(f"region: {exc}") from None
        if not (isinstance(spec.line_rating, (int, float)) and spec.line_rating > 0):
            raise ConfigError(f"region {spec.region_id}: line_rating must be a positive number")
        if not spec.groups:
            raise ConfigError(f"region {spec.region_id}: needs at least one group")
        spec.region_id = str(spec.region_id)
        spec.groups = [str(g) for g in spec.groups]
        return spec

    def build(self, n: int):
        from .grid import RegionConfig
        return RegionConfig(self.region_id, float(self.line_rating),
                            _profile(self.baseload, n, f"region {self.region_id} baseload"),
                            _profile(self.pv, n, f"region {self.region_id} pv"), tuple(self.groups))


@dataclass
class Seeds:
    market: int = 0
    fleet: int = 0
    da: int = 0
    rt: int = 0


@dataclass
class SimConfig:
    regions: list
    days: int = 3
    retail_price: float = 250.0
    eta: float = 0.95
    base_mechanism: str = SINGLE
    alt_mechanism: str = TWO_PRICE
    scope: str = "none"
    seeds: Seeds = field(default_factory=Seeds)
    market_file: str | None = None
    market_kind: str = "stress"         # used when no market file: stress | random
    spikes: list = field(default_factory=list)
    group_size: int = 100
    mobility: dict = field(default_factory=dict)
    fleet_dir: str | None = None
    n_da_scenarios: int = 10
    da_noise: float = 0.2
    n_up: int = 5
    n_down: int = 5
    rt_sigma: float = 0.5
    lookahead: int = 48
    threshold: float = 1.0
    worst_case: bool = True
    visible_ahead: int = 1
    settlement_variant: str = "nl_simplified"
    backend: str = "dp"
    workers: int = 1
    base_dir: str = "."

    def __post_init__(self):
        if isinstance(self.seeds, dict):
            _reject_unknown(Seeds, self.seeds, "seeds")
            self.seeds = Seeds(**self.seeds)
        self.regions = [r if isinstance(r, RegionSpec) else RegionSpec.from_dict(r) for r in self.regions]
        self.validate()

    def validate(self):
        if not self.regions:
            raise ConfigError("at least one region is required")
        if not 0 < self.eta <= 1:
            raise ConfigError(f"eta must lie in (0, 1], got {self.eta}")
        if not math.isfinite(self.retail_price):
            raise ConfigError("retail_price must be finite")
        if self.scope not in SCOPES:
            raise ConfigError(f"scope must be one of {SCOPES}, got {self.scope!r}")
        if self.base_mechanism not in MECHANISMS:
            raise ConfigError(f"unknown base_mechanism {self.base_mechanism!r}")
        if self.alt_mechanism not in (TWO_PRICE, DUAL):
            raise ConfigError(f"alt_mechanism must be two_price or dual_price, got {self.alt_mechanism!r}")
        if self.backend not in BACKENDS:
            raise ConfigError(f"backend must be one of {BACKENDS}")
        if self.market_kind not in ("stress", "random"):
            raise ConfigError("market_kind must be stress or random")
        if self.settlement_variant not in ("nl_simplified", "nl_full"):
            raise ConfigError("settlement_variant must be nl_simplified or nl_full")
        for name in ("days", "group_size", "n_da_scenarios", "n_up", "n_down"):
            if int(getattr(self, name)) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.lookahead < 0 or self.visible_ahead < 0 or self.workers < 0:
            raise ConfigError("lookahead, visible_ahead and workers must be >= 0")
        if self.da_noise < 0 or self.rt_sigma < 0:
            raise ConfigError("noise parameters must be non-negative")
        groups = [g for r in self.regions for g in r.groups]
        if len(groups) != len(set(groups)):
            raise ConfigError("every group must belong to exactly one region")
        ids = [r.region_id for r in self.regions]
        if len(ids) != len(set(ids)):
            raise ConfigError("region ids must be unique")
        try:
            MobilityParams.from_dict(self.mobility)
        except (FleetError, TypeError) as exc:
            raise ConfigError(f"mobility: {exc}") from None

    @property
    def groups(self) -> list:
        return [g for r in self.regions for g in r.groups]

    @property
    def horizon(self) -> int:
        return self.days * ISP_PER_DAY

    def region_of(self, group: str) -> str:
        for r in self.regions:
            if group in r.groups:
                return r.region_id
        raise KeyError(group)

    def resolve(self, path: str | None) -> Path | None:
        if path is None:
            return None
        p = Path(path)
        return p if p.is_absolute() else Path(self.base_dir) / p

    def market(self) -> MarketSeries:
        if self.market_file:
            series = load_market_data(self.resolve(self.market_file))
        elif self.market_kind == "stress":
            # one extra day so the last day-ahead window keeps its lookahead
            series = synthesize_stress_series(self.days + 1, [Spike.from_dict(s) for s in self.spikes],
                                              seed=self.seeds.market)
        else:
            series = synthesize_market(self.days + 1, seed=self.seeds.market)
        if len(series) < self.horizon:
            raise ConfigError(f"market data covers {len(series)} ISPs, {self.horizon} needed")
        return series

    def to_dict(self) -> dict:
        d = asdict(self)
        d.pop("base_dir")
        return d

    @classmethod
    def from_dict(cls, d: dict, base_dir=".") -> "SimConfig":
        if not isinstance(d, dict):
            raise ConfigError("configuration must be a mapping")
        _reject_unknown(cls, d, "config")
        if "regions" not in d:
            raise ConfigError("config: 'regions' is required")
        d = dict(d)
        d.setdefault("base_dir", str(base_dir))
        try:
            return cls(**d)
        except TypeError as exc:
            raise ConfigError(f"config: {exc}") from None


def load_config(path) -> SimConfig:
    path = Path(path)
    try:
        data = yaml.safe_load(path.read_text())
    except (OSError, yaml.YAMLError) as exc:
        raise ConfigError(f"{path}: {exc}") from None
    return SimConfig.from_dict(data, base_dir=path.parent)
