import numpy as np
import pytest

from brpsim.config import ConfigError, SimConfig, load_config
from brpsim.market import synthesize_stress_series
from brpsim.orchestrator import (CaseSpec, StageError, build_batteries, group_sessions,
                                 mechanism_schedules, run_case, write_group_fleets)
from brpsim.grid import CongestionFlags
from brpsim.milp import SolverError

from builders import flat_market, two_region_cfg as _cfg


# -- configuration --------------------------------------------------------------

@pytest.mark.parametrize("patch", [
    {"eta": 0.0}, {"eta": 1.2}, {"retail_price": float("inf")}, {"scope": "regional"},
    {"alt_mechanism": "single"}, {"backend": "cplex"}, {"bogus": 1}, {"days": 0},
    {"seeds": {"market": 1, "weather": 2}}, {"mobility": {"speed": 3}},
])
def test_config_rejects(patch):
    with pytest.raises(ConfigError):
        _cfg(**patch)


def test_config_group_in_two_regions():
    with pytest.raises(ConfigError):
        _cfg(regions=[dict(region_id="A", line_rating=1, groups=["g"]),
                      dict(region_id="B", line_rating=1, groups=["g"])])


def test_config_profile_lengths():
    cfg = _cfg(regions=[dict(region_id="A", line_rating=1, groups=["g"], baseload=list(range(24)))])
    reg = cfg.regions[0].build(96)
    assert reg.baseload[4] == 1.0 and reg.baseload[95] == 23.0
    bad = _cfg(regions=[dict(region_id="A", line_rating=1, groups=["g"], baseload=[1.0, 2.0])])
    with pytest.raises(ConfigError):
        bad.regions[0].build(96)


def test_config_yaml_round_trip(tmp_path):
    import yaml
    cfg = _cfg()
    path = tmp_path / "c.yaml"
    path.write_text(yaml.safe_dump(cfg.to_dict()))
    assert load_config(path).to_dict() == cfg.to_dict()


def test_config_missing_market_file(tmp_path):
    cfg = _cfg(market_file="nope.csv", base_dir=str(tmp_path))
    with pytest.raises(FileNotFoundError):
        cfg.market()


def test_case_spec_rules():
    assert CaseSpec.from_name("proposed-dp", "local").label == "proposed-dp/local"
    assert CaseSpec.from_name("sp").label == "sp"
    with pytest.raises(ValueError):
        CaseSpec.from_name("sp", "local")
    with pytest.raises(ValueError):
        CaseSpec.from_name("xx")
    with pytest.raises(ValueError):
        CaseSpec("x", "local", "single", None)


def test_schedules_by_scope():
    n = 4
    flags = {"A": CongestionFlags("A", np.array([0, 1, 0, 0], bool)),
             "B": CongestionFlags("B", np.array([0, 0, 1, 0], bool))}
    none = mechanism_schedules(CaseSpec.from_name("tp"), flags, n)
    assert none["A"] == ["two_price"] * 4
    loc = mechanism_schedules(CaseSpec.from_name("proposed-dp", "local"), flags, n)
    assert loc["A"] == ["single", "dual_price", "single", "single"]
    assert loc["B"] == ["single", "single", "dual_price", "single"]
    glob = mechanism_schedules(CaseSpec.from_name("proposed-tp", "global"), flags, n)
    assert glob["A"] == glob["B"] == ["single", "two_price", "two_price", "single"]


# -- runs -----------------------------------------------------------------------

def test_flat_prices_benefit_is_day_ahead_margin():
    cfg = _cfg(rt_sigma=0.0, spikes=[])
    res = run_case(cfg, CaseSpec.from_name("sp"), market=flat_market(2, da=60.0))
    for g in res.groups:
        assert not res.traces[g].dev.any()
        assert res.cashflow[g] == 0.0
    assert res.benefit() == pytest.approx(sum(res.da_margin.values()))


@pytest.fixture(scope="module")
def local_run():
    cfg = _cfg()
    return cfg, run_case(cfg, CaseSpec.from_name("proposed-tp", "local"))


def test_benefit_consistent_with_traces(local_run):
    cfg, res = local_run
    market = cfg.market()
    n = cfg.horizon
    total = 0.0
    for g in res.groups:
        margin = res.eprograms[g].e_da @ (cfg.retail_price - market.lambda_da[:n]) / 1000.0
        cash = sum(r[6] for r in res.ledger if r[1] == g)
        total += margin + cash
        assert np.allclose([r[4] for r in res.ledger if r[1] == g], res.traces[g].dev)
    assert res.benefit() == pytest.approx(total, abs=1e-6)


def test_mechanism_consistency(local_run):
    _, res = local_run
    for g in res.groups:
        sched = res.schedules[res.region_of[g]]
        assert res.traces[g].mechanism == sched
        assert [r[2] for r in res.ledger if r[1] == g] == sched
        flags = res.flags[res.region_of[g]].flags
        assert sched == ["two_price" if f else "single" for f in flags]


def test_ledger_order(local_run):
    _, res = local_run
    keys = [(r[0], res.groups.index(r[1])) for r in res.ledger]
    assert keys == sorted(keys)
    assert len(res.ledger) == len(res.groups) * res.meta["horizon"]


def test_envelope_safety_end_to_end(local_run):
    cfg, res = local_run
    vbs = build_batteries(cfg, group_sessions(cfg))
    n = cfg.horizon
    for g in res.groups:
        vb = vbs[g]
        for e in (res.eprograms[g].e_da, res.traces[g].e_rt):
            E = vb.window(0, n, vb.e_init).trajectory(e)
            assert (E >= vb.e_lower[:n] - 1e-9).all() and (E <= vb.e_upper[:n] + 1e-9).all()
            assert (e >= -1e-12).all() and (e <= vb.e_max_step[:n] + 1e-9).all()


def test_deterministic_and_parallel_identical(local_run):
    cfg, res = local_run
    again = run_case(cfg, CaseSpec.from_name("proposed-tp", "local"))
    assert again.ledger == res.ledger
    cfg2 = _cfg(workers=2)
    par = run_case(cfg2, CaseSpec.from_name("proposed-tp", "local"))
    assert par.ledger == res.ledger


def test_local_scope_relieves_flagged_isps(local_run):
    cfg, loc = local_run
    sp = run_case(cfg, CaseSpec.from_name("sp"))
    glob = run_case(cfg, CaseSpec.from_name("proposed-tp", "global"))
    flagged = loc.flags["A"].flags
    assert flagged.any()
    assert sp.loading["A"].overload.any()
    assert not (loc.loading["A"].overload & flagged).any()
    unflagged = ~flagged
    assert np.array_equal(loc.loading["B"].loading[unflagged], sp.loading["B"].loading[unflagged])
    assert sp.benefit() > loc.benefit() > glob.benefit()


def test_fleet_files_drive_the_run(tmp_path):
    cfg = _cfg()
    paths = write_group_fleets(cfg, tmp_path)
    assert [p.name for p in paths] == ["fleet_a1.csv", "fleet_b1.csv"]
    from_files = group_sessions(_cfg(fleet_dir=str(tmp_path)))
    assert from_files == group_sessions(cfg)


def test_short_market_rejected():
    with pytest.raises(ConfigError, match="96 ISPs"):
        run_case(_cfg(), CaseSpec.from_name("sp"), market=synthesize_stress_series(1))


def test_stage_error_carries_context(monkeypatch):
    import brpsim.orchestrator as orch

    def fail(vb, *a, **k):
        raise SolverError("no optimum")
    monkeypatch.setattr(orch, "solve_da_stage", fail)
    with pytest.raises(StageError) as err:
        run_case(_cfg(), CaseSpec.from_name("sp"))
    assert err.value.stage == "day-ahead" and err.value.isp == 0
    assert "isp 0" in str(err.value)
