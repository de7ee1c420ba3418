import csv

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from brpsim.grid import LoadingTrace
from brpsim.metrics import (BENEFIT_HEADER, CONGESTION_HEADER, REPORT_FILES, SCATTER_HEADER,
                            CaseSummary, benefit_summary, congestion_frequency, emit_report,
                            extract_payload, load_cases, pct_delta, report_tables,
                            round_half_away, write_case_dir)
from brpsim.orchestrator import CaseSpec, run_case

from oracles import brute_force_stats
from builders import two_region_cfg as _cfg


def _trace(overloaded, n=96 * 10, rid="A"):
    load = np.full(n, 0.5)
    load[list(overloaded)] = 1.2
    z = np.zeros(n)
    return LoadingTrace(rid, np.arange(n), load * 4.0, load, z, np.zeros(n, bool))


# -- congestion counters --------------------------------------------------------

def test_no_overloads_all_zero():
    st_ = congestion_frequency(_trace([]))
    assert (st_.isps, st_.days, st_.weeks, st_.hours) == (0, 0, 0, 0.0)


def test_four_overloads_one_day():
    st_ = congestion_frequency(_trace([40, 41, 42, 43]))
    assert (st_.isps, st_.days, st_.weeks, st_.hours) == (4, 1, 1, 1.0)


def test_week_boundary():
    st_ = congestion_frequency(_trace([5, 8 * 96 + 3]))
    assert (st_.days, st_.weeks) == (2, 2)
    same_week = congestion_frequency(_trace([5, 6 * 96 + 3]))
    assert (same_week.days, same_week.weeks) == (2, 1)


def test_loading_exactly_at_limit_not_counted():
    tr = _trace([])
    tr.loading[3] = 1.0
    assert congestion_frequency(tr).isps == 0


def test_isp_overloaded_in_two_traces_counts_once():
    st_ = congestion_frequency([_trace([7, 8]), _trace([8, 9], rid="B")])
    assert st_.isps == 3


@settings(max_examples=80, deadline=None)
@given(hits=st.sets(st.integers(0, 96 * 30 - 1), max_size=60))
def test_counters_match_brute_force(hits):
    st_ = congestion_frequency(_trace(sorted(hits), n=96 * 30))
    assert (st_.isps, st_.days, st_.weeks, st_.hours) == brute_force_stats(hits)
    assert st_.hours == 0.25 * st_.isps
    assert st_.weeks <= st_.days <= st_.isps


# -- benefit table --------------------------------------------------------------

def test_benefit_deltas_round_to_one_decimal():
    rows = benefit_summary({"sp": 7617.0, "tp": 6998.0, "dp": 6380.0})
    assert rows == [("sp", 7617.0, 0.0), ("tp", 6998.0, -8.1), ("dp", 6380.0, -16.2)]
    assert round(abs(rows[1][2])) == 8 and round(abs(rows[2][2])) == 16


def test_identical_cases_zero_delta():
    assert [r[2] for r in benefit_summary({"sp": 12.5, "x": 12.5})] == [0.0, 0.0]


def test_baseline_selection():
    rows = benefit_summary({"a": 100.0, "sp": 50.0})
    assert dict((r[0], r[2]) for r in rows) == {"a": 100.0, "sp": 0.0}
    rows = benefit_summary({"a": 100.0, "b": 50.0})
    assert rows[1][2] == -50.0
    assert benefit_summary({}) == []
    with pytest.raises(ZeroDivisionError):
        pct_delta(1.0, 0.0)


def test_rounding_half_away_from_zero():
    assert round_half_away(0.25) == 0.3
    assert round_half_away(-0.25) == -0.3
    assert round_half_away(2.675, 2) == 2.68
    assert str(round_half_away(-0.04)) == "0.0"


@settings(max_examples=200, deadline=None)
@given(base=st.floats(1.0, 1e5), v=st.floats(-1e5, 1e5))
def test_delta_recomputable(base, v):
    (_, _, d0), (_, b, d) = benefit_summary({"sp": base, "x": v})
    assert d0 == 0.0
    assert abs(d - (b - base) / base * 100.0) <= 0.05 + 1e-9


# -- report files ---------------------------------------------------------------

def test_empty_result_set_header_only(tmp_path):
    paths = emit_report([], tmp_path)
    assert [p.stem for p in paths] == list(REPORT_FILES)
    for p in paths:
        assert len(p.read_text().splitlines()) == 1
    assert (tmp_path / "benefit_summary.csv").read_text().strip() == ",".join(BENEFIT_HEADER)


@pytest.fixture(scope="module")
def stress_cases():
    cfg = _cfg()
    return [CaseSummary.from_result(run_case(cfg, CaseSpec.from_name(n, s)))
            for n, s in (("sp", "none"), ("proposed-dp", "local"))]


def test_csv_and_svg_payloads_identical(tmp_path, stress_cases):
    csvs = emit_report(stress_cases, tmp_path / "c", "csv")
    svgs = emit_report(stress_cases, tmp_path / "s", "svg")
    for c, s in zip(csvs, svgs):
        assert s.read_text().startswith("<svg")
        assert extract_payload(s.read_text()) == c.read_text()
    with pytest.raises(ValueError):
        emit_report(stress_cases, tmp_path, "png")


def test_overload_rows_match_stats(tmp_path, stress_cases):
    emit_report(stress_cases, tmp_path)
    with (tmp_path / "loading_trace.csv").open() as fh:
        rows = list(csv.DictReader(fh))
    with (tmp_path / "congestion_stats.csv").open() as fh:
        stats = {(r["case"], r["region"]): r for r in csv.DictReader(fh)}
    assert list(stats[("sp", "A")].keys()) == list(CONGESTION_HEADER)
    for c in stress_cases:
        for tr in c.loading:
            got = sorted(int(r["isp"]) for r in rows
                         if r["case"] == c.label and r["region"] == tr.region_id
                         and r["overload"] == "true")
            assert got == sorted(tr.isps[tr.loading > 1.0].tolist())
            assert int(stats[(c.label, tr.region_id)]["isps"]) == len(got)
    assert int(stats[("sp", "A")]["isps"]) > 0


def test_scatter_rows_are_nonzero_deviations(tmp_path, stress_cases):
    emit_report(stress_cases, tmp_path)
    with (tmp_path / "deviation_scatter.csv").open() as fh:
        reader = csv.reader(fh)
        assert tuple(next(reader)) == SCATTER_HEADER
        rows = list(reader)
    want = sum(1 for c in stress_cases for r in c.ledger if r[4] != 0.0)
    assert len(rows) == want > 0


def test_benefit_rows_recomputable(stress_cases):
    header, rows = report_tables(stress_cases)["benefit_summary"]
    base = rows[0][1]
    for _, b, d in rows:
        assert d == pct_delta(b, base)


def test_reports_deterministic_and_pure(tmp_path, stress_cases):
    before = [c.benefit for c in stress_cases]
    a = [p.read_text() for p in emit_report(stress_cases, tmp_path / "a", "svg")]
    b = [p.read_text() for p in emit_report(stress_cases, tmp_path / "b", "svg")]
    assert a == b
    assert [c.benefit for c in stress_cases] == before


def test_case_dir_round_trip(tmp_path):
    cfg = _cfg(days=1, spikes=[])
    res = run_case(cfg, CaseSpec.from_name("tp"))
    write_case_dir(res, tmp_path / "tp", cfg.to_dict())
    (loaded,) = load_cases(tmp_path)
    assert loaded.label == "tp" and loaded.benefit == res.benefit()
    assert loaded.ledger == [tuple(r) for r in res.ledger]
    direct = emit_report([CaseSummary.from_result(res)], tmp_path / "d")
    again = emit_report([loaded], tmp_path / "e")
    assert [p.read_text() for p in direct] == [p.read_text() for p in again]
    with pytest.raises(FileNotFoundError):
        load_cases(tmp_path / "d")
