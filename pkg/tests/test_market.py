import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from brpsim.market import (MARKET_HEADER, MarketDataError, MarketSeries, Spike, expand_hourly,
                           load_market_data, synthesize_market, synthesize_stress_series,
                           write_market_data)


def _write_rows(path, rows, header=",".join(MARKET_HEADER)):
    path.write_text(header + "\n" + "\n".join(",".join(str(v) for v in r) for r in rows) + "\n")
    return path


def test_three_day_file_all_balanced(tmp_path):
    rows = [(i, 50.0, 60.0, 40.0, 0) for i in range(288)]
    ms = load_market_data(_write_rows(tmp_path / "m.csv", rows))
    assert len(ms) == 288
    assert ms.n_days == 3
    assert (ms.reg_state == 0).all()


def test_bad_state_names_row(tmp_path):
    rows = [(i, 50.0, 60.0, 40.0, 3 if i == 5 else 0) for i in range(96)]
    with pytest.raises(MarketDataError) as err:
        load_market_data(_write_rows(tmp_path / "m.csv", rows))
    # header is line 1, isp 5 sits on line 7
    assert err.value.line == 7
    assert "reg_state 3" in str(err.value)


def test_hourly_prices_expand_to_isps(tmp_path):
    hourly = [10.0 * (h + 1) for h in range(24)]
    da = expand_hourly(hourly)
    rows = [(i, da[i], 0.0, 0.0, 0) for i in range(96)]
    ms = load_market_data(_write_rows(tmp_path / "m.csv", rows))
    assert list(ms.lambda_da[:4]) == [10.0] * 4
    assert ms.lambda_da[4] == 20.0
    assert ms.lambda_da[95] == 240.0


def test_uneven_hour_rejected(tmp_path):
    rows = [(i, 50.0 + (i == 2), 60.0, 40.0, 0) for i in range(96)]
    with pytest.raises(MarketDataError, match="hour 0"):
        load_market_data(_write_rows(tmp_path / "m.csv", rows))


@pytest.mark.parametrize("bad", ["x", "1.5.2"])
def test_parse_error_has_line(tmp_path, bad):
    rows = [(i, 50.0, 60.0, bad if i == 3 else 40.0, 0) for i in range(96)]
    with pytest.raises(MarketDataError) as err:
        load_market_data(_write_rows(tmp_path / "m.csv", rows))
    assert err.value.line == 5


def test_wrong_header(tmp_path):
    rows = [(i, 50.0, 60.0, 40.0, 0) for i in range(96)]
    with pytest.raises(MarketDataError):
        load_market_data(_write_rows(tmp_path / "m.csv", rows, header="a,b,c,d,e"))


def test_missing_file(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_market_data(tmp_path / "absent.csv")


def test_length_not_multiple_of_day():
    with pytest.raises(MarketDataError):
        MarketSeries(np.zeros(100), np.zeros(100), np.zeros(100), np.zeros(100))


def test_series_is_read_only():
    ms = synthesize_stress_series(1)
    with pytest.raises(ValueError):
        ms.lambda_up[0] = 1.0


def test_spike_read_back():
    ms = synthesize_stress_series(2, [{"isps": [108], "lambda_down": -400, "state": -1}], seed=4)
    assert ms.reg_state[108] == -1
    assert ms.lambda_down[108] == -400


def test_no_spikes_no_imbalance_states():
    ms = synthesize_stress_series(3, [], seed=1)
    assert set(np.unique(ms.reg_state)) == {0}


def test_spike_out_of_range():
    with pytest.raises(MarketDataError):
        synthesize_stress_series(1, [Spike((96,), -1, lambda_down=-400)])


def test_synthesis_is_deterministic(tmp_path):
    a = write_market_data(synthesize_stress_series(2, [Spike((5, 6), 1, lambda_up=300)], seed=9),
                          tmp_path / "a.csv")
    b = write_market_data(synthesize_stress_series(2, [Spike((5, 6), 1, lambda_up=300)], seed=9),
                          tmp_path / "b.csv")
    assert a.read_bytes() == b.read_bytes()


@settings(max_examples=25, deadline=None)
@given(days=st.integers(1, 4), seed=st.integers(0, 2**31 - 1))
def test_round_trip_exact(tmp_path_factory, days, seed):
    ms = synthesize_market(days, seed=seed)
    path = write_market_data(ms, tmp_path_factory.mktemp("rt") / "m.csv")
    back = load_market_data(path)
    for name in ("lambda_da", "lambda_up", "lambda_down", "reg_state", "isp_index"):
        assert np.array_equal(getattr(ms, name), getattr(back, name))


@settings(max_examples=25, deadline=None)
@given(days=st.integers(1, 5), seed=st.integers(0, 2**31 - 1))
def test_random_market_invariants(days, seed):
    ms = synthesize_market(days, seed=seed)
    assert len(ms) == 96 * days
    assert np.isin(ms.reg_state, (-1, 0, 1, 2)).all()
    hourly = ms.lambda_da.reshape(-1, 4)
    assert (hourly == hourly[:, :1]).all()
