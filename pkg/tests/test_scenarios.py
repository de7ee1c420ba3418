import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from brpsim.scenarios import PriceScenarioSet, da_scenarios, dump_scenarios, rt_fan


def test_zero_noise_da_rows_equal_base():
    base = np.linspace(10, 100, 24)
    ds = da_scenarios(base, 10, 0.0, seed=3)
    assert (ds.scenarios == base).all()


def test_da_probabilities():
    ds = da_scenarios(np.ones(8), 10, 0.2)
    assert np.allclose(ds.probabilities, 0.1)
    assert abs(ds.probabilities.sum() - 1.0) <= 1e-12


def test_da_noise_stddev():
    ds = da_scenarios(np.full(5, 100.0), 1000, 0.2, seed=11)
    for t in range(5):
        assert 18.0 <= ds.scenarios[:, t].std(ddof=1) <= 22.0


def test_da_rejects_bad_args():
    with pytest.raises(ValueError):
        da_scenarios(np.ones(4), 0)
    with pytest.raises(ValueError):
        da_scenarios(np.ones(4), 3, -0.1)


def test_zero_sigma_fan_identical_rows():
    up = np.linspace(50, 80, 96)
    dn = np.linspace(-20, 10, 96)
    fan = rt_fan(up, dn, 10, sigma_rel=0.0)
    assert fan.n_scenarios == 25
    assert (fan.scenarios == up[10:]).all()
    assert (fan.down == dn[10:]).all()


def test_fan_rows_agree_at_t0():
    rng = np.random.default_rng(0)
    up, dn = rng.normal(60, 30, 96), rng.normal(0, 60, 96)
    fan = rt_fan(up, dn, 40, seed=2)
    assert (fan.scenarios[:, 0] == up[40]).all()
    assert (fan.down[:, 0] == dn[40]).all()
    assert fan.start == 40


def test_fan_deterministic_and_keyed_on_t0():
    up, dn = np.full(96, 50.0), np.full(96, -30.0)
    a, b = rt_fan(up, dn, 5, seed=1), rt_fan(up, dn, 5, seed=1)
    assert np.array_equal(a.scenarios, b.scenarios) and np.array_equal(a.down, b.down)
    c = rt_fan(up, dn, 6, seed=1)
    assert not np.array_equal(a.scenarios[:, 2:], c.scenarios[:, 1:])


def test_fan_out_of_range():
    with pytest.raises(ValueError):
        rt_fan(np.ones(10), np.ones(10), 10)
    with pytest.raises(ValueError):
        rt_fan(np.ones(10), np.ones(10), -1)


def test_negative_prices_preserved():
    up, dn = np.full(20, -100.0), np.full(20, -400.0)
    fan = rt_fan(up, dn, 0, sigma_rel=0.1, seed=4)
    assert (fan.down < 0).all() and (fan.scenarios < 0).all()


def test_bad_probabilities():
    with pytest.raises(ValueError):
        PriceScenarioSet(np.ones((2, 3)), [0.5, 0.6], "da")
    with pytest.raises(ValueError):
        PriceScenarioSet(np.ones((2, 3)), [0.5, 0.5], "bogus")


def test_dump(tmp_path):
    fan = rt_fan(np.full(8, 10.0), np.full(8, 5.0), 2, n_up=2, n_down=2)
    lines = dump_scenarios(fan, tmp_path / "s.csv").read_text().splitlines()
    assert lines[0] == "scenario,isp,probability,price_up,price_down"
    assert len(lines) == 1 + 4 * 6


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), t0=st.integers(0, 95), n_up=st.integers(1, 6),
       n_down=st.integers(1, 6), sigma=st.floats(0.0, 1.0))
def test_fan_structure(seed, t0, n_up, n_down, sigma):
    rng = np.random.default_rng(seed)
    up, dn = rng.normal(60, 40, 96), rng.normal(-10, 80, 96)
    fan = rt_fan(up, dn, t0, n_up, n_down, sigma, seed=seed)
    assert fan.n_scenarios == n_up * n_down
    assert abs(fan.probabilities.sum() - 1.0) <= 1e-12
    assert np.allclose(fan.probabilities, 1.0 / (n_up * n_down), rtol=0, atol=1e-15)
    U = fan.scenarios.reshape(n_up, n_down, -1)
    D = fan.down.reshape(n_up, n_down, -1)
    # row (i, j) carries up-draw i and down-draw j
    assert (U == U[:, :1, :]).all()
    assert (D == D[:1, :, :]).all()
