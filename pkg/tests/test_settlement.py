import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from brpsim import kernels
from brpsim.settlement import (DUAL, SINGLE, TWO_PRICE, SettlementError, select_mechanism, settle,
                               settle_dual, settle_series, settle_single, settle_two_price,
                               write_ledger)

from oracles import oracle_cash

prices = st.floats(-1000, 1000, allow_nan=False)
devs = st.floats(-5000, 5000, allow_nan=False)
states = st.sampled_from([-1, 0, 1, 2])
mechs = st.sampled_from([SINGLE, TWO_PRICE, DUAL])


def test_zero_dev_zero_cash():
    for m in (SINGLE, TWO_PRICE, DUAL):
        for s in (-1, 0, 1, 2):
            assert settle(m, 0.0, s, 123.0, -456.0, 78.0).cashflow == 0.0


def test_single_examples():
    assert settle_single(500, 1, 150, 0).cashflow == pytest.approx(75.0)
    assert settle_single(-1000, -1, 0, -400).cashflow == pytest.approx(400.0)
    assert settle_single(1000, 0, 100, 50).applied_price == 75.0
    assert settle_single(1000, 2, 100, 50).applied_price == 75.0


def test_single_nl_full_state_two_is_dual():
    assert settle_single(1000, 2, 100, 50, variant="nl_full").applied_price == 50.0
    assert settle_single(-1000, 2, 100, 50, variant="nl_full").applied_price == 100.0


def test_single_nl_guards_default_off():
    # upward price below mid only matters with the guard on
    assert settle_single(100, 1, 10, 50).applied_price == 10
    assert settle_single(100, 1, 10, 50, nl_full_guards=True).applied_price == 30


def test_two_price_examples():
    assert settle_two_price(1000, 1, 150, 20, 50).cashflow == pytest.approx(50.0)
    assert settle_two_price(-1000, 1, 150, 20, 50).cashflow == pytest.approx(-150.0)
    for dev in (700.0, -700.0):
        assert settle_two_price(dev, 0, 100, 50, 30).applied_price == 75.0
    assert settle_two_price(1000, -1, 150, 20, 50).applied_price == 20
    assert settle_two_price(-1000, -1, 150, 20, 50).applied_price == 50


def test_dual_examples():
    assert settle_dual(1000, 150, 20).cashflow == pytest.approx(20.0)
    assert settle_dual(-1000, 150, 20).cashflow == pytest.approx(-150.0)
    assert settle_dual(-1000, 0, 20).cashflow == 0.0


def test_invalid_state_and_mechanism():
    with pytest.raises(SettlementError):
        settle_single(1.0, 3, 1, 1)
    with pytest.raises(SettlementError):
        settle_two_price(1.0, -2, 1, 1, 1)
    with pytest.raises(SettlementError):
        settle("pay_as_bid", 1.0, 0, 1, 1, 1)
    with pytest.raises(SettlementError):
        settle_series(["single"], [1.0], [5], [1.0], [1.0], [1.0])


def test_select_mechanism():
    assert select_mechanism(False, TWO_PRICE) == SINGLE
    assert select_mechanism(False, DUAL) == SINGLE
    assert select_mechanism(True, TWO_PRICE) == TWO_PRICE
    assert select_mechanism(True, DUAL) == DUAL
    with pytest.raises(SettlementError):
        select_mechanism(True, SINGLE)


def test_congested_long_surplus_dual_equals_single():
    m = select_mechanism(True, DUAL)
    a = settle(m, 800.0, -1, 120.0, -60.0, 40.0)
    b = settle(SINGLE, 800.0, -1, 120.0, -60.0, 40.0)
    assert a.applied_price == b.applied_price == -60.0
    assert a.cashflow == b.cashflow


@pytest.mark.parametrize("alt", [TWO_PRICE, DUAL])
def test_table_rows_mapping(alt):
    """Without congestion everything is single price. With congestion, deviations in the
    system's own direction settle as under single price; counter-system ones (surplus
    when short, shortage when long) settle under the alternative."""
    up, dn, da = 150.0, -40.0, 60.0
    for congested in (False, True):
        m = select_mechanism(congested, alt)
        for state, aligned, counter in ((1, -500.0, 500.0), (-1, 500.0, -500.0)):
            want = settle(SINGLE, aligned, state, up, dn, da).cashflow
            assert settle(m, aligned, state, up, dn, da).cashflow == want
            got = settle(m, counter, state, up, dn, da).applied_price
            single = settle(SINGLE, counter, state, up, dn, da).applied_price
            if congested:
                assert got == settle(alt, counter, state, up, dn, da).applied_price
                assert got != single
            else:
                assert got == single


def test_ledger_header(tmp_path):
    p = write_ledger([(0, "a1", SINGLE, 1, 2.0, 3.0, 0.006)], tmp_path / "l.csv")
    assert p.read_text().splitlines() == ["isp,brp_id,mechanism,state,dev_kwh,price_eur_mwh,cash_eur",
                                          "0,a1,single,1,2.0,3.0,0.006"]


@settings(max_examples=300, deadline=None)
@given(m=mechs, s=states, dev=devs, up=prices, dn=prices, da=prices)
def test_matches_oracle(m, s, dev, up, dn, da):
    assert abs(settle(m, dev, s, up, dn, da).cashflow - oracle_cash(m, s, dev, up, dn, da)) <= 1e-9


@settings(max_examples=300, deadline=None)
@given(m=mechs, s=states, dev=devs, up=prices, dn=prices, da=prices, alpha=st.floats(0, 10))
def test_linearity(m, s, dev, up, dn, da, alpha):
    a = settle(m, alpha * dev, s, up, dn, da).cashflow
    b = alpha * settle(m, dev, s, up, dn, da).cashflow
    assert a == pytest.approx(b, rel=1e-12, abs=1e-9)


@settings(max_examples=300, deadline=None)
@given(s=st.sampled_from([-1, 1]), mag=st.floats(0.001, 5000), p=st.lists(prices, min_size=3, max_size=3))
def test_counter_system_single_beats_two_price(s, mag, p):
    dn, da, up = sorted(p)
    dev = mag if s == 1 else -mag     # surplus when short, shortage when long
    assert settle(SINGLE, dev, s, up, dn, da).cashflow >= settle(TWO_PRICE, dev, s, up, dn, da).cashflow - 1e-12


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), n=st.integers(1, 200), nl_full=st.booleans())
def test_vector_kernels_agree(seed, n, nl_full):
    rng = np.random.default_rng(seed)
    mech = rng.integers(0, 3, n)
    state = rng.choice([-1, 0, 1, 2], n)
    dev = rng.normal(0, 500, n)
    dev[rng.random(n) < 0.1] = 0.0
    up, dn, da = rng.normal(80, 100, n), rng.normal(0, 200, n), rng.normal(60, 30, n)
    p1, c1 = kernels.settle_numba(mech, state, dev, up, dn, da, nl_full)
    p2, c2 = kernels.settle_numpy(mech, state, dev, up, dn, da, nl_full)
    assert np.array_equal(p1, p2) and np.array_equal(c1, c2)
    names = np.array([SINGLE, TWO_PRICE, DUAL])[mech]
    price, cash = settle_series(names, dev, state, up, dn, da,
                                "nl_full" if nl_full else "nl_simplified")
    for i in range(n):
        rec = settle(names[i], dev[i], state[i], up[i], dn[i], da[i],
                     variant="nl_full" if nl_full else "nl_simplified")
        assert cash[i] == rec.cashflow
