import math

import pytest
from hypothesis import given
from hypothesis import strategies as st

from apstestbed.controllers import (OPENAPS_BRANCHES, BasalBolusController, ControllerConfig, PumpHistory,
                                    Rationale, basal_bolus_decide, calculate_iob, derive_dosing_params,
                                    openaps_decide, openaps_dispatch, temp_rate)
from apstestbed.errors import ConfigError, InsufficientHistory, NonFiniteError


def cfg(**kw):
    d = derive_dosing_params(75.0)
    base = dict(isf=d["isf"], cr=d["cr"], cf=d["cf"], basal_rate=0.9, u_2ss=1.2, bw=75.0, max_basal=10.0)
    base.update(kw)
    return ControllerConfig(**base)


@pytest.mark.parametrize("bw,tdd,cr,cf", [(75, 41.25, 10.909, 41.212), (100, 55.0, 8.182, 30.909)])
def test_dosing_params(bw, tdd, cr, cf):
    d = derive_dosing_params(bw)
    assert d["tdd"] == pytest.approx(tdd)
    assert d["cr"] == pytest.approx(cr, abs=5e-4)
    assert d["cf"] == pytest.approx(cf, abs=5e-4)


def test_basal_bolus_examples():
    c = cfg()
    d = basal_bolus_decide(130.0, None, c)
    assert d.basal == pytest.approx(0.9) and d.bolus == 0.0
    assert d.basal / 60 == pytest.approx(0.015)
    assert basal_bolus_decide(140.0, 60.0, c).bolus == pytest.approx(5.5)
    d = basal_bolus_decide(200.0, 60.0, c)
    assert d.bolus == pytest.approx(7.441, abs=5e-4)
    assert d.diagnostics.rationale == Rationale.MEAL_CORRECTION_BOLUS


def test_iob_examples():
    c = cfg(basal_rate=0.0)
    assert calculate_iob(PumpHistory([(0.0, 0.0, 2.0)]), 120.0, c) == pytest.approx(1.0)
    assert calculate_iob(PumpHistory([(0.0, 0.0, 2.0)]), 240.0, c) == pytest.approx(0.0)
    h = PumpHistory([(0.0, 0.0, 1.0), (60.0, 0.0, 1.0)])
    assert calculate_iob(h, 120.0, c) == pytest.approx(1.25)


def test_history_timestamps_must_increase():
    with pytest.raises(ValueError):
        PumpHistory([(5.0, 1.0), (5.0, 1.0)])


def test_eventual_bg_substitution():
    # cgm=200, ISF=50, IOB=1, flat history -> deviation 0
    c = cfg(isf=50.0, basal_rate=0.0)
    h = PumpHistory([(-300.0, 0.0, 0.0), (-120.0, 0.0, 2.0)])
    d = openaps_decide([200.0, 200.0, 200.0], h, None, c, now=0.0)
    assert d.diagnostics.iob == pytest.approx(1.0)
    # flat CGM but insulin activity is nonzero, so deviation offsets the predicted drop
    bgi = -50.0 * (2.0 / 240.0) * 5
    assert d.diagnostics.deviation == pytest.approx(6 * (0.0 - bgi))
    assert d.diagnostics.eventual_bg == pytest.approx(150.0 + d.diagnostics.deviation)
    # with zero activity (bolus beyond DIA) deviation is exactly 0
    c2 = cfg(isf=50.0, basal_rate=0.0)
    d2 = openaps_decide([200.0] * 3, PumpHistory([(-300.0, 0.0, 0.0)]), None, c2, now=0.0)
    assert d2.diagnostics.deviation == 0.0 and d2.diagnostics.eventual_bg == 200.0


def test_suspend_below_threshold():
    rate, why = openaps_dispatch(65.0, 5.0, 300.0, cfg())
    assert rate == 0.0 and why == Rationale.LOW_GLUCOSE_SUSPEND


def test_rising_but_low_cancels_temp():
    rate, why = openaps_dispatch(100.0, 2.0, 110.0, cfg())
    assert why == Rationale.RISING_BUT_LOW and rate == pytest.approx(0.9)


def test_temp_rate_hand_calculation():
    c = cfg(isf=50.0, basal_rate=0.9, max_basal=10.0)
    hand = 0.9 + 2 * (180 - 120) / (50 * 0.5)
    assert hand == pytest.approx(5.7)
    assert temp_rate(180.0, c) == pytest.approx(hand)
    assert temp_rate(180.0, cfg(isf=50.0, max_basal=3.0)) == 3.0


def test_insufficient_history_is_distinct_from_nan():
    with pytest.raises(InsufficientHistory):
        openaps_decide([100.0, 101.0], PumpHistory(), None, cfg(), now=0.0)
    with pytest.raises(NonFiniteError):
        openaps_decide([100.0, float("nan"), 101.0], PumpHistory(), None, cfg(), now=0.0)


def test_config_rejects_bad_target():
    with pytest.raises(ConfigError):
        cfg(bg_target=200.0)
    with pytest.raises(ConfigError):
        cfg(isf=0.0)


bg = st.floats(20.0, 450.0)


def _branch_oracle(bg, slope, ebg, target=120.0, threshold=70.0):
    fired = [
        bg < threshold,
        bg >= threshold and slope > 0 and ebg < target,
        bg >= threshold and slope < 0 and ebg > target,
        bg >= threshold and not slope < 0 and ebg > target,
        bg >= threshold and not slope > 0 and ebg < target,
        bg >= threshold and ebg == target,
    ]
    return fired


@given(bg=bg, slope=st.floats(-20, 20), ebg=st.floats(-200, 600))
def test_exactly_one_branch_fires(bg, slope, ebg):
    rate, why = openaps_dispatch(bg, slope, ebg, cfg())
    assert why in OPENAPS_BRANCHES
    fired = _branch_oracle(bg, slope, ebg)
    # the oracle merges low_temp and zero_temp; its conditions are mutually exclusive
    assert sum(fired) == 1
    index = fired.index(True)
    expected = [{Rationale.LOW_GLUCOSE_SUSPEND}, {Rationale.RISING_BUT_LOW}, {Rationale.FALLING_BUT_HIGH},
                {Rationale.HIGH_TEMP}, {Rationale.LOW_TEMP, Rationale.ZERO_TEMP}, {Rationale.AT_TARGET}][index]
    assert why in expected


@given(a=st.floats(-200, 600), b=st.floats(-200, 600))
def test_temp_rate_monotone(a, b):
    c = cfg()
    lo, hi = sorted((a, b))
    assert temp_rate(lo, c) <= temp_rate(hi, c)


@given(bg=st.floats(0.0, 69.99), slope=st.floats(-50, 50), ebg=st.floats(-500, 900))
def test_suspend_dominates(bg, slope, ebg):
    assert openaps_dispatch(bg, slope, ebg, cfg())[0] == 0.0


@given(hist=st.lists(bg, min_size=3, max_size=6), boluses=st.lists(st.floats(0, 20), min_size=0, max_size=4),
       meal=st.one_of(st.none(), st.floats(0, 300)))
def test_decisions_within_limits(hist, boluses, meal):
    c = cfg(max_basal=3.0, max_bolus=10.0)
    h = PumpHistory([(-100.0 + 10 * i, 1.0, b) for i, b in enumerate(boluses)])
    d = openaps_decide(hist, h, None, c, now=0.0)
    assert 0 <= d.basal <= c.max_basal and d.bolus == 0.0
    d = basal_bolus_decide(hist[-1], meal, c)
    assert 0 <= d.basal <= c.max_basal and 0 <= d.bolus <= c.max_bolus


@given(seq=st.lists(st.tuples(bg, st.one_of(st.none(), st.floats(0, 200))), min_size=1, max_size=20))
def test_basal_bolus_is_stateless(seq):
    c = cfg()
    ctl = BasalBolusController(c)
    for i, (g, meal) in enumerate(seq):
        d = ctl.decide(5.0 * i, g, meal)
        ctl.record_delivery(5.0 * i, d.basal, d.bolus)
        fresh = basal_bolus_decide(g, meal, c)
        assert (d.basal, d.bolus, d.diagnostics.rationale) == (fresh.basal, fresh.bolus, fresh.diagnostics.rationale)
        assert math.isfinite(d.diagnostics.iob)
