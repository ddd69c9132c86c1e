from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from apstestbed.errors import ConfigError
from apstestbed.uva import (NOMINAL, UvaState, endogenous_production, initial_state, uva_default_cohort,
                            uva_derivatives, uva_observe_bg, uva_steady_state, uva_step)


def _fixed_point_by_iteration(p):
    """Independent steady state: alternate the two glucose balances until they agree."""
    rate = p.u_2ss * p.bw
    flux = rate / p.bw
    ins = flux / p.k_e / p.v_i
    x, x_l = ins - p.i_b, ins
    vm = p.v_m0 + p.v_mx * x
    g_p, g_t = p.g_pb, p.g_pb
    for _ in range(10000):
        g_t = p.k_1 * g_p / (p.k_2 + vm / (p.k_m0 + g_t))
        g_p_new = (p.kp_1 - p.kp_3 * x_l - p.u_ii + p.k_2 * g_t) / (p.kp_2 + p.k_1)
        if abs(g_p_new - g_p) < 1e-13:
            g_p = g_p_new
            break
        g_p = g_p_new
    return UvaState(g_p, g_t, x_l, x, flux / p.k_d, flux / p.k_a, flux / p.k_e), rate


def test_basal_steady_state_has_zero_derivatives():
    fixture, rate = _fixed_point_by_iteration(NOMINAL)
    assert max(abs(v) for v in uva_derivatives(fixture, NOMINAL, rate)) < 1e-9
    solved = uva_steady_state(NOMINAL)
    np.testing.assert_allclose(solved.as_array(), fixture.as_array(), rtol=1e-9, atol=1e-9)
    assert uva_observe_bg(solved, NOMINAL) == pytest.approx(120.0, abs=1e-9)


@pytest.mark.parametrize("g_p,expected", [(300.0, 159.57), (0.0, 0.0), (1.88 * 120.0, 120.0)])
def test_observe_bg_examples(g_p, expected):
    s = replace(uva_steady_state(NOMINAL), g_p=g_p)
    assert uva_observe_bg(s, NOMINAL) == pytest.approx(expected, abs=5e-3)


def test_egp_clamped_at_zero():
    g_p = 2 * NOMINAL.kp_1 / NOMINAL.kp_2
    assert NOMINAL.kp_1 - NOMINAL.kp_2 * g_p < 0
    assert endogenous_production(g_p, 0.0, NOMINAL) == 0.0


@given(g1=st.floats(0.0, 3000.0), g2=st.floats(0.0, 3000.0), x1=st.floats(0.0, 2000.0), x2=st.floats(0.0, 2000.0))
def test_egp_nonincreasing(g1, g2, x1, x2):
    lo_g, hi_g = sorted((g1, g2))
    lo_x, hi_x = sorted((x1, x2))
    assert endogenous_production(hi_g, lo_x, NOMINAL) <= endogenous_production(lo_g, lo_x, NOMINAL)
    assert endogenous_production(lo_g, hi_x, NOMINAL) <= endogenous_production(lo_g, lo_x, NOMINAL)


def test_hepatic_action_relaxes_at_rate_k_i():
    s0 = uva_steady_state(NOMINAL)
    x_l_star = s0.i_p / NOMINAL.v_i
    s = replace(s0, x_l=0.0)
    t = 120
    s = uva_step(s, NOMINAL, NOMINAL.u_2ss * NOMINAL.bw, t, substep=0.01)
    # first-order lag from 0: x_l(t) = x* (1 - exp(-k_i t))
    assert s.x_l == pytest.approx(x_l_star * (1 - np.exp(-NOMINAL.k_i * t)), rel=2e-4)


def test_basal_fixed_point_drift_under_1_over_24h():
    s0 = uva_steady_state(NOMINAL)
    s = uva_step(s0, NOMINAL, NOMINAL.u_2ss * NOMINAL.bw, 24 * 60)
    assert abs(uva_observe_bg(s, NOMINAL) - 120.0) < 1.0


def test_cohort_members_sit_at_their_basal():
    for p in uva_default_cohort(5, 3):
        s = uva_steady_state(p)
        assert uva_observe_bg(s, p) == pytest.approx(p.g_pb / p.v_g, rel=1e-9)
    assert uva_default_cohort(3, 1) == uva_default_cohort(3, 1)


def test_profile_requires_positive_basal_egp():
    with pytest.raises(ConfigError):
        replace(NOMINAL, kp_1=NOMINAL.kp_2 * NOMINAL.g_pb * 0.5)


doses = st.lists(st.floats(0.0, 3000.0), min_size=3, max_size=30)


@given(doses=doses, meal=st.floats(0.0, 1e5))
def test_compartments_stay_nonnegative(doses, meal):
    s = initial_state(NOMINAL, 120.0).with_meal(meal)
    for d in doses:
        s = uva_step(s, NOMINAL, d, 5.0)
        assert min(s.g_p, s.g_t, s.x_l, s.i_sc1, s.i_sc2, s.i_p) >= 0


@given(doses=doses, extra=st.lists(st.floats(0.0, 1000.0), min_size=30, max_size=30))
def test_more_insulin_never_raises_bg(doses, extra):
    a = b = initial_state(NOMINAL, 150.0).with_meal(50e3)
    for d, e in zip(doses, extra):
        a = uva_step(a, NOMINAL, d + e, 5.0)
        b = uva_step(b, NOMINAL, d, 5.0)
        assert uva_observe_bg(a, NOMINAL) <= uva_observe_bg(b, NOMINAL) + 1e-9


def test_step_is_deterministic():
    s = initial_state(NOMINAL, 140.0).with_meal(30e3)
    a = uva_step(s, NOMINAL, 800.0, 60.0)
    b = uva_step(s, NOMINAL, 800.0, 60.0)
    assert a == b
