import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from apstestbed.engine import Plant
from apstestbed.errors import ConfigError, Unidentifiable
from apstestbed.mvp import NOMINAL, mvp_default_cohort
from apstestbed.sysid import (FitData, FitSpec, build_regressors, fit_profile, ols, replay_mse,
                              synthetic_trace)


def _minute_trace(profile, minutes=2000, seed=0):
    """Per-minute BG straight from the simulator, with varied insulin and two meals."""
    rng = np.random.default_rng(seed)
    insulin = np.repeat(rng.uniform(0.0, 0.06, size=minutes // 20), 20)
    meals = ((200.0, 60.0), (1100.0, 40.0))
    plant = Plant.at("mvp", profile, 140.0, insulin[0] * 60, meals)
    bg = np.empty(minutes)
    bg[0] = plant.bg
    out = np.empty(minutes)
    plant.advance(insulin, out)
    bg[1:] = out[:-1]
    return FitData(bg, insulin, meals, cadence=1.0)


def test_zero_insulin_column_vanishes_and_s_i_unidentifiable():
    data = FitData(np.linspace(100, 200, 300), np.zeros(300), (), basal_rate=0.0)
    reg = build_regressors(data)
    assert np.all(reg.X[:, 2] == 0.0)
    with pytest.raises(Unidentifiable) as exc:
        ols(reg)
    assert exc.value.params == ("s_i",)


def test_constant_bg_is_an_equilibrium():
    bg = 150.0
    data = FitData(np.full(300, bg), np.zeros(300), (), basal_rate=0.0)
    for method in ("integral", "central", "forward"):
        reg = build_regressors(data, method=method)
        assert np.all(reg.y[reg.mask] == 0.0)
    # minimum-norm least squares on the two live columns lands on EGP = GEZI * BG
    X = reg.X[reg.mask][:, :2]
    theta, *_ = np.linalg.lstsq(X, reg.y[reg.mask], rcond=None)
    assert theta[0] == pytest.approx(theta[1] * bg, abs=1e-12)
    with pytest.raises(Unidentifiable):
        ols(reg)


@pytest.mark.parametrize("method", ["integral", "forward"])
def test_regressor_equation_exact_at_one_minute_cadence(method):
    p = mvp_default_cohort(4, 11)[2]
    reg = build_regressors(_minute_trace(p), p.params(), method=method)
    truth = np.array([p.egp, p.gezi, p.s_i])
    resid = reg.y - reg.X @ truth
    if method == "forward":
        resid = resid[:-1]  # the last forward difference is one-sided
    else:
        resid = resid[reg.mask]
    assert np.max(np.abs(resid)) < 1e-8


def test_ols_residuals_orthogonal_to_regressors():
    records, _ = synthetic_trace(NOMINAL, days=3, seed=1, noise_sd=2.0)
    reg = build_regressors(FitData.from_records(records), method="integral", smooth_window=5)
    theta, diag = ols(reg)
    X, y = reg.X[reg.mask], reg.y[reg.mask]
    r = y - X @ theta
    # relative to column and residual scale so units don't matter
    rel = np.abs(X.T @ r) / (np.linalg.norm(X, axis=0) * np.linalg.norm(r))
    assert rel.max() < 1e-8
    assert diag["normal_equation_max"] < 1e-8


@pytest.fixture(scope="module")
def cohort_fit():
    truth = mvp_default_cohort(6, 21)[4]
    records, _ = synthetic_trace(truth, days=11, seed=4)
    data = FitData.from_records(records, observed="bg_true")
    return truth, data, fit_profile(FitSpec(bw=truth.bw), data)


def test_fit_beats_every_cohort_default(cohort_fit):
    truth, data, result = cohort_fit
    start = int(10 * 1440 / 5)
    whole = data.window(0, start + 288)
    for guess in mvp_default_cohort(6, 21):
        if guess == truth:
            continue
        guess = guess.__class__(**{**guess.params(), **{k: getattr(truth, k) for k in FitSpec().fixed_params}})
        assert result.eval_mse <= replay_mse(guess, whole, start=start)


def test_fit_reports_isf_from_1700_rule(cohort_fit):
    _, _, result = cohort_fit
    assert result.isf == pytest.approx(1700.0 / result.tdd)
    assert result.train_mse >= 0 and result.eval_mse >= 0


def test_fitspec_validation():
    with pytest.raises(ConfigError):
        FitSpec(model="uva")
    with pytest.raises(ConfigError):
        FitSpec(fixed_params={"egp": 1.0})
    with pytest.raises(ConfigError):
        FitSpec(smooth_window=4)
    with pytest.raises(ConfigError):
        FitData(np.zeros(5), np.zeros(4))


def test_window_longer_than_trace_rejected(cohort_fit):
    _, data, _ = cohort_fit
    with pytest.raises(ConfigError):
        fit_profile(FitSpec(train_window=20), data)


@settings(max_examples=10)
@given(seed=st.integers(0, 1000))
def test_noiseless_minute_data_recovers_exactly(seed):
    p = mvp_default_cohort(3, seed)[0]
    reg = build_regressors(_minute_trace(p, seed=seed), p.params(), method="integral")
    theta, _ = ols(reg)
    np.testing.assert_allclose(theta, [p.egp, p.gezi, p.s_i], rtol=1e-6)
