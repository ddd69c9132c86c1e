"""Linearized least-squares identification of MVP patient profiles.

With the insulin time constants, clearance, ``p_2``, ``tau_m`` and ``v_g`` held
fixed, the insulin cascade can be simulated with ``S_I = 1`` to give the lagged
insulin signal ``h(t)`` (so the true effect is ``S_I * h``). The glucose
equation then becomes linear in the free parameters::

    dBG/dt - R_A(t) = EGP * 1 + GEZI * (-BG) + S_I * (-h * BG)

and ordinary least squares recovers ``(EGP, GEZI, S_I)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from . import mvp
from ._backend import kernels
from .errors import ConfigError, Unidentifiable
from .units import MG_PER_G, MICROUNITS_PER_UNIT, MIN_PER_HOUR

FREE_PARAMS = ("egp", "gezi", "s_i")
FIXED_PARAMS = ("c_i", "tau_1", "tau_2", "p_2", "tau_m", "v_g")
MIN_SAMPLES = 100
MINUTES_PER_DAY = 1440.0
POSITIVE_FLOOR = 1e-12
RANK_TOL = 1e-8
DERIVATIVES = ("integral", "central", "forward")


@dataclass(frozen=True)
class FitSpec:
    model: str = "mvp"
    fixed_params: dict = field(default_factory=lambda: {k: getattr(mvp.NOMINAL, k) for k in FIXED_PARAMS})
    train_window: float = 10.0  # days
    eval_window: float = 1.0  # days; 0 evaluates on the training window
    derivative: str = "integral"
    smooth_window: int = 5  # Savitzky-Golay window in samples (order 2); 0 disables
    meals_known: bool = True
    refine: bool = False
    bw: float = 75.0

    def __post_init__(self):
        if self.model != "mvp":
            raise ConfigError("only MVP profiles can be fitted by least squares", path="model")
        fixed = {k: getattr(mvp.NOMINAL, k) for k in FIXED_PARAMS}
        unknown = set(self.fixed_params) - set(fixed)
        if unknown:
            raise ConfigError(f"not fixable: {sorted(unknown)}", path="fixed_params")
        fixed.update({k: float(v) for k, v in self.fixed_params.items()})
        object.__setattr__(self, "fixed_params", fixed)
        if not self.train_window > 0:
            raise ConfigError("train_window must be positive", path="train_window")
        if not self.eval_window >= 0:
            raise ConfigError("eval_window must be nonnegative", path="eval_window")
        if self.derivative not in DERIVATIVES:
            raise ConfigError(f"derivative must be one of {DERIVATIVES}", path="derivative")
        if self.smooth_window and (self.smooth_window < 3 or self.smooth_window % 2 == 0):
            raise ConfigError("smooth_window must be 0 or an odd number >= 3", path="smooth_window")

    @classmethod
    def from_dict(cls, doc: dict) -> "FitSpec":
        doc = {k: v for k, v in doc.items() if k != "schema_version"}
        return cls(**doc)


@dataclass(frozen=True)
class FitData:
    """Uniformly sampled observations: BG (mg/dL), insulin (U/min), meals (min, g)."""

    bg: np.ndarray
    insulin: np.ndarray
    meals: tuple | None = ()  # None means carbohydrate records are unavailable
    cadence: float = 5.0
    basal_rate: float | None = None  # U/hr the insulin compartments start at

    def __post_init__(self):
        bg = np.asarray(self.bg, dtype=float)
        ins = np.asarray(self.insulin, dtype=float)
        if bg.shape != ins.shape or bg.ndim != 1:
            raise ConfigError("bg and insulin must be 1-D sequences of equal length", path="trace")
        object.__setattr__(self, "bg", bg)
        object.__setattr__(self, "insulin", ins)
        if self.meals is not None:
            object.__setattr__(self, "meals", tuple((float(t), float(g)) for t, g in self.meals))
        if not (self.cadence > 0 and float(self.cadence).is_integer()):
            raise ConfigError("cadence must be a whole number of minutes", path="cadence")

    @classmethod
    def from_records(cls, records, meals_known: bool = True, observed: str = "cgm") -> "FitData":
        """Build from loop-engine trace records; meals come from the cho column."""
        t = np.array([r.t for r in records], dtype=float)
        if t.size < 2:
            raise ConfigError("trace too short", path="trace")
        steps = np.diff(t)
        if not np.all(steps == steps[0]):
            raise ConfigError("trace cadence is not uniform", path="t_min")
        meals = tuple((r.t - t[0], r.cho) for r in records if r.cho > 0) if meals_known else None
        bg = np.array([getattr(r, observed) for r in records], dtype=float)
        ins = np.array([r.delivered for r in records], dtype=float)
        return cls(bg, ins, meals, float(steps[0]))

    def __len__(self):
        return self.bg.size

    def window(self, start: int, stop: int) -> "FitData":
        meals = self.meals
        if meals is not None:
            t0 = start * self.cadence
            meals = tuple((t - t0, g) for t, g in meals)
        return FitData(self.bg[start:stop], self.insulin[start:stop], meals, self.cadence,
                       self.insulin[start] * MIN_PER_HOUR if start else self.basal_rate)


@dataclass(frozen=True)
class Regressors:
    X: np.ndarray  # columns [1, -BG, -h*BG]
    y: np.ndarray  # dBG/dt - R_A
    h: np.ndarray  # lagged insulin signal with S_I = 1
    mask: np.ndarray  # samples kept for the regression


@dataclass(frozen=True)
class FitResult:
    profile: mvp.MvpProfile
    train_mse: float
    eval_mse: float
    isf: float
    tdd: float
    coefficients: dict
    diagnostics: dict


def _check(data: FitData):
    if len(data) < MIN_SAMPLES:
        raise ConfigError(f"trace too short: {len(data)} samples, need at least {MIN_SAMPLES}", path="trace")


def insulin_signal(insulin: np.ndarray, fixed: dict, cadence: float, basal_rate: float | None = None,
                   per_minute: bool = False) -> np.ndarray:
    """h(t) at each sample (or each minute): the insulin-effect state with S_I factored out."""
    cadence_n = int(cadence)
    c_i = fixed["c_i"]
    if basal_rate is None:
        basal_rate = float(insulin[0]) * MIN_PER_HOUR
    i0 = basal_rate / MIN_PER_HOUR * MICROUNITS_PER_UNIT / c_i
    y = np.array([i0, i0, i0])
    params = np.array([c_i, fixed["tau_1"], fixed["tau_2"], fixed["p_2"], 1.0])
    doses = np.repeat(np.asarray(insulin, dtype=float), cadence_n) * MICROUNITS_PER_UNIT
    out = np.empty(doses.size)
    kernels.insulin_cascade(y, params, doses, 1.0, out)
    return out if per_minute else out[::cadence_n].copy()


def meal_signal(n: int, cadence: float, meals, v_g: float, tau_m: float) -> np.ndarray:
    t = np.arange(n) * cadence
    ra = np.zeros(n)
    for tm, g in meals:
        ra = ra + mvp.meal_appearance(t - tm, g * MG_PER_G, v_g, tau_m)
    return ra


def derivative(bg: np.ndarray, cadence: float, method: str = "central") -> np.ndarray:
    d = np.empty_like(bg)
    if bg.size < 2:
        return np.zeros_like(bg)
    if method == "forward":
        d[:-1] = (bg[1:] - bg[:-1]) / cadence
        d[-1] = (bg[-1] - bg[-2]) / cadence
    else:
        d[1:-1] = (bg[2:] - bg[:-2]) / (2 * cadence)
        d[0] = (bg[1] - bg[0]) / cadence
        d[-1] = (bg[-1] - bg[-2]) / cadence
    return d


def infer_meal_mask(bg: np.ndarray, cadence: float, tau_m: float, rise: float = 1.5,
                    lead: float = 15.0) -> np.ndarray:
    """True for samples outside windows that follow an unexplained rise in BG.

    A meal is inferred where the smoothed slope first exceeds ``rise`` mg/dL/min;
    samples from ``lead`` minutes before it to ``8 * tau_m`` after are excluded.
    """
    slope = derivative(bg, cadence)
    onset = np.flatnonzero((slope[1:] > rise) & (slope[:-1] <= rise)) + 1
    if slope.size and slope[0] > rise:
        onset = np.r_[0, onset]
    keep = np.ones(bg.size, dtype=bool)
    t = np.arange(bg.size) * cadence
    for k in onset:
        keep &= ~((t >= t[k] - lead) & (t <= t[k] + mvp.MEAL_HORIZON * tau_m))
    return keep


def smooth(bg: np.ndarray, window: int) -> np.ndarray:
    """Savitzky-Golay (order 2) smoothing; damps sensor noise before regression."""
    if not window:
        return bg
    from scipy.signal import savgol_filter
    return savgol_filter(bg, window, 2)


def build_regressors(data: FitData, fixed: dict | None = None, method: str = "integral",
                     smooth_window: int = 0) -> Regressors:
    """Design matrix and target for the linearized glucose equation.

    ``central``/``forward`` use a finite-difference slope at each sample.
    ``integral`` averages the equation over the 1-minute substeps between
    consecutive samples, with BG interpolated by a cubic spline; it matches the
    simulator's Euler update exactly when the cadence is 1 minute. The last
    sample has no successor and is masked out in that mode.
    """
    _check(data)
    fixed = dict(FitSpec().fixed_params if fixed is None else fixed)
    bg = smooth(data.bg, smooth_window)
    n = bg.size
    c = int(data.cadence)
    if data.meals is None:
        mask = infer_meal_mask(bg, data.cadence, fixed["tau_m"])
        meals = ()
    else:
        mask = np.ones(n, dtype=bool)
        meals = data.meals
    if method == "integral":
        h_min = insulin_signal(data.insulin, fixed, data.cadence, data.basal_rate, per_minute=True)
        ra_min = meal_signal(n * c, 1.0, meals, fixed["v_g"], fixed["tau_m"])
        if c == 1:
            bg_min = bg.copy()
        else:
            from scipy.interpolate import CubicSpline
            bg_min = CubicSpline(np.arange(n) * c, bg)(np.arange(n * c))
        avg = lambda v: v.reshape(n, c).mean(axis=1)  # noqa: E731
        y = np.zeros(n)
        y[:-1] = (bg[1:] - bg[:-1]) / c - avg(ra_min)[:-1]
        X = np.column_stack([np.ones(n), -avg(bg_min), -avg(h_min * bg_min)])
        mask[-1] = False
        h = h_min[::c].copy()
    else:
        h = insulin_signal(data.insulin, fixed, data.cadence, data.basal_rate)
        ra = meal_signal(n, data.cadence, meals, fixed["v_g"], fixed["tau_m"])
        y = derivative(bg, data.cadence, method) - ra
        X = np.column_stack([np.ones(n), -bg, -h * bg])
    return Regressors(X, y, h, mask)


def _rank_check(X: np.ndarray):
    norms = np.linalg.norm(X, axis=0)
    flagged = [FREE_PARAMS[j] for j in range(X.shape[1]) if norms[j] == 0]
    if flagged:
        raise Unidentifiable(flagged, "regressor column is identically zero")
    Xs = X / norms
    _, s, vt = np.linalg.svd(Xs, full_matrices=False)
    weak = s < RANK_TOL * s[0]
    if np.any(weak):
        null = np.abs(vt[weak]).max(axis=0)
        raise Unidentifiable([FREE_PARAMS[j] for j in range(X.shape[1]) if null[j] > 0.1],
                             "regressor columns are collinear")
    return s


def ols(reg: Regressors) -> tuple[np.ndarray, dict]:
    X, y = reg.X[reg.mask], reg.y[reg.mask]
    if y.size < X.shape[1]:
        raise Unidentifiable(FREE_PARAMS, "fewer usable samples than parameters")
    s = _rank_check(X)
    theta, *_ = np.linalg.lstsq(X, y, rcond=None)
    resid = y - X @ theta
    scale = np.linalg.norm(X, axis=0) * max(np.linalg.norm(resid), 1.0)
    diag = {
        "n_samples": int(y.size),
        "n_excluded": int((~reg.mask).sum()),
        "rss": float(resid @ resid),
        "residual_sd": float(resid.std()),
        "singular_values": [float(v) for v in s],
        "normal_equation_max": float(np.max(np.abs(X.T @ resid) / scale)),
    }
    return theta, diag


def replay_mse(profile: mvp.MvpProfile, data: FitData, start: int = 0) -> float:
    """MSE between ``data.bg[start:]`` and an open-loop replay from the first sample."""
    from .engine import replay_insulin

    if int(data.cadence) == 5:
        bg = replay_insulin("mvp", profile, data.insulin, data.meals or (), initial_bg=float(data.bg[0]),
                            basal_rate=data.basal_rate)
    else:
        bg = _replay_any_cadence(profile, data)
    d = bg[start:] - data.bg[start:]
    return float(np.mean(d * d))


def _replay_any_cadence(profile, data: FitData) -> np.ndarray:
    from .engine import Plant

    basal = data.basal_rate if data.basal_rate is not None else float(data.insulin[0]) * MIN_PER_HOUR
    plant = Plant.at("mvp", profile, float(data.bg[0]), basal, data.meals or ())
    c = int(data.cadence)
    per_minute = np.repeat(data.insulin, c)
    minutes = np.empty(per_minute.size)
    plant.advance(per_minute, minutes)
    out = np.empty(len(data))
    out[0] = data.bg[0]
    out[1:] = minutes[c - 1:-1:c]
    return out


def observed_tdd(data: FitData) -> float:
    days = len(data) * data.cadence / MINUTES_PER_DAY
    return float(np.sum(data.insulin) * data.cadence / days)


def fit_profile(spec: FitSpec, data: FitData, name: str = "fitted") -> FitResult:
    """Fit (EGP, GEZI, S_I) on the training window and score replay on the evaluation window."""
    _check(data)
    n_train = int(round(spec.train_window * MINUTES_PER_DAY / data.cadence))
    n_eval = int(round(spec.eval_window * MINUTES_PER_DAY / data.cadence))
    if n_train + n_eval > len(data):
        raise ConfigError(f"trace has {len(data)} samples, train+eval windows need {n_train + n_eval}",
                          path="train_window")
    train = data.window(0, n_train)
    if not spec.meals_known:
        train = replace(train, meals=None)
    reg = build_regressors(train, spec.fixed_params, spec.derivative, spec.smooth_window)
    theta, diag = ols(reg)

    clamped = [k for k, v in zip(FREE_PARAMS, theta) if not v > 0]
    values = {k: max(float(v), POSITIVE_FLOOR) for k, v in zip(FREE_PARAMS, theta)}
    diag["clamped"] = clamped
    profile = mvp.MvpProfile(**spec.fixed_params, **values, bw=spec.bw, name=name)

    if spec.refine:
        profile, diag["refine"] = refine_profile(profile, train)

    whole = data.window(0, n_train + n_eval)
    if not spec.meals_known:
        whole = replace(whole, meals=())
        train = replace(train, meals=())
    train_mse = replay_mse(profile, train)
    eval_mse = replay_mse(profile, whole, start=n_train) if n_eval else train_mse
    tdd = observed_tdd(train)
    return FitResult(
        profile=profile, train_mse=train_mse, eval_mse=eval_mse,
        isf=1700.0 / tdd if tdd > 0 else math.inf, tdd=tdd,
        coefficients=dict(zip(FREE_PARAMS, (float(v) for v in theta))), diagnostics=diag,
    )


def refine_profile(profile: mvp.MvpProfile, data: FitData,
                   names: Sequence[str] = mvp.MvpProfile.param_names(), maxiter: int = 400):
    """Derivative-free refinement of ``names`` (log space) on replay MSE."""
    from scipy.optimize import minimize

    names = [n for n in names if n != "bw"]
    base = profile.params()
    x0 = np.log([base[n] for n in names])
    replay_data = data if data.meals is not None else replace(data, meals=())

    def loss(x):
        try:
            p = replace(profile, **dict(zip(names, np.exp(x))))
            m = replay_mse(p, replay_data)
        except (ValueError, FloatingPointError):
            return 1e12
        return m if math.isfinite(m) else 1e12

    res = minimize(loss, x0, method="Nelder-Mead", options={"maxiter": maxiter, "xatol": 1e-6, "fatol": 1e-9})
    best = replace(profile, **dict(zip(names, np.exp(res.x)))) if res.fun <= loss(x0) else profile
    return best, {"iterations": int(res.nit), "loss": float(min(res.fun, loss(x0)))}


# -- synthetic reference traces -------------------------------------------------

DAILY_MEALS = ((420.0, 50.0), (720.0, 70.0), (1080.0, 80.0))  # (minute of day, grams)


def synthetic_meals(days: float, seed: int, daily=DAILY_MEALS) -> tuple:
    """Daily meal pattern with seeded jitter: +/-30 min timing, +/-30% size."""
    rng = np.random.default_rng(seed)
    meals = []
    for d in range(int(math.ceil(days))):
        for tm, g in daily:
            t = d * MINUTES_PER_DAY + tm + 5 * int(rng.integers(-6, 7))
            size = round(g * rng.uniform(0.7, 1.3), 1)
            if t < days * MINUTES_PER_DAY:
                meals.append((float(t), float(size)))
    return tuple(meals)


def synthetic_trace(profile: mvp.MvpProfile, days: float = 11.0, seed: int = 0, noise_sd: float = 0.0,
                    controller: str = "basal_bolus"):
    """Closed-loop reference trace for a known profile; returns ``(records, spec)``."""
    from .devices import SensorConfig
    from .engine import run_closed_loop
    from .experiment import ExperimentSpec

    spec = ExperimentSpec(
        model="mvp", profile=profile, controller=controller, sensor=SensorConfig(noise_sd=noise_sd),
        meals=synthetic_meals(days, seed), duration=days * MINUTES_PER_DAY, seed=seed,
        name=f"synthetic-{profile.name}-{seed}",
    )
    return run_closed_loop(spec), spec
