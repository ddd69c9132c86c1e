"""Medtronic Virtual Patient (Glucosym) glucose-insulin kinetics.

Three first-order insulin lags (subcutaneous, plasma, effect) drive a scalar
glucose balance, with meal glucose appearance following a two-compartment
absorption curve ``CH / (V_G * tau_m**2) * t * exp(-t / tau_m)``.

Units: insulin states in µU/mL, insulin dose in µU/min, ``c_i`` in mL/min,
glucose in mg/dL, meal carbohydrate in mg.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, fields, replace
from typing import NamedTuple

import numpy as np

from ._backend import kernels
from .errors import ConfigError, NonFiniteError
from .units import MICROUNITS_PER_UNIT, MIN_PER_HOUR

logger = logging.getLogger(__name__)

MEAL_HORIZON = 8.0  # meals dropped after this many tau_m


@dataclass(frozen=True)
class MvpProfile:
    c_i: float  # insulin clearance, mL/min
    tau_1: float  # min
    tau_2: float  # min
    v_g: float  # dL
    p_2: float  # 1/min
    egp: float  # mg/dL/min
    gezi: float  # 1/min
    s_i: float  # mL/µU/min
    tau_m: float  # min
    bw: float = 75.0  # kg, used only by dosing rules
    name: str = field(default="", compare=False)

    def __post_init__(self):
        for f in fields(self):
            if f.name == "name":
                continue
            value = getattr(self, f.name)
            if not math.isfinite(value):
                raise NonFiniteError(f.name, value)
            if value <= 0:
                raise ConfigError(f"must be strictly positive, got {value}", path=f.name)

    @classmethod
    def param_names(cls) -> tuple[str, ...]:
        return tuple(f.name for f in fields(cls) if f.name != "name")

    def params(self) -> dict[str, float]:
        return {k: getattr(self, k) for k in self.param_names()}

    def as_array(self) -> np.ndarray:
        return np.array(
            [self.c_i, self.tau_1, self.tau_2, self.v_g, self.p_2,
             self.egp, self.gezi, self.s_i, self.tau_m],
            dtype=np.float64,
        )


PARAM_UNITS = {
    "c_i": "mL/min", "tau_1": "min", "tau_2": "min", "v_g": "dL", "p_2": "1/min",
    "egp": "mg/dL/min", "gezi": "1/min", "s_i": "mL/uU/min", "tau_m": "min", "bw": "kg",
}

# Population-typical values of the MVP parameters.
NOMINAL = MvpProfile(
    c_i=2010.0, tau_1=49.0, tau_2=47.0, v_g=253.0, p_2=0.0106,
    egp=1.33, gezi=0.0022, s_i=8.11e-4, tau_m=40.0, bw=75.0, name="mvp-nominal",
)


@dataclass(frozen=True)
class MvpState:
    i_sc: float
    i_p: float
    i_eff: float
    bg: float
    meal_queue: tuple[tuple[float, float], ...] = ()  # (elapsed min, carbs mg)

    def check(self):
        for name in ("i_sc", "i_p", "i_eff", "bg"):
            value = getattr(self, name)
            if not math.isfinite(value):
                raise NonFiniteError(name, value)
            if value < 0:
                raise ValueError(f"{name} must be nonnegative, got {value}")
        for i, (elapsed, carbs) in enumerate(self.meal_queue):
            if not (math.isfinite(elapsed) and math.isfinite(carbs)):
                raise NonFiniteError(f"meal_queue[{i}]", (elapsed, carbs))
            if elapsed < 0:
                raise ValueError(f"meal_queue[{i}] has negative elapsed time {elapsed}")

    def with_meal(self, carbs_mg: float) -> "MvpState":
        return replace(self, meal_queue=self.meal_queue + ((0.0, float(carbs_mg)),))


class MvpStateDerivative(NamedTuple):
    d_i_sc: float
    d_i_p: float
    d_i_eff: float
    d_bg: float


def meal_appearance(elapsed, carbs_mg, v_g, tau_m):
    """Rate of meal glucose appearance in mg/dL/min (vectorised over ``elapsed``)."""
    elapsed = np.asarray(elapsed, dtype=float)
    ra = carbs_mg / (v_g * tau_m * tau_m) * elapsed * np.exp(-elapsed / tau_m)
    active = (elapsed >= 0) & (elapsed <= MEAL_HORIZON * tau_m)
    out = np.where(active, ra, 0.0)
    return float(out) if out.ndim == 0 else out


def _total_appearance(state: MvpState, profile: MvpProfile) -> float:
    ra = 0.0
    for elapsed, carbs in state.meal_queue:
        ra += meal_appearance(elapsed, carbs, profile.v_g, profile.tau_m)
    return ra


def mvp_derivatives(state: MvpState, profile: MvpProfile, insulin_dose_rate: float) -> MvpStateDerivative:
    """Right-hand side of the MVP system; ``insulin_dose_rate`` in µU/min."""
    state.check()
    if not math.isfinite(insulin_dose_rate):
        raise NonFiniteError("insulin_dose_rate", insulin_dose_rate)
    if insulin_dose_rate < 0:
        raise ValueError("insulin_dose_rate must be nonnegative")
    p = profile
    ra = _total_appearance(state, p)
    return MvpStateDerivative(
        d_i_sc=-(state.i_sc - insulin_dose_rate / p.c_i) / p.tau_1,
        d_i_p=-(state.i_p - state.i_sc) / p.tau_2,
        d_i_eff=-p.p_2 * (state.i_eff - p.s_i * state.i_p),
        d_bg=-(p.gezi + state.i_eff) * state.bg + p.egp + ra,
    )


def substeps(dt: float, substep: float = 1.0) -> tuple[int, float]:
    if not dt > 0:
        raise ValueError(f"dt must be positive, got {dt}")
    n = max(1, math.ceil(dt / substep - 1e-9))
    return n, dt / n


def mvp_step(state: MvpState, profile: MvpProfile, insulin_dose_rate: float, dt: float,
             substep: float = 1.0) -> MvpState:
    """Advance ``state`` by ``dt`` minutes with explicit Euler substeps of at most ``substep``."""
    n, h = substeps(dt, substep)
    state.check()
    if insulin_dose_rate < 0 or not math.isfinite(insulin_dose_rate):
        raise ValueError(f"invalid insulin_dose_rate {insulin_dose_rate}")
    y = np.array([state.i_sc, state.i_p, state.i_eff, state.bg], dtype=np.float64)
    elapsed = np.array([e for e, _ in state.meal_queue], dtype=np.float64)
    carbs = np.array([c for _, c in state.meal_queue], dtype=np.float64)
    doses = np.full(n, float(insulin_dose_rate))
    kernels.mvp_integrate(y, profile.as_array(), doses, h, elapsed, carbs, None)
    if y[3] == 0.0 and state.bg > 0:
        logger.debug("bg floored at 0")
    horizon = MEAL_HORIZON * profile.tau_m
    queue = tuple((float(e), float(c)) for e, c in zip(elapsed, carbs) if e <= horizon)
    return MvpState(float(y[0]), float(y[1]), float(y[2]), float(y[3]), queue)


def steady_insulin(profile: MvpProfile, dose_rate: float) -> tuple[float, float, float]:
    """Insulin compartments at equilibrium under a constant dose (µU/min)."""
    i_sc = dose_rate / profile.c_i
    return i_sc, i_sc, profile.s_i * i_sc


def steady_state_bg(profile: MvpProfile, dose_rate: float) -> float:
    """Fixed-point glucose EGP / (GEZI + S_I * ID / C_I) for a constant dose in µU/min."""
    return profile.egp / (profile.gezi + profile.s_i * dose_rate / profile.c_i)


def basal_rate_for_target(profile: MvpProfile, target_bg: float) -> float:
    """Basal rate in U/hr whose steady state is ``target_bg``; 0 if unreachable from above."""
    i_eff = profile.egp / target_bg - profile.gezi
    if i_eff <= 0:
        return 0.0
    dose = i_eff * profile.c_i / profile.s_i
    return dose / MICROUNITS_PER_UNIT * MIN_PER_HOUR


def initial_state(profile: MvpProfile, bg: float, basal_u_per_hr: float) -> MvpState:
    dose = basal_u_per_hr / MIN_PER_HOUR * MICROUNITS_PER_UNIT
    i_sc, i_p, i_eff = steady_insulin(profile, dose)
    return MvpState(i_sc, i_p, i_eff, float(bg))


_COHORT_FIELDS = ("c_i", "tau_1", "tau_2", "v_g", "p_2", "egp", "gezi", "s_i", "tau_m", "bw")
COHORT_SPREAD = 0.30


def mvp_default_cohort(n: int, seed: int) -> list[MvpProfile]:
    """Sample ``n`` profiles uniformly within ±30% of the nominal parameters."""
    if n < 1:
        raise ValueError("cohort size must be at least 1")
    rng = np.random.default_rng(seed)
    factors = rng.uniform(1 - COHORT_SPREAD, 1 + COHORT_SPREAD, size=(n, len(_COHORT_FIELDS)))
    base = NOMINAL.params()
    cohort = []
    for i in range(n):
        values = {k: float(base[k] * factors[i, j]) for j, k in enumerate(_COHORT_FIELDS)}
        cohort.append(MvpProfile(**values, name=f"mvp-{seed}-{i:03d}"))
    return cohort
