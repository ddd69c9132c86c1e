"""Reduced UVA-Padova glucose kinetics.

Two glucose compartments (plasma ``g_p`` and tissue ``g_t``, mg/kg) exchange at
rates ``k_1``/``k_2``. Plasma glucose gains endogenous production

    EGP = max(0, kp_1 - kp_2 * g_p - kp_3 * x_l)

and loses the constant insulin-independent utilization ``u_ii``. Tissue glucose
loses insulin-dependent utilization

    U_id = max(0, v_m0 + v_mx * x) * g_t / (k_m0 + g_t)

where ``x`` is remote insulin action (minimal model) and ``x_l`` is delayed
hepatic insulin action, both driven by plasma insulin ``I = i_p / v_i``.
Subcutaneous insulin passes through two lags (``k_d``, ``k_a``) into plasma,
which clears at ``k_e``. Meals use the same absorption curve as the MVP model,
scaled per kg of body weight, and enter ``g_p`` directly.

Insulin input is in pmol/min; 1 U = 6000 pmol.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields, replace
from typing import NamedTuple

import numpy as np
from scipy.optimize import brentq

from ._backend import kernels
from ._kernels_py import _hypo_risk
from .errors import ConfigError, NonFiniteError
from .mvp import MEAL_HORIZON, substeps
from .units import MIN_PER_HOUR, PMOL_PER_UNIT


@dataclass(frozen=True)
class UvaProfile:
    k_1: float  # 1/min
    k_2: float  # 1/min
    kp_1: float  # mg/kg/min
    kp_2: float  # 1/min
    kp_3: float  # mg/kg/min per pmol/L
    k_i: float  # 1/min
    u_ii: float  # mg/kg/min
    v_g: float  # dL/kg
    g_pb: float  # mg/kg
    bw: float  # kg
    v_i: float  # L/kg
    k_d: float  # 1/min
    k_a: float  # 1/min
    k_e: float  # 1/min
    v_m0: float  # mg/kg/min
    v_mx: float  # mg/kg/min per pmol/L
    k_m0: float  # mg/kg
    p_2u: float  # 1/min
    i_b: float  # pmol/L
    tau_m: float  # min
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
        if not self.kp_1 > self.kp_2 * self.g_pb:
            raise ConfigError("kp_1 must exceed kp_2 * g_pb (positive EGP at basal)", path="kp_1")

    @classmethod
    def param_names(cls) -> tuple[str, ...]:
        return tuple(f.name for f in fields(cls) if f.name != "name")

    def params(self) -> dict[str, float]:
        return {k: getattr(self, k) for k in self.param_names()}

    def as_array(self) -> np.ndarray:
        return np.array([getattr(self, k) for k in self.param_names()], dtype=np.float64)

    @property
    def u_2ss(self) -> float:
        """Steady-state insulin rate per kg (pmol/kg/min) that holds plasma insulin at ``i_b``."""
        return self.k_e * self.i_b * self.v_i

    @property
    def basal_rate(self) -> float:
        """Basal rate in U/hr equivalent to ``u_2ss``."""
        return self.u_2ss * self.bw / PMOL_PER_UNIT * MIN_PER_HOUR


PARAM_UNITS = {
    "k_1": "1/min", "k_2": "1/min", "kp_1": "mg/kg/min", "kp_2": "1/min",
    "kp_3": "mg/kg/min per pmol/L", "k_i": "1/min", "u_ii": "mg/kg/min", "v_g": "dL/kg",
    "g_pb": "mg/kg", "bw": "kg", "v_i": "L/kg", "k_d": "1/min", "k_a": "1/min",
    "k_e": "1/min", "v_m0": "mg/kg/min", "v_mx": "mg/kg/min per pmol/L", "k_m0": "mg/kg",
    "p_2u": "1/min", "i_b": "pmol/L", "tau_m": "min",
}


@dataclass(frozen=True)
class UvaState:
    g_p: float
    g_t: float
    x_l: float
    x: float
    i_sc1: float
    i_sc2: float
    i_p: float
    meal_queue: tuple[tuple[float, float], ...] = ()

    _NONNEG = ("g_p", "g_t", "x_l", "i_sc1", "i_sc2", "i_p")

    def check(self):
        for name in ("g_p", "g_t", "x_l", "x", "i_sc1", "i_sc2", "i_p"):
            value = getattr(self, name)
            if not math.isfinite(value):
                raise NonFiniteError(name, value)
            if name in self._NONNEG and value < 0:
                raise ValueError(f"{name} must be nonnegative, got {value}")
        for i, (elapsed, carbs) in enumerate(self.meal_queue):
            if not (math.isfinite(elapsed) and math.isfinite(carbs)):
                raise NonFiniteError(f"meal_queue[{i}]", (elapsed, carbs))
            if elapsed < 0:
                raise ValueError(f"meal_queue[{i}] has negative elapsed time {elapsed}")

    def as_array(self) -> np.ndarray:
        return np.array([self.g_p, self.g_t, self.x_l, self.x, self.i_sc1, self.i_sc2, self.i_p])

    def with_meal(self, carbs_mg: float) -> "UvaState":
        return replace(self, meal_queue=self.meal_queue + ((0.0, float(carbs_mg)),))


class UvaStateDerivative(NamedTuple):
    d_g_p: float
    d_g_t: float
    d_x_l: float
    d_x: float
    d_i_sc1: float
    d_i_sc2: float
    d_i_p: float


def endogenous_production(g_p: float, x_l: float, profile: UvaProfile) -> float:
    return max(0.0, profile.kp_1 - profile.kp_2 * g_p - profile.kp_3 * x_l)


def uva_derivatives(state: UvaState, profile: UvaProfile, insulin_rate: float,
                    hypo_refinement: bool = False) -> UvaStateDerivative:
    """Right-hand side of the closed UVA-Padova system; ``insulin_rate`` in pmol/min."""
    state.check()
    if not math.isfinite(insulin_rate):
        raise NonFiniteError("insulin_rate", insulin_rate)
    if insulin_rate < 0:
        raise ValueError("insulin_rate must be nonnegative")
    p = profile
    ra = 0.0
    for elapsed, carbs in state.meal_queue:
        if 0.0 <= elapsed <= MEAL_HORIZON * p.tau_m:
            ra += carbs / (p.bw * p.tau_m * p.tau_m) * elapsed * math.exp(-elapsed / p.tau_m)
    ins = state.i_p / p.v_i
    egp = endogenous_production(state.g_p, state.x_l, p)
    risk = _hypo_risk(state.g_p / p.v_g) if hypo_refinement else 1.0
    vm = max(0.0, p.v_m0 + p.v_mx * risk * state.x)
    u_id = vm * state.g_t / (p.k_m0 + state.g_t)
    return UvaStateDerivative(
        d_g_p=egp + ra - p.u_ii - p.k_1 * state.g_p + p.k_2 * state.g_t,
        d_g_t=-u_id + p.k_1 * state.g_p - p.k_2 * state.g_t,
        d_x_l=-p.k_i * (state.x_l - ins),
        d_x=-p.p_2u * state.x + p.p_2u * (ins - p.i_b),
        d_i_sc1=insulin_rate / p.bw - p.k_d * state.i_sc1,
        d_i_sc2=p.k_d * state.i_sc1 - p.k_a * state.i_sc2,
        d_i_p=p.k_a * state.i_sc2 - p.k_e * state.i_p,
    )


def uva_observe_bg(state: UvaState, profile: UvaProfile) -> float:
    """Plasma glucose concentration in mg/dL."""
    return state.g_p / profile.v_g


def uva_step(state: UvaState, profile: UvaProfile, insulin_rate: float, dt: float,
             substep: float = 1.0, hypo_refinement: bool = False) -> UvaState:
    n, h = substeps(dt, substep)
    state.check()
    if insulin_rate < 0 or not math.isfinite(insulin_rate):
        raise ValueError(f"invalid insulin_rate {insulin_rate}")
    y = state.as_array()
    elapsed = np.array([e for e, _ in state.meal_queue], dtype=np.float64)
    carbs = np.array([c for _, c in state.meal_queue], dtype=np.float64)
    doses = np.full(n, float(insulin_rate))
    kernels.uva_integrate(y, profile.as_array(), doses, h, elapsed, carbs, hypo_refinement, None)
    horizon = MEAL_HORIZON * profile.tau_m
    queue = tuple((float(e), float(c)) for e, c in zip(elapsed, carbs) if e <= horizon)
    return UvaState(*(float(v) for v in y), meal_queue=queue)


def _tissue_balance(g_p: float, vm: float, p: UvaProfile) -> float:
    # positive root of k_2 g_t^2 + (k_2 k_m0 + vm - k_1 g_p) g_t - k_1 g_p k_m0 = 0
    b = p.k_2 * p.k_m0 + vm - p.k_1 * g_p
    c = -p.k_1 * g_p * p.k_m0
    disc = b * b - 4.0 * p.k_2 * c
    return (-b + math.sqrt(disc)) / (2.0 * p.k_2)


def steady_insulin(profile: UvaProfile, insulin_rate: float) -> tuple[float, float, float, float, float]:
    """(i_sc1, i_sc2, i_p, x, x_l) at equilibrium under a constant rate in pmol/min."""
    p = profile
    flux = insulin_rate / p.bw
    i_sc1 = flux / p.k_d
    i_sc2 = flux / p.k_a
    i_p = flux / p.k_e
    ins = i_p / p.v_i
    return i_sc1, i_sc2, i_p, ins - p.i_b, ins


def uva_steady_state(profile: UvaProfile, insulin_rate: float | None = None) -> UvaState:
    """Equilibrium state under a constant insulin rate (pmol/min); defaults to basal."""
    p = profile
    if insulin_rate is None:
        insulin_rate = p.u_2ss * p.bw
    i_sc1, i_sc2, i_p, x, x_l = steady_insulin(p, insulin_rate)
    vm = max(0.0, p.v_m0 + p.v_mx * x)

    def balance(g_p):
        g_t = _tissue_balance(g_p, vm, p)
        return endogenous_production(g_p, x_l, p) - p.u_ii - p.k_1 * g_p + p.k_2 * g_t

    if balance(0.0) <= 0.0:
        g_p = 0.0
    else:
        hi = max(p.g_pb, 1.0)
        while balance(hi) > 0.0:
            hi *= 2.0
        g_p = brentq(balance, 0.0, hi, xtol=1e-14, rtol=1e-15, maxiter=500)
    g_t = _tissue_balance(g_p, vm, p)
    return UvaState(g_p, g_t, x_l, x, i_sc1, i_sc2, i_p)


def initial_state(profile: UvaProfile, bg: float, basal_u_per_hr: float | None = None) -> UvaState:
    """Insulin at steady state for the basal rate, plasma glucose at ``bg``, tissue in balance."""
    p = profile
    rate = p.u_2ss * p.bw if basal_u_per_hr is None else basal_u_per_hr / MIN_PER_HOUR * PMOL_PER_UNIT
    i_sc1, i_sc2, i_p, x, x_l = steady_insulin(p, rate)
    g_p = float(bg) * p.v_g
    g_t = _tissue_balance(g_p, max(0.0, p.v_m0 + p.v_mx * x), p)
    return UvaState(g_p, g_t, x_l, x, i_sc1, i_sc2, i_p)


def consistent_kp1(**params) -> float:
    """kp_1 that places the basal equilibrium exactly at ``g_pb``."""
    k_1, k_2, k_m0, v_m0 = params["k_1"], params["k_2"], params["k_m0"], params["v_m0"]
    g_pb = params["g_pb"]
    b = k_2 * k_m0 + v_m0 - k_1 * g_pb
    c = -k_1 * g_pb * k_m0
    g_tb = (-b + math.sqrt(b * b - 4.0 * k_2 * c)) / (2.0 * k_2)
    return (params["u_ii"] + k_1 * g_pb - k_2 * g_tb + params["kp_2"] * g_pb
            + params["kp_3"] * params["i_b"])


_NOMINAL_PARAMS = dict(
    k_1=0.065, k_2=0.079, kp_2=0.0021, kp_3=0.004, k_i=0.0079, u_ii=1.0,
    v_g=1.88, g_pb=1.88 * 120.0, bw=75.0, v_i=0.05, k_d=0.0164, k_a=0.0182,
    k_e=0.2, v_m0=2.5, v_mx=0.02, k_m0=225.59, p_2u=0.0331, i_b=107.0, tau_m=40.0,
)

NOMINAL = UvaProfile(kp_1=consistent_kp1(**_NOMINAL_PARAMS), **_NOMINAL_PARAMS, name="uva-nominal")

_COHORT_FIELDS = ("k_1", "k_2", "kp_3", "k_i", "bw", "v_mx", "p_2u", "i_b", "tau_m", "g_pb")
COHORT_SPREAD = 0.30


def uva_default_cohort(n: int, seed: int) -> list[UvaProfile]:
    """Sample ``n`` profiles within ±30% of nominal; ``kp_1`` is re-derived so each is at basal equilibrium."""
    if n < 1:
        raise ValueError("cohort size must be at least 1")
    rng = np.random.default_rng(seed)
    factors = rng.uniform(1 - COHORT_SPREAD, 1 + COHORT_SPREAD, size=(n, len(_COHORT_FIELDS)))
    cohort = []
    for i in range(n):
        values = dict(_NOMINAL_PARAMS)
        for j, k in enumerate(_COHORT_FIELDS):
            values[k] = float(values[k] * factors[i, j])
        values["kp_1"] = consistent_kp1(**values)
        cohort.append(UvaProfile(**values, name=f"uva-{seed}-{i:03d}"))
    return cohort
