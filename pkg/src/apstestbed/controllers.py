"""Insulin dosing controllers.

Three controllers share one calling convention: each control step the loop
hands over the newest CGM reading (and, for announced meals, the carbohydrate
amount) and receives a :class:`ControlDecision`. Controllers keep their own
pump history so insulin-on-board is available for diagnostics.

* ``FixedBasalController`` - constant basal, no boluses.
* ``BasalBolusController`` - weight-based basal plus meal/correction boluses.
* ``OpenAPSController`` - predictive temp-basal dosing driven by eventual BG.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Sequence

import numpy as np

from .errors import ConfigError, InsufficientHistory, NonFiniteError
from .units import MIN_PER_HOUR, PMOL_PER_UNIT

CONTROL_INTERVAL = 5.0  # min
TEMP_DURATION = 30.0  # min
BOLUS_CORRECTION_THRESHOLD = 150.0  # mg/dL
SUSPEND_THRESHOLD = 70.0  # mg/dL


class Rationale(str, Enum):
    LOW_GLUCOSE_SUSPEND = "low_glucose_suspend"
    RISING_BUT_LOW = "rising_but_low"
    FALLING_BUT_HIGH = "falling_but_high"
    HIGH_TEMP = "high_temp"
    LOW_TEMP = "low_temp"
    ZERO_TEMP = "zero_temp"
    AT_TARGET = "at_target"
    WARMUP = "warmup"
    BASAL_ONLY = "basal_only"
    MEAL_BOLUS = "meal_bolus"
    MEAL_CORRECTION_BOLUS = "meal_correction_bolus"
    FIXED_BASAL = "fixed_basal"


OPENAPS_BRANCHES = (
    Rationale.LOW_GLUCOSE_SUSPEND,
    Rationale.RISING_BUT_LOW,
    Rationale.FALLING_BUT_HIGH,
    Rationale.HIGH_TEMP,
    Rationale.LOW_TEMP,
    Rationale.ZERO_TEMP,
    Rationale.AT_TARGET,
)


@dataclass(frozen=True)
class ControllerConfig:
    isf: float  # mg/dL per U
    cr: float  # g/U
    cf: float  # mg/dL per U
    basal_rate: float  # U/hr (profile basal)
    u_2ss: float  # pmol/kg/min
    bw: float  # kg
    max_basal: float  # U/hr
    max_bolus: float = 15.0  # U
    dia: float = 240.0  # min
    bg_target: float = 120.0
    bg_range: tuple[float, float] = (70.0, 180.0)
    suspend_threshold: float = SUSPEND_THRESHOLD
    iob_curve: str = "linear"  # or "exponential"
    insulin_peak: float = 75.0  # min, exponential curve only

    def __post_init__(self):
        for name in ("isf", "cr", "cf", "dia", "max_basal", "max_bolus", "bw"):
            value = getattr(self, name)
            if not math.isfinite(value) or value <= 0:
                raise ConfigError(f"must be positive, got {value}", path=name)
        for name in ("basal_rate", "u_2ss"):
            value = getattr(self, name)
            if not math.isfinite(value) or value < 0:
                raise ConfigError(f"must be nonnegative, got {value}", path=name)
        low, high = self.bg_range
        if not low < self.bg_target < high:
            raise ConfigError("need bg_range low < bg_target < high", path="bg_target")
        if self.iob_curve not in ("linear", "exponential"):
            raise ConfigError(f"unknown iob_curve {self.iob_curve!r}", path="iob_curve")
        if self.iob_curve == "exponential" and not 0 < self.insulin_peak < self.dia / 2:
            raise ConfigError("insulin_peak must lie in (0, dia/2)", path="insulin_peak")

    def with_overrides(self, **overrides) -> "ControllerConfig":
        if "bg_range" in overrides:
            overrides["bg_range"] = tuple(overrides["bg_range"])
        return replace(self, **overrides)


@dataclass(frozen=True)
class Diagnostics:
    iob: float = 0.0
    eventual_bg: float = float("nan")
    deviation: float = 0.0
    rationale: Rationale = Rationale.BASAL_ONLY


@dataclass(frozen=True)
class ControlDecision:
    basal: float  # U/hr
    bolus: float  # U
    diagnostics: Diagnostics = field(default_factory=Diagnostics)

    def __post_init__(self):
        if not (self.basal >= 0 and self.bolus >= 0):
            raise ValueError(f"decision must be nonnegative, got basal={self.basal} bolus={self.bolus}")


@dataclass(frozen=True)
class PumpEvent:
    t: float  # min
    basal: float  # U/hr, in effect from t until the next event
    bolus: float = 0.0  # U, delivered at t


class PumpHistory:
    """Ordered pump events with strictly increasing timestamps."""

    def __init__(self, events: Sequence[PumpEvent | tuple] = ()):
        self.events: list[PumpEvent] = []
        for ev in events:
            self.append(ev if isinstance(ev, PumpEvent) else PumpEvent(*ev))

    def append(self, event: PumpEvent):
        if self.events and event.t <= self.events[-1].t:
            raise ValueError(f"pump history timestamps must increase ({event.t} after {self.events[-1].t})")
        self.events.append(event)

    def trim(self, before: float):
        """Drop events that ended before ``before`` (keeps the one in effect)."""
        keep = 0
        for i in range(1, len(self.events)):
            if self.events[i].t <= before:
                keep = i
        if keep:
            del self.events[:keep]

    def __len__(self):
        return len(self.events)

    def __iter__(self):
        return iter(self.events)


def derive_dosing_params(bw: float) -> dict[str, float]:
    """Weight-based dosing rules: TDD = 0.55 BW, CR = 450/TDD, CF = ISF = 1700/TDD."""
    if not bw > 0:
        raise ValueError(f"body weight must be positive, got {bw}")
    tdd = 0.55 * bw
    return {"tdd": tdd, "cr": 450.0 / tdd, "cf": 1700.0 / tdd, "isf": 1700.0 / tdd}


# -- insulin on board ---------------------------------------------------------

def _linear_remaining_integral(a0, a1, dia):
    # integral of max(0, 1 - a/dia) over ages [a0, a1]
    def F(a):
        a = min(max(a, 0.0), dia)
        return a - a * a / (2.0 * dia)
    return F(a1) - F(a0)


def _exp_shape(dia, peak):
    tau = peak * (1 - peak / dia) / (1 - 2 * peak / dia)
    a = 2 * tau / dia
    s = 1 / (1 - a + (1 + a) * math.exp(-dia / tau))
    return tau, a, s


def _exp_remaining(age, dia, peak):
    if age <= 0:
        return 1.0
    if age >= dia:
        return 0.0
    tau, a, s = _exp_shape(dia, peak)
    return 1 - s * (1 - a) * ((age * age / (tau * dia * (1 - a)) - age / tau - 1) * math.exp(-age / tau) + 1)


def _exp_activity(age, dia, peak):
    if age < 0 or age >= dia:
        return 0.0
    tau, a, s = _exp_shape(dia, peak)
    return s / (tau * tau) * age * (1 - age / dia) * math.exp(-age / tau)


def _deliveries(history: PumpHistory, now: float, profile_basal: float):
    """Yield (start, end, rate U/min) net basal segments and (t, t, units) boluses."""
    events = history.events
    for i, ev in enumerate(events):
        if ev.bolus:
            yield ev.t, ev.t, ev.bolus
        end = events[i + 1].t if i + 1 < len(events) else now
        end = min(end, now)
        if end > ev.t:
            net = (ev.basal - profile_basal) / MIN_PER_HOUR
            if net:
                yield ev.t, end, net


def _linear_iob(events, now, profile_basal, dia):
    # hot path: same sums as the generic loop below, inlined for the linear curve
    iob = 0.0
    activity = 0.0
    n = len(events)
    for i in range(n):
        ev = events[i]
        t0 = ev.t
        if ev.bolus:
            age = now - t0
            if age < dia:
                iob += (1.0 - age / dia) * ev.bolus
                if age >= 0:
                    activity += ev.bolus / dia
        end = events[i + 1].t if i + 1 < n else now
        if end > now:
            end = now
        if end > t0:
            net = (ev.basal - profile_basal) / MIN_PER_HOUR
            a0 = now - end
            if net and a0 < dia:
                a1 = now - t0
                lo = a0 if a0 > 0.0 else 0.0
                hi = a1 if a1 < dia else dia
                iob += net * ((hi - hi * hi / (2.0 * dia)) - (lo - lo * lo / (2.0 * dia)))
                if hi > lo:
                    activity += net * (hi - lo) / dia
    return iob, activity


def insulin_on_board(history: PumpHistory, now: float, config: ControllerConfig) -> tuple[float, float]:
    """Return (IOB in U, insulin activity in U/min) at ``now``.

    Boluses count in full; basal counts net of the profile basal rate. The
    linear curve decays each delivery to zero over ``dia`` minutes.
    """
    if history.events and now < history.events[-1].t:
        raise ValueError("now precedes the last pump event")
    if config.iob_curve == "linear":
        return _linear_iob(history.events, now, config.basal_rate, config.dia)
    dia = config.dia
    iob = 0.0
    activity = 0.0
    for start, end, amount in _deliveries(history, now, config.basal_rate):
        if start == end:
            age = now - start
            if config.iob_curve == "linear":
                iob += max(0.0, 1.0 - age / dia) * amount
                activity += amount / dia if 0 <= age < dia else 0.0
            else:
                iob += _exp_remaining(age, dia, config.insulin_peak) * amount
                activity += _exp_activity(age, dia, config.insulin_peak) * amount
        else:
            a0, a1 = now - end, now - start
            if a0 >= dia:
                continue
            if config.iob_curve == "linear":
                iob += amount * _linear_remaining_integral(a0, a1, dia)
                overlap = max(0.0, min(a1, dia) - max(a0, 0.0))
                activity += amount * overlap / dia
            else:
                # midpoint rule on 1-min slices
                n = max(1, int(math.ceil(a1 - a0)))
                w = (a1 - a0) / n
                for k in range(n):
                    age = a0 + (k + 0.5) * w
                    iob += amount * w * _exp_remaining(age, dia, config.insulin_peak)
                    activity += amount * w * _exp_activity(age, dia, config.insulin_peak)
    return iob, activity


def calculate_iob(history: PumpHistory, now: float, config: ControllerConfig) -> float:
    return insulin_on_board(history, now, config)[0]


# -- basal-bolus --------------------------------------------------------------

def basal_bolus_decide(cgm: float, meal_cho: float | None, config: ControllerConfig) -> ControlDecision:
    if not math.isfinite(cgm):
        raise NonFiniteError("cgm", cgm)
    if cgm < 0:
        raise ValueError("cgm must be nonnegative")
    basal_u_per_min = config.u_2ss * config.bw / PMOL_PER_UNIT
    basal = min(basal_u_per_min * MIN_PER_HOUR, config.max_basal)
    if meal_cho is None or meal_cho == 0:
        return ControlDecision(basal, 0.0, Diagnostics(rationale=Rationale.BASAL_ONLY))
    if meal_cho < 0 or not math.isfinite(meal_cho):
        raise ValueError(f"meal carbohydrate must be nonnegative, got {meal_cho}")
    bolus = meal_cho / config.cr
    rationale = Rationale.MEAL_BOLUS
    if cgm > BOLUS_CORRECTION_THRESHOLD:
        bolus += (cgm - config.bg_target) / config.cf
        rationale = Rationale.MEAL_CORRECTION_BOLUS
    bolus = min(max(bolus, 0.0), config.max_bolus)
    return ControlDecision(basal, bolus, Diagnostics(rationale=rationale))


# -- OpenAPS-style ------------------------------------------------------------

def trend_slope(samples: Sequence[float]) -> float:
    """Least-squares slope (mg/dL per sample) of the last three samples."""
    y0, y1, y2 = samples[-3:]
    return (y2 - y0) / 2.0


def temp_rate(eventual_bg: float, config: ControllerConfig) -> float:
    """Temp basal that delivers (eventualBG - target)/ISF over 30 min on top of profile basal."""
    rate = config.basal_rate + 2.0 * (eventual_bg - config.bg_target) / (config.isf * (TEMP_DURATION / MIN_PER_HOUR))
    return min(max(rate, 0.0), config.max_basal)


def openaps_dispatch(bg: float, slope: float, eventual_bg: float,
                     config: ControllerConfig) -> tuple[float, Rationale]:
    """Select the branch and commanded basal (U/hr) from the prediction."""
    target = config.bg_target
    if bg < config.suspend_threshold:
        return 0.0, Rationale.LOW_GLUCOSE_SUSPEND
    profile_basal = min(config.basal_rate, config.max_basal)
    if slope > 0 and eventual_bg < target:
        return profile_basal, Rationale.RISING_BUT_LOW
    if slope < 0 and eventual_bg > target:
        return profile_basal, Rationale.FALLING_BUT_HIGH
    if eventual_bg > target:
        return temp_rate(eventual_bg, config), Rationale.HIGH_TEMP
    if eventual_bg < target:
        rate = temp_rate(eventual_bg, config)
        if rate == 0.0:
            return 0.0, Rationale.ZERO_TEMP
        return rate, Rationale.LOW_TEMP
    return profile_basal, Rationale.AT_TARGET


def openaps_decide(cgm_history: Sequence[float], history: PumpHistory, current_temp_basal: float | None,
                   config: ControllerConfig, now: float | None = None) -> ControlDecision:
    """One predictive temp-basal decision from the trailing CGM samples (5-min cadence).

    Every branch issues an explicit rate, so ``current_temp_basal`` is either
    replaced, cancelled back to profile basal, or (zero temp) re-issued for
    another 30 minutes; the caller owns the temp's expiry clock.
    """
    if len(cgm_history) < 3:
        raise InsufficientHistory(f"need at least 3 CGM samples, got {len(cgm_history)}")
    recent = [float(v) for v in cgm_history[-3:]]
    for i, v in enumerate(recent):
        if not math.isfinite(v):
            raise NonFiniteError(f"cgm_history[{len(cgm_history) - 3 + i}]", v)
    if now is None:
        now = history.events[-1].t + CONTROL_INTERVAL if history.events else 0.0
    bg = recent[-1]
    iob, activity = insulin_on_board(history, now, config)
    delta = recent[-1] - recent[-2]
    bgi = -config.isf * activity * CONTROL_INTERVAL
    deviation = (TEMP_DURATION / CONTROL_INTERVAL) * (delta - bgi)
    eventual_bg = bg - config.isf * iob + deviation
    rate, rationale = openaps_dispatch(bg, trend_slope(recent), eventual_bg, config)
    return ControlDecision(rate, 0.0, Diagnostics(iob=iob, eventual_bg=eventual_bg,
                                                   deviation=deviation, rationale=rationale))


# -- stateful wrappers used by the loop ---------------------------------------

class Controller:
    """Base class: tracks delivered insulin for IOB diagnostics."""

    name = "base"
    announced = False

    def __init__(self, config: ControllerConfig):
        self.config = config
        self.history = PumpHistory()

    def decide(self, t: float, cgm: float, meal_cho: float | None = None) -> ControlDecision:
        raise NotImplementedError

    def record_delivery(self, t: float, basal: float, bolus: float):
        self.history.append(PumpEvent(t, basal, bolus))
        self.history.trim(t - self.config.dia - CONTROL_INTERVAL)

    def iob(self, t: float) -> float:
        return calculate_iob(self.history, t, self.config)


class FixedBasalController(Controller):
    name = "fixed_basal"

    def decide(self, t, cgm, meal_cho=None):
        basal = min(self.config.basal_rate, self.config.max_basal)
        return ControlDecision(basal, 0.0, Diagnostics(iob=self.iob(t), rationale=Rationale.FIXED_BASAL))


class BasalBolusController(Controller):
    name = "basal_bolus"
    announced = True

    def decide(self, t, cgm, meal_cho=None):
        d = basal_bolus_decide(cgm, meal_cho, self.config)
        return replace(d, diagnostics=replace(d.diagnostics, iob=self.iob(t)))


class OpenAPSController(Controller):
    """Predictive temp-basal controller with a private temp-basal state."""

    name = "openaps"

    def __init__(self, config: ControllerConfig, announced: bool = False):
        super().__init__(config)
        self.announced = announced
        self.cgm: list[float] = []
        self.temp_rate: float | None = None
        self.temp_expires: float = -math.inf

    def decide(self, t, cgm, meal_cho=None):
        self.cgm.append(float(cgm))
        del self.cgm[:-3]
        current = self.temp_rate if t < self.temp_expires else None
        try:
            d = openaps_decide(self.cgm, self.history, current, self.config, now=t)
        except InsufficientHistory:
            basal = 0.0 if cgm < self.config.suspend_threshold else min(self.config.basal_rate, self.config.max_basal)
            rationale = Rationale.LOW_GLUCOSE_SUSPEND if basal == 0.0 and cgm < self.config.suspend_threshold else Rationale.WARMUP
            return ControlDecision(basal, 0.0, Diagnostics(iob=self.iob(t), rationale=rationale))
        bolus = 0.0
        if self.announced and meal_cho:
            bolus = min(meal_cho / self.config.cr, self.config.max_bolus)
            d = replace(d, bolus=bolus)
        if d.diagnostics.rationale in (Rationale.RISING_BUT_LOW, Rationale.FALLING_BUT_HIGH, Rationale.AT_TARGET):
            self.temp_rate, self.temp_expires = None, -math.inf
        else:
            self.temp_rate, self.temp_expires = d.basal, t + TEMP_DURATION
        return d


CONTROLLERS = {
    "fixed_basal": FixedBasalController,
    "basal_bolus": BasalBolusController,
    "openaps": OpenAPSController,
}


def make_controller(kind: str, config: ControllerConfig, announced: bool = False) -> Controller:
    if kind not in CONTROLLERS:
        raise ConfigError(f"unknown controller {kind!r}", path="controller")
    if kind == "openaps":
        return OpenAPSController(config, announced=announced)
    return CONTROLLERS[kind](config)


def controller_config_for(profile, **overrides) -> ControllerConfig:
    """Default controller configuration for a patient profile (MVP or UVA)."""
    from . import mvp, uva

    if isinstance(profile, uva.UvaProfile):
        basal = profile.basal_rate
        u_2ss = profile.u_2ss
    elif isinstance(profile, mvp.MvpProfile):
        basal = mvp.basal_rate_for_target(profile, overrides.get("bg_target", 120.0))
        u_2ss = basal / MIN_PER_HOUR * PMOL_PER_UNIT / profile.bw
    else:
        raise TypeError(f"unsupported profile type {type(profile).__name__}")
    dosing = derive_dosing_params(profile.bw)
    base = ControllerConfig(
        isf=dosing["isf"], cr=dosing["cr"], cf=dosing["cf"], basal_rate=basal,
        u_2ss=u_2ss, bw=profile.bw, max_basal=max(4.0 * basal, 1.0),
    )
    return base.with_overrides(**overrides) if overrides else base


def commanded_rate(decision: ControlDecision, step: float = CONTROL_INTERVAL) -> float:
    """Commanded insulin in U/min averaged over one control step."""
    return decision.basal / MIN_PER_HOUR + decision.bolus / step


def decisions_to_array(decisions: Sequence[ControlDecision], step: float = CONTROL_INTERVAL) -> np.ndarray:
    return np.array([commanded_rate(d, step) for d in decisions], dtype=float)
