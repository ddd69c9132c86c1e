"""Closed-loop orchestration and open-loop replay.

Each 5-minute control step:

1. sample the CGM from the true BG (sensor-path fault tap),
2. ask the controller for a decision,
3. clip it through the pump and apply the actuation-path fault tap per minute,
4. integrate the patient model over five 1-minute Euler substeps.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import mvp, uva
from ._backend import kernels
from .controllers import (CONTROL_INTERVAL, Controller, ControlDecision, commanded_rate,
                          controller_config_for, make_controller)
from .devices import Sensor, clip_decision, clip_rate, quantize_down
from .errors import ConfigError, SimulationAborted
from .experiment import ExperimentSpec, Profile, model_of
from .faults import FaultInjector
from .units import MG_PER_G, MICROUNITS_PER_UNIT, MIN_PER_HOUR, PMOL_PER_UNIT

SUBSTEP = 1.0
SUBSTEPS_PER_STEP = int(CONTROL_INTERVAL / SUBSTEP)

TRACE_COLUMNS = ("t_min", "bg_true", "cgm", "basal_cmd_Uhr", "bolus_cmd_U", "delivered_Umin",
                 "iob_U", "cho_g", "fault_active", "rationale")


@dataclass(frozen=True)
class TraceRecord:
    t: float
    bg_true: float
    cgm: float
    basal_cmd: float  # U/hr
    bolus_cmd: float  # U
    delivered: float  # U/min, mean over the step
    iob: float  # U
    cho: float  # g
    fault_active: bool
    rationale: str

    def row(self) -> tuple:
        return (self.t, self.bg_true, self.cgm, self.basal_cmd, self.bolus_cmd, self.delivered,
                self.iob, self.cho, self.fault_active, self.rationale)


def column(trace, name: str) -> np.ndarray:
    """Column of a trace by CSV header name or attribute name."""
    attr = {"t_min": "t", "basal_cmd_Uhr": "basal_cmd", "bolus_cmd_U": "bolus_cmd",
            "delivered_Umin": "delivered", "iob_U": "iob", "cho_g": "cho"}.get(name, name)
    return np.array([getattr(r, attr) for r in trace])


class Plant:
    """A patient model held as kernel arrays so stepping needs no object churn."""

    def __init__(self, model: str, profile: Profile, y: np.ndarray, meals=(), hypo: bool = False):
        self.model = model
        self.profile = profile
        self.params = profile.as_array()
        self.y = np.ascontiguousarray(y, dtype=np.float64)
        self.hypo = hypo
        self.meal_elapsed = np.array([-float(t) for t, _ in meals], dtype=np.float64)
        self.meal_carbs = np.array([float(g) * MG_PER_G for _, g in meals], dtype=np.float64)
        self.dose_scale = MICROUNITS_PER_UNIT if model == "mvp" else PMOL_PER_UNIT

    @classmethod
    def at(cls, model: str, profile: Profile, bg: float, basal_u_per_hr: float, meals=(), hypo=False):
        if model == "mvp":
            s = mvp.initial_state(profile, bg, basal_u_per_hr)
            y = np.array([s.i_sc, s.i_p, s.i_eff, s.bg])
        else:
            y = uva.initial_state(profile, bg, basal_u_per_hr).as_array()
        return cls(model, profile, y, meals, hypo)

    @property
    def bg(self) -> float:
        if self.model == "mvp":
            return float(self.y[3])
        return float(self.y[0] / self.profile.v_g)

    def advance(self, doses_u_per_min: np.ndarray, bg_out=None):
        doses = np.asarray(doses_u_per_min, dtype=np.float64) * self.dose_scale
        if self.model == "mvp":
            kernels.mvp_integrate(self.y, self.params, doses, SUBSTEP, self.meal_elapsed,
                                  self.meal_carbs, bg_out)
        else:
            kernels.uva_integrate(self.y, self.params, doses, SUBSTEP, self.meal_elapsed,
                                  self.meal_carbs, self.hypo, bg_out)

    def finite(self) -> bool:
        return bool(np.all(np.isfinite(self.y)))


def initial_basal(spec: ExperimentSpec, controller: Controller | None = None) -> float:
    """Pump-deliverable profile basal (U/hr) the patient is pre-conditioned on."""
    cfg = controller.config if controller else controller_config_for(spec.profile, **spec.controller_config)
    return min(quantize_down(cfg.basal_rate, spec.pump.basal_resolution), spec.pump.max_basal)


def build_controller(spec: ExperimentSpec) -> Controller:
    cfg = controller_config_for(spec.profile, **spec.controller_config)
    announced = bool(spec.announce_meals) if spec.announce_meals is not None else False
    return make_controller(spec.controller, cfg, announced=announced)


def run_closed_loop(spec: ExperimentSpec) -> list[TraceRecord]:
    """Simulate ``spec`` and return one :class:`TraceRecord` per control step."""
    spec.validate()
    try:
        controller = build_controller(spec)
    except TypeError as exc:
        raise ConfigError(str(exc), path="controller_config") from exc
    pump = spec.pump
    sensor = Sensor(spec.sensor.__class__(noise_sd=spec.sensor.noise_sd, range=spec.sensor.range,
                                          sample_interval=spec.sensor.sample_interval, seed=spec.seed))
    injector = FaultInjector(spec.faults, clips={"cgm": spec.sensor.clip,
                                                 "insulin": lambda v: clip_rate(v, pump)})
    insulin_faults = injector.targets("insulin")
    plant = Plant.at(spec.model, spec.profile, spec.initial_bg, initial_basal(spec, controller),
                     spec.meals, spec.hypo_refinement)
    announce = controller.announced
    step = CONTROL_INTERVAL
    trace: list[TraceRecord] = []
    for k in range(spec.n_steps):
        t = k * step
        bg = plant.bg
        cgm = sensor.read(bg)
        active = False
        if injector:
            cgm, active = injector.tap("cgm", cgm, t, bg)
        cho = sum(g for tm, g in spec.meals if t <= tm < t + step)
        decision = controller.decide(t, cgm, cho if (announce and cho) else None)
        basal, bolus = clip_decision(decision, pump)
        controller.record_delivery(t, basal, bolus)

        base = basal / MIN_PER_HOUR
        if spec.bolus_delivery == "front":
            doses = [base + bolus / SUBSTEP] + [base] * (SUBSTEPS_PER_STEP - 1)
        else:
            doses = [base + bolus / step] * SUBSTEPS_PER_STEP
        if insulin_faults:
            for j in range(SUBSTEPS_PER_STEP):
                doses[j], hit = injector.tap("insulin", doses[j], t + j * SUBSTEP, bg)
                active = active or hit
        if all(d == doses[0] for d in doses):
            delivered = doses[0]
        else:
            delivered = math.fsum(doses) / len(doses)

        trace.append(TraceRecord(
            t=t, bg_true=bg, cgm=cgm, basal_cmd=decision.basal, bolus_cmd=decision.bolus,
            delivered=delivered, iob=decision.diagnostics.iob, cho=cho, fault_active=active,
            rationale=decision.diagnostics.rationale.value,
        ))
        plant.advance(np.array(doses))
        if not plant.finite():
            raise SimulationAborted(k, f"non-finite patient state {plant.y.tolist()}")
    return trace


def replay_insulin(model: str, profile: Profile, insulin_trace, meals=(), initial_bg: float | None = None,
                   basal_rate: float | None = None, bg0: float | None = None,
                   cadence: float = CONTROL_INTERVAL, hypo_refinement: bool = False) -> np.ndarray:
    """Open-loop BG reconstruction driven by recorded insulin (U/min per control step).

    Returns BG at the start of every step, aligned with ``insulin_trace``.
    Insulin compartments start at equilibrium for ``basal_rate`` (U/hr),
    defaulting to the first recorded rate.
    """
    if cadence != CONTROL_INTERVAL:
        raise ConfigError(f"insulin trace must be sampled every {CONTROL_INTERVAL} min, got {cadence}",
                          path="cadence")
    if model_of(profile) != model:
        raise ConfigError("profile does not match model", path="profile")
    insulin = np.asarray(insulin_trace, dtype=np.float64)
    if insulin.ndim != 1 or insulin.size == 0:
        raise ValueError("insulin trace must be a non-empty 1-D sequence")
    if initial_bg is None:
        initial_bg = bg0
    if initial_bg is None:
        raise ValueError("initial_bg is required")
    if basal_rate is None:
        basal_rate = float(insulin[0]) * MIN_PER_HOUR
    plant = Plant.at(model, profile, initial_bg, basal_rate, meals, hypo_refinement)
    n = insulin.size
    per_minute = np.repeat(insulin, SUBSTEPS_PER_STEP)
    bg_minutes = np.empty(per_minute.size)
    out = np.empty(n)
    out[0] = plant.bg
    plant.advance(per_minute, bg_minutes)
    out[1:] = bg_minutes[SUBSTEPS_PER_STEP - 1:-1:SUBSTEPS_PER_STEP]
    return out


def replay_bg_decisions(controller, config, bg_trace, meals=(), announced: bool | None = None,
                        cadence: float = CONTROL_INTERVAL) -> list[ControlDecision]:
    """Feed a fixed BG sequence to a controller in open loop and collect its decisions."""
    if cadence != CONTROL_INTERVAL:
        raise ConfigError(f"bg trace must be sampled every {CONTROL_INTERVAL} min, got {cadence}",
                          path="cadence")
    if isinstance(controller, str):
        controller = make_controller(controller, config, announced=bool(announced))
    decisions = []
    for k, bg in enumerate(bg_trace):
        t = k * CONTROL_INTERVAL
        cho = sum(g for tm, g in meals if t <= tm < t + CONTROL_INTERVAL)
        d = controller.decide(t, float(bg), cho if (controller.announced and cho) else None)
        controller.record_delivery(t, d.basal, d.bolus)
        decisions.append(d)
    return decisions


def replay_bg(controller, config, bg_trace, meals=(), announced: bool | None = None,
              cadence: float = CONTROL_INTERVAL) -> np.ndarray:
    """Commanded insulin (U/min per step) for a fixed BG sequence."""
    decisions = replay_bg_decisions(controller, config, bg_trace, meals, announced, cadence)
    return np.array([commanded_rate(d) for d in decisions])
