"""Closed-loop artificial pancreas testbed.

Virtual patients (MVP and a reduced UVA model), Basal-Bolus and OpenAPS-style
controllers, CGM/pump device models, fault injection, campaign analytics and
least-squares profile identification.
"""

from ._backend import BACKEND
from .analytics import HazardLabel, OutcomeReport, campaign_report, compute_mse, compute_outcomes, hazard_label
from .controllers import ControlDecision, ControllerConfig, derive_dosing_params
from .devices import PumpConfig, SensorConfig
from .engine import TraceRecord, replay_bg, replay_insulin, run_closed_loop
from .errors import ConfigError, SimulationAborted, TestbedError, Unidentifiable
from .experiment import ExperimentSpec, spec_from_dict
from .faults import FaultSpec, Trigger, apply_fault
from .mvp import MvpProfile, mvp_default_cohort
from .uva import UvaProfile, uva_default_cohort

__version__ = "0.1.0"

__all__ = [
    "BACKEND", "ConfigError", "ControlDecision", "ControllerConfig", "ExperimentSpec", "FaultSpec",
    "HazardLabel", "MvpProfile", "OutcomeReport", "PumpConfig", "SensorConfig", "SimulationAborted",
    "TestbedError", "TraceRecord", "Trigger", "Unidentifiable", "UvaProfile", "apply_fault",
    "campaign_report", "compute_mse", "compute_outcomes", "derive_dosing_params", "hazard_label",
    "mvp_default_cohort", "replay_bg", "replay_insulin", "run_closed_loop", "spec_from_dict",
    "uva_default_cohort",
]
