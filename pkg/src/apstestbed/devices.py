"""CGM sensor and insulin pump models."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .controllers import ControlDecision
from .errors import ConfigError
from .units import MIN_PER_HOUR, PMOL_PER_UNIT

OUTPUT_UNITS = ("U/min", "pmol/min")


@dataclass(frozen=True)
class SensorConfig:
    noise_sd: float = 2.0  # mg/dL
    range: tuple[float, float] = (39.0, 400.0)
    sample_interval: float = 5.0  # min
    seed: int = 0

    def __post_init__(self):
        if not self.noise_sd >= 0:
            raise ConfigError("noise_sd must be nonnegative", path="noise_sd")
        lo, hi = self.range
        if not lo < hi:
            raise ConfigError("range min must be below max", path="range")
        if not self.sample_interval > 0:
            raise ConfigError("sample_interval must be positive", path="sample_interval")

    def clip(self, value: float) -> float:
        lo, hi = self.range
        return min(max(value, lo), hi)


@dataclass(frozen=True)
class PumpConfig:
    max_basal: float = 35.0  # U/hr
    max_bolus: float = 25.0  # U
    basal_resolution: float = 0.05  # U/hr
    output_unit: str = "U/min"

    def __post_init__(self):
        for name in ("max_basal", "max_bolus", "basal_resolution"):
            if not getattr(self, name) > 0:
                raise ConfigError("must be positive", path=name)
        if self.output_unit not in OUTPUT_UNITS:
            raise ConfigError(f"must be one of {OUTPUT_UNITS}", path="output_unit")

    @property
    def max_rate(self) -> float:
        """Largest per-minute delivery in U/min (full basal plus a whole bolus in one minute)."""
        return self.max_basal / MIN_PER_HOUR + self.max_bolus


def cgm_read(true_bg: float, config: SensorConfig, rng: np.random.Generator | None = None) -> float:
    """Noisy, range-clipped sensor reading; draws from ``rng`` only when noise_sd > 0."""
    if true_bg < 0:
        raise ValueError("true_bg must be nonnegative")
    value = float(true_bg)
    if config.noise_sd > 0:
        if rng is None:
            raise ValueError("a random generator is required when noise_sd > 0")
        value += rng.normal(0.0, config.noise_sd)
    return config.clip(value)


class Sensor:
    """CGM with its own random stream."""

    def __init__(self, config: SensorConfig):
        self.config = config
        self.rng = np.random.default_rng(config.seed)

    def read(self, true_bg: float) -> float:
        return cgm_read(true_bg, self.config, self.rng)


def quantize_down(rate: float, resolution: float) -> float:
    """Round toward zero onto the resolution grid; never returns more than ``rate``."""
    q = math.floor(rate / resolution + 1e-9) * resolution
    return min(q, rate)


def clip_decision(decision: ControlDecision, config: PumpConfig) -> tuple[float, float]:
    """Deliverable (basal U/hr, bolus U) after quantization and pump limits."""
    basal = min(max(quantize_down(decision.basal, config.basal_resolution), 0.0), config.max_basal)
    bolus = min(max(decision.bolus, 0.0), config.max_bolus)
    return basal, bolus


def pump_deliver(decision: ControlDecision, config: PumpConfig, bolus_minutes: float = 5.0) -> float:
    """Delivered insulin rate in ``config.output_unit`` with the bolus spread over ``bolus_minutes``."""
    basal, bolus = clip_decision(decision, config)
    rate = basal / MIN_PER_HOUR + bolus / bolus_minutes
    return to_output_unit(rate, config)


def to_output_unit(rate_u_per_min: float, config: PumpConfig) -> float:
    if config.output_unit == "pmol/min":
        return rate_u_per_min * PMOL_PER_UNIT
    return rate_u_per_min


def clip_rate(rate_u_per_min: float, config: PumpConfig) -> float:
    """Clip a (possibly faulted) per-minute delivery to the pump's physical range."""
    return min(max(rate_u_per_min, 0.0), config.max_rate)
