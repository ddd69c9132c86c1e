"""Experiment specification, profile (de)serialization and provenance hashing."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field, replace
from typing import Any, Union

from . import mvp, uva
from .devices import PumpConfig, SensorConfig
from .errors import ConfigError
from .faults import FaultSpec

SCHEMA_VERSION = 1
MODELS = ("mvp", "uva")
CONTROLLER_KINDS = ("basal_bolus", "openaps", "fixed_basal")
CONTROL_INTERVAL = 5

Profile = Union[mvp.MvpProfile, uva.UvaProfile]

_PROFILE_TYPES = {"mvp": mvp.MvpProfile, "uva": uva.UvaProfile}
_PROFILE_UNITS = {"mvp": mvp.PARAM_UNITS, "uva": uva.PARAM_UNITS}


def model_of(profile: Profile) -> str:
    if isinstance(profile, mvp.MvpProfile):
        return "mvp"
    if isinstance(profile, uva.UvaProfile):
        return "uva"
    raise TypeError(f"not a patient profile: {type(profile).__name__}")


def profile_to_dict(profile: Profile) -> dict:
    model = model_of(profile)
    return {
        "schema_version": SCHEMA_VERSION,
        "model": model,
        "name": profile.name,
        "params": profile.params(),
        "units": dict(_PROFILE_UNITS[model]),
    }


def profile_from_dict(doc: dict) -> Profile:
    model = doc.get("model")
    if model not in _PROFILE_TYPES:
        raise ConfigError(f"unknown model {model!r}", path="model")
    cls = _PROFILE_TYPES[model]
    params = doc.get("params")
    if not isinstance(params, dict):
        raise ConfigError("params must be an object", path="params")
    expected = set(cls.param_names())
    unknown = set(params) - expected
    missing = expected - set(params)
    if unknown:
        raise ConfigError(f"unknown parameters {sorted(unknown)}", path="params")
    if missing:
        raise ConfigError(f"missing parameters {sorted(missing)}", path="params")
    return cls(**{k: float(v) for k, v in params.items()}, name=str(doc.get("name", "")))


def cohort(model: str, n: int, seed: int) -> list[Profile]:
    if model == "mvp":
        return mvp.mvp_default_cohort(n, seed)
    if model == "uva":
        return uva.uva_default_cohort(n, seed)
    raise ConfigError(f"unknown model {model!r}", path="model")


def default_pump(model: str) -> PumpConfig:
    return PumpConfig(output_unit="pmol/min" if model == "uva" else "U/min")


@dataclass(frozen=True)
class ExperimentSpec:
    model: str
    profile: Profile
    controller: str = "openaps"
    controller_config: dict = field(default_factory=dict)
    sensor: SensorConfig = field(default_factory=SensorConfig)
    pump: PumpConfig | None = None
    meals: tuple[tuple[float, float], ...] = ()  # (minute, grams)
    initial_bg: float = 120.0
    duration: float = 750.0
    faults: tuple[FaultSpec, ...] = ()
    seed: int = 0
    bolus_delivery: str = "spread"
    announce_meals: bool | None = None
    hypo_refinement: bool = False
    name: str = ""

    def __post_init__(self):
        if self.pump is None:
            object.__setattr__(self, "pump", default_pump(self.model))
        object.__setattr__(self, "meals", tuple((float(t), float(g)) for t, g in self.meals))
        object.__setattr__(self, "faults", tuple(self.faults))

    def validate(self):
        """Raise :class:`ConfigError` on any inconsistency; called before step 0."""
        if self.model not in MODELS:
            raise ConfigError(f"unknown model {self.model!r}", path="model")
        if model_of(self.profile) != self.model:
            raise ConfigError(f"profile is for {model_of(self.profile)!r}, experiment model is {self.model!r}",
                              path="profile")
        if self.controller not in CONTROLLER_KINDS:
            raise ConfigError(f"unknown controller {self.controller!r}", path="controller")
        expected_unit = "pmol/min" if self.model == "uva" else "U/min"
        if self.pump.output_unit != expected_unit:
            raise ConfigError(f"{self.model} model needs pump output in {expected_unit}, got {self.pump.output_unit}",
                              path="pump.output_unit")
        if self.sensor.sample_interval != CONTROL_INTERVAL:
            raise ConfigError(f"sensor must sample every {CONTROL_INTERVAL} min", path="sensor.sample_interval")
        if not self.duration > 0 or self.duration % CONTROL_INTERVAL:
            raise ConfigError(f"duration must be a positive multiple of {CONTROL_INTERVAL}", path="duration")
        if not self.initial_bg > 0:
            raise ConfigError("initial_bg must be positive", path="initial_bg")
        for i, (t, g) in enumerate(self.meals):
            if not 0 <= t < self.duration:
                raise ConfigError(f"meal time {t} outside [0, {self.duration})", path=f"meals[{i}]")
            if t != int(t):
                raise ConfigError("meal times must be whole minutes", path=f"meals[{i}]")
            if g < 0:
                raise ConfigError("meal carbohydrate must be nonnegative", path=f"meals[{i}]")
        if self.bolus_delivery not in ("spread", "front"):
            raise ConfigError("bolus_delivery must be 'spread' or 'front'", path="bolus_delivery")

    @property
    def n_steps(self) -> int:
        return int(self.duration // CONTROL_INTERVAL)

    def without_faults(self) -> "ExperimentSpec":
        return replace(self, faults=())

    def to_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "name": self.name,
            "model": self.model,
            "profile": profile_to_dict(self.profile),
            "controller": self.controller,
            "controller_config": dict(sorted(self.controller_config.items())),
            "sensor": {"noise_sd": self.sensor.noise_sd, "range": list(self.sensor.range),
                       "sample_interval": self.sensor.sample_interval},
            "pump": {"max_basal": self.pump.max_basal, "max_bolus": self.pump.max_bolus,
                     "basal_resolution": self.pump.basal_resolution, "output_unit": self.pump.output_unit},
            "meals": [list(m) for m in self.meals],
            "initial_bg": self.initial_bg,
            "duration": self.duration,
            "faults": [f.to_dict() for f in self.faults],
            "seed": self.seed,
            "bolus_delivery": self.bolus_delivery,
            "announce_meals": self.announce_meals,
            "hypo_refinement": self.hypo_refinement,
        }

    def spec_hash(self) -> str:
        return spec_hash(self.to_dict())


def canonical_json(doc: Any) -> str:
    return json.dumps(doc, sort_keys=True, separators=(",", ":"))


def spec_hash(doc: dict) -> str:
    return hashlib.sha256(canonical_json(doc).encode()).hexdigest()[:16]


def resolve_profile(ref: Any, model: str | None = None, base_dir=None) -> Profile:
    """Resolve an inline profile, a profile-file path, or a cohort reference."""
    from .io import load_profile

    if isinstance(ref, str):
        return load_profile(ref, base_dir=base_dir)
    if isinstance(ref, dict) and "cohort" in ref:
        c = ref["cohort"]
        members = cohort(c.get("model", model), int(c["n"]), int(c["seed"]))
        index = int(c.get("index", 0))
        if not 0 <= index < len(members):
            raise ConfigError(f"cohort index {index} out of range", path="profile.cohort.index")
        return members[index]
    if isinstance(ref, dict):
        return profile_from_dict(ref)
    raise ConfigError("profile must be a path, an inline profile, or a cohort reference", path="profile")


def spec_from_dict(doc: dict, base_dir=None) -> ExperimentSpec:
    model = doc.get("model")
    if "profile" not in doc:
        raise ConfigError("missing profile reference", path="profile")
    profile = resolve_profile(doc["profile"], model=model, base_dir=base_dir)
    sensor_doc = dict(doc.get("sensor", {}))
    if "range" in sensor_doc:
        sensor_doc["range"] = tuple(sensor_doc["range"])
    sensor = SensorConfig(**sensor_doc)
    pump = PumpConfig(**doc["pump"]) if doc.get("pump") else None
    spec = ExperimentSpec(
        model=model,
        profile=profile,
        controller=doc.get("controller", "openaps"),
        controller_config=dict(doc.get("controller_config", {})),
        sensor=sensor,
        pump=pump,
        meals=tuple(tuple(m) for m in doc.get("meals", [])),
        initial_bg=float(doc.get("initial_bg", 120.0)),
        duration=float(doc.get("duration", 750.0)),
        faults=tuple(FaultSpec.from_dict(f) for f in doc.get("faults", [])),
        seed=int(doc.get("seed", 0)),
        bolus_delivery=doc.get("bolus_delivery", "spread"),
        announce_meals=doc.get("announce_meals"),
        hypo_refinement=bool(doc.get("hypo_refinement", False)),
        name=str(doc.get("name", "")),
    )
    spec.validate()
    return spec
