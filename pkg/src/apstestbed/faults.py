"""Software fault injection on the CGM and insulin signal paths.

A :class:`FaultSpec` corrupts one signal during the window
``[start, start + duration)`` (minutes), optionally only while a BG trigger
holds. Fault kinds:

``truncate``  the signal reads zero
``hold``      the signal freezes at its last value before activation
``add``/``sub`` the signal is shifted by ``magnitude``

Faulted values are re-clipped to the downstream device range, so a fault can
never produce a reading or delivery the hardware could not.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Iterable

TARGETS = ("cgm", "insulin")
KINDS = ("truncate", "hold", "add", "sub")


@dataclass(frozen=True)
class Trigger:
    bg_above: float | None = None
    bg_below: float | None = None

    def __post_init__(self):
        if self.bg_above is not None and self.bg_below is not None:
            raise ValueError("a trigger has at most one of bg_above / bg_below")

    def holds(self, bg: float | None) -> bool:
        if self.bg_above is None and self.bg_below is None:
            return True
        if bg is None:
            return False
        if self.bg_above is not None:
            return bg > self.bg_above
        return bg < self.bg_below

    def to_dict(self):
        if self.bg_above is not None:
            return {"bg_above": self.bg_above}
        if self.bg_below is not None:
            return {"bg_below": self.bg_below}
        return None


@dataclass(frozen=True)
class FaultSpec:
    target: str
    kind: str
    start: float
    duration: float
    magnitude: float | None = None
    trigger: Trigger | None = None

    def __post_init__(self):
        if self.target not in TARGETS:
            raise ValueError(f"fault target must be one of {TARGETS}, got {self.target!r}")
        if self.kind not in KINDS:
            raise ValueError(f"fault kind must be one of {KINDS}, got {self.kind!r}")
        if not (self.duration >= 0 and self.start >= 0):
            raise ValueError("fault start and duration must be nonnegative")
        needs_magnitude = self.kind in ("add", "sub")
        if needs_magnitude != (self.magnitude is not None):
            raise ValueError(f"magnitude is required for add/sub faults and only for them ({self.kind})")
        if needs_magnitude and not (math.isfinite(self.magnitude) and self.magnitude >= 0):
            raise ValueError("magnitude must be a nonnegative finite number")

    @property
    def label(self) -> str:
        base = f"{self.target}-{self.kind}"
        if self.magnitude is not None:
            base += f"-{self.magnitude:g}"
        return base

    def in_window(self, now: float) -> bool:
        return self.start <= now < self.start + self.duration

    def to_dict(self) -> dict:
        d = {"target": self.target, "kind": self.kind, "start": self.start, "duration": self.duration}
        if self.magnitude is not None:
            d["magnitude"] = self.magnitude
        if self.trigger is not None and self.trigger.to_dict():
            d["trigger"] = self.trigger.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "FaultSpec":
        trig = d.get("trigger")
        return cls(
            target=d["target"], kind=d["kind"], start=float(d["start"]), duration=float(d["duration"]),
            magnitude=None if d.get("magnitude") is None else float(d["magnitude"]),
            trigger=Trigger(**trig) if trig else None,
        )


def is_active(spec: FaultSpec, now: float, trigger_context: dict | None = None) -> bool:
    if not spec.in_window(now):
        return False
    if spec.trigger is None:
        return True
    bg = None if trigger_context is None else trigger_context.get("bg")
    return spec.trigger.holds(bg)


def apply_fault(spec: FaultSpec, signal_value: float, now: float, last_clean_value: float | None,
                trigger_context: dict | None = None,
                clip: Callable[[float], float] | None = None) -> tuple[float, bool]:
    """Return ``(faulted_value, active)`` for one sample.

    ``last_clean_value`` is the value a hold fault freezes at (the last sample
    seen before activation). ``clip`` is the downstream device range.
    """
    if not is_active(spec, now, trigger_context):
        return signal_value, False
    if spec.kind == "truncate":
        value = 0.0
    elif spec.kind == "hold":
        value = signal_value if last_clean_value is None else last_clean_value
    elif spec.kind == "add":
        value = signal_value + spec.magnitude
    else:
        value = signal_value - spec.magnitude
    if clip is not None:
        value = clip(value)
    return value, True


class FaultInjector:
    """Per-simulation fault state: one hold buffer per fault, one tap per target."""

    def __init__(self, faults: Iterable[FaultSpec], clips: dict[str, Callable[[float], float]] | None = None):
        self.faults = tuple(faults)
        self.clips = clips or {}
        self._held: list[float | None] = [None] * len(self.faults)

    def __bool__(self):
        return bool(self.faults)

    def targets(self, target: str) -> bool:
        return any(f.target == target for f in self.faults)

    def tap(self, target: str, value: float, now: float, bg: float | None = None) -> tuple[float, bool]:
        any_active = False
        ctx = {"bg": bg}
        clip = self.clips.get(target)
        for i, spec in enumerate(self.faults):
            if spec.target != target:
                continue
            active = is_active(spec, now, ctx)
            if not active:
                self._held[i] = value
                continue
            value, _ = apply_fault(spec, value, now, self._held[i], ctx, clip)
            any_active = True
        return value, any_active
