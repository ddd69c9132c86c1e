"""Fault-campaign expansion and a resumable, parallel campaign runner.

A grid is ``scenarios x start/duration pairs x initial BGs``, expanded in that
(scenario-major) order. Start/duration pairs are drawn once from the campaign
seed and written verbatim into every expanded spec. When a cohort is given,
run ``i`` uses cohort member ``i mod n``.

The runner writes one trace CSV per distinct spec hash and skips hashes whose
CSV already exists, so an interrupted campaign resumes where it stopped. The
report is always rebuilt from the CSVs on disk, which makes it independent of
parallelism and of how many runs were resumed.
"""

from __future__ import annotations

import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .analytics import campaign_report, format_campaign_report
from .errors import ConfigError
from .experiment import ExperimentSpec, cohort, spec_from_dict
from .faults import FaultSpec, Trigger

START_RANGE = (60.0, 600.0)
DURATION_RANGE = (30.0, 240.0)
GRID_STEP = 5.0


@dataclass(frozen=True)
class ScenarioTemplate:
    """A fault without its activation window."""

    target: str
    kind: str
    magnitude: float | None = None
    trigger: Trigger | None = None

    def at(self, start: float, duration: float) -> FaultSpec:
        return FaultSpec(self.target, self.kind, start, duration, self.magnitude, self.trigger)

    @classmethod
    def from_dict(cls, d: dict) -> "ScenarioTemplate":
        trig = d.get("trigger")
        mag = d.get("magnitude")
        tmpl = cls(d["target"], d["kind"], None if mag is None else float(mag), Trigger(**trig) if trig else None)
        tmpl.at(0.0, 0.0)  # validates target/kind/magnitude
        return tmpl


@dataclass(frozen=True)
class CampaignGrid:
    base: ExperimentSpec
    fault_scenarios: tuple[ScenarioTemplate, ...]
    start_duration_pairs: tuple[tuple[float, float], ...]
    initial_bgs: tuple[float, ...]
    profiles: tuple = ()  # round-robin over these when non-empty

    def __post_init__(self):
        for name in ("fault_scenarios", "start_duration_pairs", "initial_bgs"):
            if not getattr(self, name):
                raise ConfigError("campaign axis is empty", path=f"campaign.{name}")

    @property
    def size(self) -> int:
        return len(self.fault_scenarios) * len(self.start_duration_pairs) * len(self.initial_bgs)


def draw_pairs(n: int, seed: int, start_range=START_RANGE, duration_range=DURATION_RANGE,
               step: float = GRID_STEP) -> tuple[tuple[float, float], ...]:
    """``n`` (start, duration) pairs on a ``step``-minute grid, reproducible from ``seed``."""
    if n < 1:
        raise ConfigError("need at least one start/duration pair", path="campaign.n_pairs")
    rng = np.random.default_rng(seed)
    s_lo, s_hi = (int(v // step) for v in start_range)
    d_lo, d_hi = (int(v // step) for v in duration_range)
    starts = rng.integers(s_lo, s_hi + 1, size=n) * step
    durations = rng.integers(d_lo, d_hi + 1, size=n) * step
    return tuple((float(s), float(d)) for s, d in zip(starts, durations))


def expand_campaign(grid: CampaignGrid, seed: int | None = None) -> list[ExperimentSpec]:
    """Cartesian expansion in scenario-major order.

    ``seed`` offsets the per-run sensor seed (``seed + index``); by default the
    base spec's seed is used.
    """
    seed = grid.base.seed if seed is None else seed
    specs = []
    i = 0
    for scenario in grid.fault_scenarios:
        for start, duration in grid.start_duration_pairs:
            for bg in grid.initial_bgs:
                profile = grid.profiles[i % len(grid.profiles)] if grid.profiles else grid.base.profile
                fault = scenario.at(start, duration)
                specs.append(replace(
                    grid.base, profile=profile, initial_bg=float(bg), faults=(fault,), seed=seed + i,
                    name=f"{grid.base.name or 'run'}-{i:04d}",
                ))
                i += 1
    return specs


def grid_from_doc(doc: dict, base_dir=None) -> CampaignGrid:
    """Build a grid from a campaign file (an experiment document with a ``campaign`` block)."""
    axes = doc.get("campaign")
    if not isinstance(axes, dict):
        raise ConfigError("missing campaign block", path="$.campaign")
    base_doc = {k: v for k, v in doc.items() if k != "campaign"}
    base = spec_from_dict(base_doc, base_dir=base_dir)
    seed = base.seed
    if "start_duration_pairs" in axes:
        pairs = tuple((float(s), float(d)) for s, d in axes["start_duration_pairs"])
    else:
        pairs = draw_pairs(int(axes.get("n_pairs", 9)), seed, tuple(axes.get("start_range", START_RANGE)),
                           tuple(axes.get("duration_range", DURATION_RANGE)))
    profiles = ()
    if "cohort" in axes:
        c = axes["cohort"]
        profiles = tuple(cohort(c.get("model", base.model), int(c["n"]), int(c["seed"])))
    scenarios = []
    for i, s in enumerate(axes.get("scenarios", [])):
        try:
            scenarios.append(ScenarioTemplate.from_dict(s))
        except (KeyError, ValueError, TypeError) as exc:
            raise ConfigError(str(exc), path=f"$.campaign.scenarios[{i}]") from exc
    return CampaignGrid(base, tuple(scenarios), pairs, tuple(float(b) for b in axes.get("initial_bgs", [])),
                        profiles)


# -- execution ------------------------------------------------------------------

def trace_path(out_dir, spec_hash: str) -> Path:
    return Path(out_dir) / "traces" / f"{spec_hash}.csv"


def _run_one(spec_doc: dict) -> str:
    """Worker: simulate one spec and persist its trace; returns the spec hash."""
    from .engine import run_closed_loop
    from .experiment import spec_hash
    from .io import write_trace

    spec = spec_from_dict(spec_doc)
    h = spec_hash(spec_doc)
    write_trace(_OUT[0] / "traces" / f"{h}.csv", run_closed_loop(spec), spec_doc)
    return h


_OUT: list[Path] = []


def _init_worker(out_dir: str):
    _OUT[:] = [Path(out_dir)]


def run_specs(specs: Sequence[ExperimentSpec], out_dir, parallelism: int = 1) -> list[str]:
    """Simulate every spec whose trace is not yet on disk; return hashes in spec order."""
    out_dir = Path(out_dir)
    (out_dir / "traces").mkdir(parents=True, exist_ok=True)
    docs = [s.to_dict() for s in specs]
    from .experiment import spec_hash

    hashes = [spec_hash(d) for d in docs]
    todo = {}
    for h, d in zip(hashes, docs):
        if h not in todo and not trace_path(out_dir, h).is_file():
            todo[h] = d
    pending = [todo[h] for h in sorted(todo)]
    if pending:
        if parallelism > 1:
            with ProcessPoolExecutor(max_workers=parallelism, initializer=_init_worker,
                                     initargs=(str(out_dir),)) as pool:
                for _ in pool.map(_run_one, pending, chunksize=max(1, len(pending) // (4 * parallelism))):
                    pass
        else:
            _init_worker(str(out_dir))
            for d in pending:
                _run_one(d)
    return hashes


def load_results(out_dir, hashes: Sequence[str]):
    from .io import read_trace

    cache = {}
    results = []
    for h in hashes:
        if h not in cache:
            cache[h] = read_trace(trace_path(out_dir, h))
        records, doc = cache[h]
        results.append((doc, records))
    return results


def run_campaign(specs: Sequence[ExperimentSpec], out_dir, parallelism: int = 1,
                 report_name: str = "report") -> dict:
    """Run (or resume) a campaign and write ``<report_name>.json`` and ``.txt`` next to the traces."""
    from .io import atomic_write, dump_json

    if not specs:
        raise ConfigError("campaign has no runs", path="campaign")
    hashes = run_specs(specs, out_dir, parallelism)
    report = campaign_report(load_results(out_dir, hashes))
    atomic_write(Path(out_dir) / f"{report_name}.json", dump_json(report))
    atomic_write(Path(out_dir) / f"{report_name}.txt", format_campaign_report(report))
    return report


def default_parallelism() -> int:
    return max(1, min(8, os.cpu_count() or 1))
