"""Outcome metrics, hazard labels, MSE and campaign aggregation.

All glycemic metrics are computed on ``bg_true``: a corrupted CGM reading
never decides a hazard by itself. In-range is the closed interval [70, 180];
the outer buckets are strict (< 70, > 180), so the three buckets partition the
samples.
"""

from __future__ import annotations

import json
import math
from collections import defaultdict
from dataclasses import asdict, dataclass
from typing import Iterable, Sequence

import numpy as np

RANGE_LOW = 70.0
RANGE_HIGH = 180.0
SEVERE_LOW = 54.0
SEVERE_HIGH = 250.0  # ketoacidosis proxy

METRICS = ("pct_in_range", "pct_above_180", "pct_below_70", "pct_below_54", "pct_above_250")
METRIC_LABELS = {
    "pct_in_range": "% time 70-180 mg/dL",
    "pct_above_180": "% time > 180 mg/dL",
    "pct_below_70": "% time < 70 mg/dL",
    "pct_below_54": "% time < 54 mg/dL",
    "pct_above_250": "% time > 250 mg/dL",
}

SUSPEND_RATIONALES = ("low_glucose_suspend", "zero_temp")


def bg_values(trace) -> np.ndarray:
    """True BG samples from a trace (TraceRecords, a dict of columns, or an array)."""
    if isinstance(trace, np.ndarray):
        bg = trace
    elif isinstance(trace, dict):
        bg = np.asarray(trace["bg_true"], dtype=float)
    else:
        trace = list(trace)
        if trace and hasattr(trace[0], "bg_true"):
            bg = np.array([r.bg_true for r in trace], dtype=float)
        else:
            bg = np.asarray(trace, dtype=float)
    bg = np.asarray(bg, dtype=float).ravel()
    if bg.size == 0:
        raise ValueError("empty trace")
    return bg


@dataclass(frozen=True)
class Outcome:
    """Time-in-range percentages for one trace."""

    pct_in_range: float
    pct_above_180: float
    pct_below_70: float
    pct_below_54: float
    pct_above_250: float
    n_samples: int

    @classmethod
    def from_bg(cls, bg: np.ndarray) -> "Outcome":
        n = bg.size
        pct = lambda mask: 100.0 * int(np.count_nonzero(mask)) / n  # noqa: E731
        return cls(
            pct_in_range=pct((bg >= RANGE_LOW) & (bg <= RANGE_HIGH)),
            pct_above_180=pct(bg > RANGE_HIGH),
            pct_below_70=pct(bg < RANGE_LOW),
            pct_below_54=pct(bg < SEVERE_LOW),
            pct_above_250=pct(bg > SEVERE_HIGH),
            n_samples=n,
        )

    def metrics(self) -> dict[str, float]:
        return {m: getattr(self, m) for m in METRICS}


@dataclass(frozen=True)
class OutcomeReport:
    per_patient: tuple[Outcome, ...]
    mean: dict[str, float]
    sd: dict[str, float]
    names: tuple[str, ...] = ()

    def __getattr__(self, name):
        # cohort mean is the headline value of each metric
        if name in METRICS:
            return self.mean[name]
        raise AttributeError(name)

    def to_dict(self) -> dict:
        return {
            "mean": self.mean,
            "sd": self.sd,
            "per_patient": [dict(asdict(o), name=n) for o, n in
                            zip(self.per_patient, self.names or [""] * len(self.per_patient))],
        }


def _is_single(data) -> bool:
    if isinstance(data, (np.ndarray, dict)):
        return getattr(data, "ndim", 1) == 1
    data = list(data)
    return not data or hasattr(data[0], "bg_true") or isinstance(data[0], (int, float, np.floating))


def compute_outcomes(data, names: Sequence[str] = ()) -> OutcomeReport:
    """Outcome report for one trace or a cohort (sequence of traces).

    The cohort sd is the population sd over patients (zero for one patient).
    """
    traces = [data] if _is_single(data) else list(data)
    if not traces:
        raise ValueError("no traces")
    outcomes = tuple(Outcome.from_bg(bg_values(t)) for t in traces)
    mean, sd = {}, {}
    for m in METRICS:
        vals = np.array([getattr(o, m) for o in outcomes])
        mean[m] = float(vals.mean())
        sd[m] = float(vals.std())
    return OutcomeReport(outcomes, mean, sd, tuple(names))


def compute_bucketed_outcomes(trace, bucket_minutes: float, cadence: float = 5.0) -> dict[float, Outcome]:
    """Per-bucket outcomes keyed by bucket start minute (e.g. 43200 for monthly)."""
    if not bucket_minutes > 0:
        raise ValueError("bucket_minutes must be positive")
    bg = bg_values(trace)
    t = _times(trace)
    t = np.arange(bg.size) * cadence if t is None else np.asarray(t, dtype=float)
    keys = np.floor(t / bucket_minutes) * bucket_minutes
    return {float(k): Outcome.from_bg(bg[keys == k]) for k in np.unique(keys)}


@dataclass(frozen=True)
class HazardLabel:
    h1: bool  # any sample < 70
    h2: bool  # any sample > 180
    severe_low: bool  # any sample < 54
    severe_high: bool  # any sample > 250

    def __post_init__(self):
        if (self.severe_low and not self.h1) or (self.severe_high and not self.h2):
            raise ValueError("a severity marker requires its hazard flag")

    @property
    def any(self) -> bool:
        return self.h1 or self.h2


def hazard_label(trace) -> HazardLabel:
    bg = bg_values(trace)
    return HazardLabel(
        h1=bool(np.any(bg < RANGE_LOW)),
        h2=bool(np.any(bg > RANGE_HIGH)),
        severe_low=bool(np.any(bg < SEVERE_LOW)),
        severe_high=bool(np.any(bg > SEVERE_HIGH)),
    )


def _column(trace, column: str) -> np.ndarray:
    if isinstance(trace, np.ndarray):
        return trace.astype(float).ravel()
    if isinstance(trace, dict):
        return np.asarray(trace[column], dtype=float)
    trace = list(trace)
    if trace and hasattr(trace[0], "bg_true"):
        from .engine import column as trace_column
        return trace_column(trace, column).astype(float)
    return np.asarray(trace, dtype=float)


def _times(trace):
    if isinstance(trace, dict):
        return trace.get("t_min")
    if isinstance(trace, np.ndarray):
        return None
    trace = list(trace)
    if trace and hasattr(trace[0], "t"):
        return np.array([r.t for r in trace])
    return None


def compute_mse(trace_a, trace_b, column: str = "delivered_Umin") -> float:
    """Mean squared difference of one column between two aligned traces."""
    a = _column(trace_a, column)
    b = _column(trace_b, column)
    if a.shape != b.shape:
        raise ValueError(f"traces differ in length ({a.size} vs {b.size})")
    if a.size == 0:
        raise ValueError("empty trace")
    ta, tb = _times(trace_a), _times(trace_b)
    if ta is not None and tb is not None and not np.array_equal(np.asarray(ta), np.asarray(tb)):
        raise ValueError("trace timestamps are not aligned")
    d = a - b
    return float(np.mean(d * d))


# -- campaign aggregation -----------------------------------------------------

def fault_class(spec_doc: dict) -> str:
    faults = spec_doc.get("faults") or []
    if not faults:
        return "none"
    labels = []
    for f in faults:
        label = f"{f['target']}-{f['kind']}"
        if f.get("magnitude") is not None:
            label += f"-{f['magnitude']:g}"
        labels.append(label)
    return "+".join(labels)


def _spec_doc(spec) -> dict:
    return spec if isinstance(spec, dict) else spec.to_dict()


def _rationales(trace) -> list[str]:
    if isinstance(trace, dict):
        return list(trace.get("rationale", []))
    return [r.rationale for r in trace]


@dataclass
class _Tally:
    runs: int = 0
    hazard: int = 0
    h1: int = 0
    h2: int = 0
    severe_low: int = 0
    severe_high: int = 0
    suspension_runs: int = 0
    suspension_steps: int = 0
    h1_with_suspension: int = 0

    def add(self, label: HazardLabel, suspended_steps: int):
        self.runs += 1
        self.hazard += label.any
        self.h1 += label.h1
        self.h2 += label.h2
        self.severe_low += label.severe_low
        self.severe_high += label.severe_high
        self.suspension_steps += suspended_steps
        self.suspension_runs += suspended_steps > 0
        self.h1_with_suspension += label.h1 and suspended_steps > 0

    def summary(self) -> dict:
        rate = lambda k: 100.0 * k / self.runs if self.runs else 0.0  # noqa: E731
        return {
            "runs": self.runs,
            "hazard_rate": rate(self.hazard),
            "h1_rate": rate(self.h1),
            "h2_rate": rate(self.h2),
            "severe_low_rate": rate(self.severe_low),
            "severe_high_rate": rate(self.severe_high),
            "suspension_runs": self.suspension_runs,
            "suspension_steps": self.suspension_steps,
            "h1_with_suspension": self.h1_with_suspension,
        }


def campaign_report(results: Iterable[tuple]) -> dict:
    """Hazard-rate summary over ``(spec, trace)`` pairs.

    Rates are percentages of runs with any H1 or H2 sample. Runs are reduced in
    spec-hash order so the report does not depend on the order results arrive.
    """
    from .experiment import spec_hash

    rows = []
    for spec, trace in results:
        doc = _spec_doc(spec)
        rows.append((spec_hash(doc), doc, trace))
    if not rows:
        raise ValueError("no campaign results")
    rows.sort(key=lambda r: r[0])

    overall = _Tally()
    by_model_ctrl: dict[tuple, _Tally] = defaultdict(_Tally)
    by_class: dict[tuple, _Tally] = defaultdict(_Tally)
    for h, doc, trace in rows:
        label = hazard_label(trace)
        suspended = sum(r in SUSPEND_RATIONALES for r in _rationales(trace))
        key = (doc["model"], doc["controller"])
        overall.add(label, suspended)
        by_model_ctrl[key].add(label, suspended)
        by_class[key + (fault_class(doc),)].add(label, suspended)

    return {
        "schema_version": 1,
        "overall": overall.summary(),
        "by_model_controller": [
            dict(model=m, controller=c, **by_model_ctrl[(m, c)].summary()) for m, c in sorted(by_model_ctrl)
        ],
        "by_fault_class": [
            dict(model=m, controller=c, fault_class=f, **by_class[(m, c, f)].summary())
            for m, c, f in sorted(by_class)
        ],
        "spec_hashes": [h for h, _, _ in rows],
    }


def format_campaign_report(report: dict) -> str:
    lines = [f"{'model':<6}{'controller':<13}{'fault class':<22}{'runs':>6}{'hazard%':>9}"
             f"{'H1%':>8}{'H2%':>8}{'<54%':>8}{'>250%':>8}{'susp':>6}"]
    for r in report["by_fault_class"]:
        lines.append(f"{r['model']:<6}{r['controller']:<13}{r['fault_class']:<22}{r['runs']:>6}"
                     f"{r['hazard_rate']:>9.1f}{r['h1_rate']:>8.1f}{r['h2_rate']:>8.1f}"
                     f"{r['severe_low_rate']:>8.1f}{r['severe_high_rate']:>8.1f}{r['suspension_runs']:>6}")
    o = report["overall"]
    lines.append(f"{'all':<41}{o['runs']:>6}{o['hazard_rate']:>9.1f}{o['h1_rate']:>8.1f}"
                 f"{o['h2_rate']:>8.1f}{o['severe_low_rate']:>8.1f}{o['severe_high_rate']:>8.1f}"
                 f"{o['suspension_runs']:>6}")
    return "\n".join(lines) + "\n"


def format_outcome_table(reports: dict[str, OutcomeReport]) -> str:
    """Metrics as rows, one column per label, cells as mean +/- sd."""
    labels = list(reports)
    width = max(14, *(len(k) + 2 for k in labels))
    lines = [f"{'metric':<24}" + "".join(f"{k:>{width}}" for k in labels)]
    for m in METRICS:
        cells = "".join(f"{reports[k].mean[m]:>{width - 7}.2f}±{reports[k].sd[m]:<6.2f}" for k in labels)
        lines.append(f"{METRIC_LABELS[m]:<24}" + cells)
    return "\n".join(lines) + "\n"


def report_json(report: dict) -> str:
    def clean(x):
        if isinstance(x, float) and not math.isfinite(x):
            return None
        return x
    return json.dumps(report, sort_keys=True, indent=2, default=clean) + "\n"
