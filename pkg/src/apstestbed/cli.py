"""Command-line interface: ``apstestbed {simulate,replay,fit,campaign,cohort}``.

Exit codes: 0 success, 2 configuration error, 3 runtime abort (NaN state,
unidentifiable fit), 4 I/O error. Inputs are validated before anything is
written, so a failed command leaves no partial outputs.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import io
from .errors import ConfigError, SimulationAborted, TestbedError, Unidentifiable

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_RUNTIME = 3
EXIT_IO = 4
OUT_ENV = "APSTESTBED_OUT"


def default_out() -> str:
    return os.environ.get(OUT_ENV, "out")


def _stem(path) -> str:
    name = Path(path).name
    return name[:-5] if name.endswith(".json") else Path(path).stem


def _emit(doc):
    sys.stdout.write(io.dump_json(doc))


# -- simulate -------------------------------------------------------------------

def cmd_simulate(args) -> int:
    from .analytics import compute_outcomes, hazard_label
    from .engine import run_closed_loop

    spec = io.load_experiment(args.experiment)
    if args.seed is not None:
        spec = replace(spec, seed=args.seed)
    trace = run_closed_loop(spec)
    doc = spec.to_dict()
    h = spec.spec_hash()
    report = compute_outcomes(trace)
    label = hazard_label(trace)
    outcome = {
        "schema_version": 1, "spec_hash": h, "spec": doc,
        "outcomes": report.to_dict()["per_patient"][0],
        "hazard": {"h1": label.h1, "h2": label.h2, "severe_low": label.severe_low,
                   "severe_high": label.severe_high},
    }
    stem = spec.name or _stem(args.experiment)
    out = Path(args.out)
    if args.format == "json":
        io.atomic_write(out / f"{stem}.trace.json", io.trace_json(trace, doc))
    else:
        io.write_trace(out / f"{stem}.trace.csv", trace, doc)
    io.write_json(out / f"{stem}.outcomes.json", outcome)
    _emit({"spec_hash": h, "steps": len(trace), "pct_in_range": report.mean["pct_in_range"]})
    return EXIT_OK


# -- replay ---------------------------------------------------------------------

def _profile_and_overrides(path):
    """A profile file, or an experiment file (profile, controller, config)."""
    doc = io.read_json(io.find_input(path))
    if "params" in doc:
        io.validate(doc, "profile")
        from .experiment import profile_from_dict
        return profile_from_dict(doc), None, {}
    spec = io.load_experiment(path)
    return spec.profile, spec.controller, dict(spec.controller_config)


def cmd_replay(args) -> int:
    from .analytics import compute_mse
    from .controllers import controller_config_for
    from .engine import replay_bg, replay_insulin
    from .experiment import model_of, spec_hash

    records, spec_doc = io.read_trace(args.trace)
    if len(records) < 2:
        raise ConfigError("trace needs at least two rows", path="trace")
    t = np.array([r.t for r in records])
    cadence = float(t[1] - t[0])
    if not np.all(np.diff(t) == cadence):
        raise ConfigError("trace cadence is not uniform", path="t_min")
    profile, kind, overrides = _profile_and_overrides(args.profile)
    meals = [(r.t - t[0], r.cho) for r in records if r.cho > 0]
    if args.mode == "insulin":
        insulin = np.array([r.delivered for r in records])
        ref = np.array([r.bg_true for r in records])
        out = replay_insulin(model_of(profile), profile, insulin, meals, initial_bg=float(ref[0]),
                             cadence=cadence)
        cols = ("t_min", "bg_ref", "bg_replay")
    else:
        kind = args.controller or kind or "basal_bolus"
        config = controller_config_for(profile, **overrides)
        bg = np.array([r.cgm for r in records])
        out = replay_bg(kind, config, bg, meals, announced=kind == "basal_bolus" or args.announced,
                        cadence=cadence)
        ref = np.array([r.basal_cmd / 60.0 + r.bolus_cmd / cadence for r in records])
        cols = ("t_min", "insulin_ref_Umin", "insulin_replay_Umin")
    mse = compute_mse(ref, out)
    lines = [",".join(cols)] + [f"{a:.6g},{b:.6g},{c:.6g}" for a, b, c in zip(t, ref, out)]
    target = Path(args.out) if args.out else Path(default_out()) / f"{_stem(args.trace)}.replay-{args.mode}.csv"
    io.atomic_write(target, "\n".join(lines) + "\n")
    _emit({"mode": args.mode, "mse": mse, "samples": len(records), "output": str(target),
           "source_spec_hash": None if spec_doc is None else spec_hash(spec_doc)})
    return EXIT_OK


# -- fit ------------------------------------------------------------------------

def cmd_fit(args) -> int:
    from .sysid import FitData, FitSpec, fit_profile

    doc = io.read_json(io.find_input(args.fitspec))
    io.validate(doc, "fitspec")
    try:
        spec = FitSpec.from_dict(doc)
    except TypeError as exc:
        raise ConfigError(str(exc), path="$") from exc
    records, _ = io.read_trace(args.trace)
    data = FitData.from_records(records, meals_known=spec.meals_known)
    result = fit_profile(spec, data, name=_stem(args.out_profile))
    io.save_profile(result.profile, args.out_profile)
    _emit({"train_mse": result.train_mse, "eval_mse": result.eval_mse, "isf": result.isf,
           "tdd": result.tdd, "coefficients": result.coefficients, "profile": str(args.out_profile)})
    return EXIT_OK


# -- campaign -------------------------------------------------------------------

def cmd_campaign(args) -> int:
    from . import campaign

    doc, base = io.load_experiment_doc(args.campaign)
    if args.seed is not None:
        doc = dict(doc, seed=args.seed)
    grid = campaign.grid_from_doc(doc, base_dir=base)
    specs = campaign.expand_campaign(grid)
    out = Path(args.out)
    report = campaign.run_campaign(specs, out, args.parallelism)
    summary = {"runs": len(specs), "hazard_rate": report["overall"]["hazard_rate"]}
    if args.with_clean:
        clean = campaign.run_campaign([s.without_faults() for s in specs], out, args.parallelism,
                                      report_name="report-clean")
        summary["clean_hazard_rate"] = clean["overall"]["hazard_rate"]
    sys.stdout.write((out / "report.txt").read_text())
    _emit(summary)
    return EXIT_OK


# -- cohort ---------------------------------------------------------------------

def cmd_cohort(args) -> int:
    from .experiment import cohort

    if args.n < 1:
        raise ConfigError("n must be at least 1", path="n")
    members = cohort(args.model, args.n, args.seed)
    out = Path(args.out)
    for p in members:
        io.save_profile(p, out / f"{p.name}.json")
    _emit({"model": args.model, "n": args.n, "seed": args.seed, "profiles": [p.name for p in members]})
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="apstestbed", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="run one closed-loop experiment")
    p.add_argument("experiment")
    p.add_argument("--out", default=default_out())
    p.add_argument("--seed", type=int)
    p.add_argument("--format", choices=("csv", "json"), default="csv")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("replay", help="open-loop replay of a recorded trace")
    p.add_argument("mode", choices=("insulin", "bg"))
    p.add_argument("trace")
    p.add_argument("profile", help="profile file, or experiment file for controller settings")
    p.add_argument("--controller", choices=("basal_bolus", "openaps", "fixed_basal"))
    p.add_argument("--announced", action="store_true", help="announce meals to the OpenAPS controller")
    p.add_argument("--out")
    p.set_defaults(func=cmd_replay)

    p = sub.add_parser("fit", help="least-squares profile fit from a trace")
    p.add_argument("trace")
    p.add_argument("fitspec")
    p.add_argument("out_profile")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("campaign", help="run (or resume) a fault campaign")
    p.add_argument("campaign")
    p.add_argument("--out", default=default_out())
    p.add_argument("--parallelism", type=int, default=1)
    p.add_argument("--seed", type=int)
    p.add_argument("--with-clean", action="store_true", help="also run the matched no-fault campaign")
    p.set_defaults(func=cmd_campaign)

    p = sub.add_parser("cohort", help="write a sampled virtual-patient cohort")
    p.add_argument("--n", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--model", choices=("mvp", "uva"), default="mvp")
    p.add_argument("--out", default=default_out())
    p.set_defaults(func=cmd_cohort)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (SimulationAborted, Unidentifiable) as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO
    except TestbedError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except (ValueError, TypeError, KeyError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
