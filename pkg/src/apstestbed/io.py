"""Persistence: JSON profiles/configs validated against versioned schemas, CSV traces.

Trace CSVs start with one ``# spec {...}`` comment line holding the resolved
experiment (canonical JSON), then the header row, then one row per control
step with floats written to 6 significant digits.
"""

from __future__ import annotations

import csv
import io as _io
import json
import os
from functools import lru_cache
from pathlib import Path

import jsonschema

from .errors import ConfigError
from .experiment import Profile, canonical_json, profile_from_dict, profile_to_dict

SPEC_PREFIX = "# spec "
DATA_DIRS = ("experiments", "profiles", "campaigns", "fitspecs")


def data_path(*parts: str) -> Path:
    return Path(__file__).parent.joinpath("data", *parts)


def find_input(path, base_dir=None, dirs=DATA_DIRS) -> Path:
    """Locate an input file: as given, relative to ``base_dir``, or in bundled ``dirs``."""
    p = Path(path)
    candidates = [p]
    if base_dir is not None and not p.is_absolute():
        candidates.append(Path(base_dir) / p)
    if not p.is_absolute():
        candidates += [data_path(d, p.name) for d in dirs]
    for c in candidates:
        if c.is_file():
            return c
    raise FileNotFoundError(f"no such file: {path}")


@lru_cache(maxsize=None)
def schema(kind: str) -> dict:
    return json.loads(data_path("schemas", f"{kind}.schema.json").read_text())


def validate(doc, kind: str):
    """Raise ConfigError naming the JSON path of the first schema violation."""
    validator = jsonschema.Draft202012Validator(schema(kind))
    errors = sorted(validator.iter_errors(doc), key=lambda e: (len(e.absolute_path), list(map(str, e.absolute_path))))
    if errors:
        err = errors[0]
        path = "$" + "".join(f"[{p}]" if isinstance(p, int) else f".{p}" for p in err.absolute_path)
        raise ConfigError(err.message, path=path)


def read_json(path) -> dict:
    text = Path(path).read_text()
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc.msg})", path=f"line {exc.lineno}") from exc


def dump_json(doc) -> str:
    return json.dumps(doc, sort_keys=True, indent=2) + "\n"


def atomic_write(path, text: str):
    """Write via a temporary sibling and rename, so readers never see partial files."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(f".{path.name}.{os.getpid()}.tmp")
    with open(tmp, "w", newline="") as fh:
        fh.write(text)
    os.replace(tmp, path)


def write_json(path, doc):
    atomic_write(path, dump_json(doc))


# -- profiles -----------------------------------------------------------------

def load_profile(path, base_dir=None) -> Profile:
    doc = read_json(find_input(path, base_dir, ("profiles",)))
    validate(doc, "profile")
    return profile_from_dict(doc)


def save_profile(profile: Profile, path):
    write_json(path, profile_to_dict(profile))


# -- experiments ----------------------------------------------------------------

def load_experiment_doc(path) -> tuple[dict, Path]:
    p = find_input(path, dirs=("experiments", "campaigns"))
    doc = read_json(p)
    validate(doc, "experiment")
    return doc, p.parent


def load_experiment(path):
    from .experiment import spec_from_dict

    doc, base = load_experiment_doc(path)
    if "campaign" in doc:
        raise ConfigError("this is a campaign file; use the campaign command", path="$.campaign")
    return spec_from_dict(doc, base_dir=base)


# -- traces ---------------------------------------------------------------------

def _fmt(v) -> str:
    if isinstance(v, bool):
        return "1" if v else "0"
    if isinstance(v, float):
        return format(v, ".6g")
    return str(v)


def trace_csv(trace, spec_doc: dict | None = None) -> str:
    from .engine import TRACE_COLUMNS

    buf = _io.StringIO()
    if spec_doc is not None:
        buf.write(SPEC_PREFIX + canonical_json(spec_doc) + "\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(TRACE_COLUMNS)
    for rec in trace:
        w.writerow([_fmt(v) for v in rec.row()])
    return buf.getvalue()


def write_trace(path, trace, spec_doc: dict | None = None):
    atomic_write(path, trace_csv(trace, spec_doc))


def trace_json(trace, spec_doc: dict | None = None) -> str:
    from .engine import TRACE_COLUMNS

    cols = {c: [] for c in TRACE_COLUMNS}
    for rec in trace:
        for c, v in zip(TRACE_COLUMNS, rec.row()):
            cols[c].append(v)
    return dump_json({"schema_version": 1, "spec": spec_doc, "columns": cols})


def parse_trace(text: str):
    """Parse CSV text into ``(records, spec_doc)``; spec_doc is None without a spec line."""
    from .engine import TRACE_COLUMNS, TraceRecord

    lines = text.splitlines()
    spec_doc = None
    if lines and lines[0].startswith(SPEC_PREFIX):
        spec_doc = json.loads(lines[0][len(SPEC_PREFIX):])
        lines = lines[1:]
    rows = list(csv.reader(lines))
    if not rows or tuple(rows[0]) != TRACE_COLUMNS:
        raise ConfigError(f"trace header must be {','.join(TRACE_COLUMNS)}", path="header")
    records = []
    for i, r in enumerate(rows[1:], start=1):
        if len(r) != len(TRACE_COLUMNS):
            raise ConfigError(f"row {i} has {len(r)} fields", path=f"row {i}")
        try:
            records.append(TraceRecord(
                t=float(r[0]), bg_true=float(r[1]), cgm=float(r[2]), basal_cmd=float(r[3]),
                bolus_cmd=float(r[4]), delivered=float(r[5]), iob=float(r[6]), cho=float(r[7]),
                fault_active=r[8] in ("1", "True", "true"), rationale=r[9],
            ))
        except ValueError as exc:
            raise ConfigError(f"row {i}: {exc}", path=f"row {i}") from exc
    return records, spec_doc


def read_trace(path):
    return parse_trace(Path(path).read_text())
