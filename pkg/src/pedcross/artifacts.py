"""File formats written by the command-line tools, and their validation.

Every run directory holds a ``manifest.json`` with the fully resolved
configuration. CSV artifacts are identified by file name; each has a fixed
header. Numbers are written with ``repr`` so they round-trip exactly.
"""
from __future__ import annotations

import csv
import json
import math
from pathlib import Path
from typing import Iterable, Sequence

import jsonschema

from . import __version__
from .evaluation import AcceptanceCell, CitCdf, TrialRecord, TtaStats
from .fitting import HUMAN_COLUMNS, FitResult, VariantRow
from .qnet import read_header
from .trainer import LOG_COLUMNS

SCHEMA_VERSION = 1

CSV_SCHEMAS: dict[str, tuple[str, ...]] = {
    "trials.csv": ("model", "scenario_id", "v0", "tau0", "sigma_v", "cit", "accepted", "collided",
                   "source", "participant_id"),
    "acceptance.csv": ("model", "sigma_v", "scenario_id", "v0", "tau0", "n", "accepted", "rate", "lo", "hi"),
    "cit_cdf.csv": ("model", "sigma_v", "scenario_id", "t", "p", "n_finite", "n_truncated"),
    "tta_dispersion.csv": ("sigma_v", "scenario_id", "v0", "tau0", "mean", "sd", "median", "p5", "p95",
                           "n", "n_undefined"),
    "fits.csv": ("participant_id", "variant", "best_sigma", "loglik"),
    "fit_logliks.csv": ("participant_id", "variant", "sigma_v", "loglik"),
    "variants.csv": ("variant", "k", "loglik", "aic", "best"),
    "bank.csv": ("sigma_v", "scenario_id", "cit_s"),
    "dataset.csv": HUMAN_COLUMNS,
}
TRAIN_LOG_PREFIX = "train_log"

MANIFEST_SCHEMA = {
    "type": "object",
    "required": ["schema_version", "package_version", "command", "seed", "config", "outputs"],
    "properties": {
        "schema_version": {"const": SCHEMA_VERSION},
        "command": {"enum": ["train", "eval", "fit", "synth"]},
        "seed": {"type": "integer"},
        "config": {"type": "object"},
        "outputs": {"type": "array", "items": {"type": "string"}},
    },
}
VARIANTS_SCHEMA = {
    "type": "object",
    "required": ["schema_version", "variants"],
    "properties": {
        "schema_version": {"const": SCHEMA_VERSION},
        "variants": {"type": "array", "items": {
            "type": "object",
            "required": ["variant", "k", "loglik", "aic", "best"],
            "properties": {"variant": {"enum": ["LMD", "LMP", "LSP"]}, "k": {"type": "integer", "minimum": 0},
                           "loglik": {"type": "number"}, "aic": {"type": "number"},
                           "best": {"type": "boolean"}}}},
    },
}
PLOT_DATA_SCHEMA = {
    "type": "object",
    "required": ["schema_version", "gap_acceptance", "cit_cdf", "tta_dispersion"],
    "properties": {
        "schema_version": {"const": SCHEMA_VERSION},
        "gap_acceptance": {"type": "array"},
        "cit_cdf": {"type": "array"},
        "tta_dispersion": {"type": "array"},
    },
}
JSON_SCHEMAS = {"manifest.json": MANIFEST_SCHEMA, "variants.json": VARIANTS_SCHEMA,
                "plot_data.json": PLOT_DATA_SCHEMA}


def _num(x) -> str:
    if x is None:
        return ""
    if isinstance(x, bool):
        return str(int(x))
    if isinstance(x, float):
        return "" if math.isnan(x) else repr(x)
    return str(x)


def write_rows(path: str | Path, columns: Sequence[str], rows: Iterable[Sequence]) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            if len(r) != len(columns):
                raise ValueError(f"{path}: row has {len(r)} fields, expected {len(columns)}")
            w.writerow([_num(v) for v in r])


def dump_json(obj, path: str | Path) -> None:
    with open(path, "w") as f:
        json.dump(obj, f, indent=1, sort_keys=True, allow_nan=False)
        f.write("\n")


def write_manifest(run_dir: Path, command: str, seed: int, config: dict, outputs: Sequence[str]) -> None:
    dump_json({"schema_version": SCHEMA_VERSION, "package_version": __version__, "command": command,
               "seed": seed, "config": config, "outputs": sorted(outputs)}, run_dir / "manifest.json")


# --- evaluation outputs ----------------------------------------------------------

def trial_rows(model: str, records: Iterable[TrialRecord]):
    for r in records:
        yield (model, r.scenario_id, float(r.v0), float(r.tau0), float(r.sigma_v), float(r.cit),
               r.accepted, r.collided, r.source, r.participant_id)


def acceptance_rows(model: str, sigma_v: float, cells: Iterable[AcceptanceCell]):
    for c in cells:
        yield (model, float(sigma_v), c.scenario_id, c.v0, c.tau0, c.n, c.accepted, c.rate, c.lo, c.hi)


def cdf_rows(model: str, sigma_v: float, scenario_id: int, cdf: CitCdf):
    for t, p in cdf.points:
        yield (model, float(sigma_v), scenario_id, t, p, cdf.n_finite, cdf.n_truncated)


def tta_row(sigma_v: float, scenario_id: int, v0: float, tau0: float, st: TtaStats):
    return (float(sigma_v), scenario_id, v0, tau0, st.mean, st.sd, st.median, st.p5, st.p95, st.n, st.n_undefined)


def fit_rows(fits: Iterable[FitResult]):
    for f in fits:
        yield (f.participant_id if f.participant_id is not None else "*", f.variant, f.best_sigma, f.loglik)


def fit_loglik_rows(fits: Iterable[FitResult]):
    for f in fits:
        for s, ll in zip(f.grid, f.logliks):
            yield (f.participant_id if f.participant_id is not None else "*", f.variant, s, ll)


def variants_json(rows: Sequence[VariantRow]) -> dict:
    return {"schema_version": SCHEMA_VERSION,
            "variants": [{"variant": r.variant, "k": r.k, "loglik": r.loglik, "aic": r.aic, "best": r.best}
                         for r in rows]}


# --- validation ------------------------------------------------------------------

def _check_csv(path: Path, columns: Sequence[str]) -> list[str]:
    errors = []
    with open(path, newline="") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if header is None or tuple(header) != tuple(columns):
            return [f"{path}: header {header} != {list(columns)}"]
        for lineno, row in enumerate(reader, start=2):
            if len(row) != len(columns):
                errors.append(f"{path}:{lineno}: {len(row)} fields, expected {len(columns)}")
    return errors


def validate_file(path: str | Path) -> list[str]:
    """Problems found in one artifact; an empty list means it conforms.

    Files whose names are not recognised are reported as unknown.
    """
    path = Path(path)
    name = path.name
    try:
        if name in CSV_SCHEMAS:
            return _check_csv(path, CSV_SCHEMAS[name])
        if name.startswith(TRAIN_LOG_PREFIX) and name.endswith(".csv"):
            return _check_csv(path, LOG_COLUMNS)
        if name.startswith("bank_") and name.endswith(".csv"):
            return _check_csv(path, CSV_SCHEMAS["bank.csv"])
        if name in JSON_SCHEMAS:
            with open(path) as f:
                jsonschema.validate(json.load(f), JSON_SCHEMAS[name])
            return []
        if name.endswith(".qnet.zip"):
            read_header(path)
            return []
    except (jsonschema.ValidationError, ValueError, KeyError, OSError) as e:
        msg = e.message if isinstance(e, jsonschema.ValidationError) else str(e)
        return [f"{path}: {msg}"]
    return [f"{path}: unknown artifact type"]


def validate_tree(root: str | Path) -> tuple[int, list[str]]:
    """Validate every artifact under ``root``; returns (files checked, problems)."""
    root = Path(root)
    files = [root] if root.is_file() else sorted(p for p in root.rglob("*") if p.is_file())
    errors: list[str] = []
    for p in files:
        errors.extend(validate_file(p))
    return len(files), errors
