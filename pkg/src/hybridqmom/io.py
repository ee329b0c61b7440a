"""CSV/JSON persistence with schema checks and atomic writes.

Time series go to CSV with ``%.17g`` values, which round-trip every double
exactly and never depend on the process locale.  Structured data goes to
JSON with sorted keys so that identical inputs give identical bytes.
"""

from __future__ import annotations

import csv
import datetime as _dt
import hashlib
import io as _io
import json
import os
import tempfile
from dataclasses import dataclass, field

import numpy as np

from .errors import MissingInputError, SchemaError
from .forcing import ForcingSignal

SCHEMA_VERSION = 1
TRAJECTORY_COLUMNS = ("t", "mu10", "mu01", "mu20", "mu11", "mu02", "mu30", "mu21", "mu32", "mu_pbw", "cp")


def _tool_version():
    try:
        from importlib.metadata import version

        return version("artifact")
    except Exception:  # pragma: no cover - only when not installed
        return "0+unknown"


# -- atomic writes -----------------------------------------------------------


def atomic_write_text(path, text):
    path = os.fspath(path)
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def dumps_json(obj):
    return json.dumps(obj, indent=2, sort_keys=True, allow_nan=False) + "\n"


def write_json(path, obj):
    atomic_write_text(path, dumps_json(obj))


def read_json(path):
    path = os.fspath(path)
    if not os.path.exists(path):
        raise MissingInputError(f"input not found: {path}")
    try:
        with open(path) as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise SchemaError(f"{path}: malformed JSON at line {exc.lineno}, column {exc.colno}: {exc.msg}") from exc


def sha256_file(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def require_dir(path):
    path = os.fspath(path)
    if not os.path.isdir(path):
        raise MissingInputError(f"input directory not found: {path}")
    return path


# -- time series CSV -----------------------------------------------------------


def format_float(v):
    return "%.17g" % v


def write_series_csv(path, columns, table):
    """Write ``table`` (``(n, len(columns))``) under a fixed header."""
    table = np.asarray(table, dtype=float)
    if table.ndim != 2 or table.shape[1] != len(columns):
        raise SchemaError(f"table has shape {table.shape}, expected (n, {len(columns)})")
    buf = _io.StringIO()
    buf.write(",".join(columns) + "\n")
    for row in table:
        buf.write(",".join(format_float(v) for v in row) + "\n")
    atomic_write_text(path, buf.getvalue())


def read_series_csv(path, columns):
    """Read a CSV written by ``write_series_csv``; the header must match exactly."""
    path = os.fspath(path)
    if not os.path.exists(path):
        raise MissingInputError(f"input not found: {path}")
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise SchemaError(f"{path}: empty file") from None
        if tuple(header) != tuple(columns):
            raise SchemaError(f"{path}: header {header} does not match expected {list(columns)}")
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if len(row) != len(columns):
                raise SchemaError(f"{path}, row {lineno}: {len(row)} fields, expected {len(columns)}")
            vals = []
            for col, text in zip(columns, row):
                try:
                    vals.append(float(text))
                except ValueError:
                    raise SchemaError(f"{path}, row {lineno}, column {col!r}: not a number: {text!r}") from None
            rows.append(vals)
    return np.array(rows, dtype=float).reshape(len(rows), len(columns))


def write_trajectory(path, times, moments, targets, cp):
    table = np.column_stack([times, moments, targets, cp])
    write_series_csv(path, TRAJECTORY_COLUMNS, table)


def read_trajectory(path):
    """Return ``(times, moments (nt,5), targets (nt,4), cp)``."""
    table = read_series_csv(path, TRAJECTORY_COLUMNS)
    return table[:, 0], table[:, 1:6], table[:, 6:10], table[:, 10]


def write_record(path, rec):
    write_trajectory(path, rec.times, rec.moments, rec.target_moments, rec.cp)


def read_record(path, provenance=None):
    """Rebuild a ``TrajectoryRecord``; rates are recomputed from the moments."""
    from .ensemble import TrajectoryRecord, moment_rates_from_series

    times, moments, targets, cp = read_trajectory(path)
    if len(times) < 5:
        raise SchemaError(f"{path}: need at least 5 rows, found {len(times)}")
    return TrajectoryRecord(
        times=times,
        moments=moments,
        moment_rates=moment_rates_from_series(moments, float(times[1] - times[0])),
        target_moments=targets,
        cp=cp,
        provenance=dict(provenance or {}),
    )


# -- forcings ------------------------------------------------------------------


def write_forcings(path, signals):
    write_json(path, [s.to_dict() for s in signals])


def read_forcings(path):
    doc = read_json(path)
    if not isinstance(doc, list):
        raise SchemaError(f"{path}: expected a JSON array of forcing signals")
    out = []
    for k, entry in enumerate(doc):
        try:
            out.append(ForcingSignal.from_dict(entry))
        except (AttributeError, KeyError, TypeError, ValueError) as exc:
            raise SchemaError(f"{path}, entry {k}: {exc}") from exc
    return out


def manifest_path(path):
    """Sidecar manifest next to a single-file artifact."""
    root, _ = os.path.splitext(os.fspath(path))
    return root + ".manifest.json"


# -- run manifests -------------------------------------------------------------


def _now():
    return _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")


@dataclass
class RunManifest:
    """Provenance of one pipeline step.

    Timestamps are the only non-deterministic fields; ``to_dict(False)``
    omits them for artifacts that must be byte-reproducible.
    """

    command: str
    config: dict = field(default_factory=dict)
    seeds: dict = field(default_factory=dict)
    inputs: dict = field(default_factory=dict)
    outputs: list = field(default_factory=list)
    extra: dict = field(default_factory=dict)
    tool_version: str = field(default_factory=_tool_version)
    started: str = field(default_factory=_now)
    finished: str | None = None

    def add_input(self, path, name=None, skip_manifests=False):
        """Record the sha256 of a file, or of every file in a directory."""
        path = os.fspath(path)
        key = name or os.path.basename(os.path.normpath(path))
        if os.path.isdir(path):
            digests = {
                f: sha256_file(os.path.join(path, f))
                for f in sorted(os.listdir(path))
                if os.path.isfile(os.path.join(path, f))
                and not f.startswith(".tmp-")
                and not (skip_manifests and f.endswith("manifest.json"))
            }
            self.inputs[key] = digests
        else:
            self.inputs[key] = sha256_file(path)

    def to_dict(self, timestamps=True):
        d = {
            "schema_version": SCHEMA_VERSION,
            "tool_version": self.tool_version,
            "command": self.command,
            "config": self.config,
            "seeds": self.seeds,
            "inputs": self.inputs,
            "outputs": sorted(self.outputs),
        }
        d.update(self.extra)
        if timestamps:
            d["started"] = self.started
            d["finished"] = self.finished or _now()
        return d

    def write(self, path, timestamps=True):
        write_json(path, self.to_dict(timestamps))


def check_schema_version(doc, path):
    v = doc.get("schema_version") if isinstance(doc, dict) else None
    if v != SCHEMA_VERSION:
        raise SchemaError(f"{path}: unsupported schema_version {v!r} (expected {SCHEMA_VERSION})")
