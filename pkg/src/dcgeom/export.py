"""
CSV artifacts and the run manifest.

Every CSV is UTF-8 with a header row. The manifest records, for each file,
its column names and row count so that :func:`check_manifest` can confirm the
outputs on disk still match.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__

MANIFEST = "manifest.json"


def _fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return str(int(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    x = float(x)
    return "nan" if math.isnan(x) else repr(x)


def write_csv(path, columns, rows) -> dict:
    """Write rows under a header; returns the manifest record for the file."""
    path = Path(path)
    rows = np.asarray(rows, dtype=object) if not isinstance(rows, np.ndarray) else rows
    if rows.ndim == 1:
        rows = rows[None, :] if len(rows) else rows.reshape(0, len(columns))
    if rows.shape[1] != len(columns):
        raise ValueError(f"{path.name}: {rows.shape[1]} values per row for {len(columns)} columns")
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([_fmt(v) for v in r])
    return {"path": path.name, "columns": list(columns), "rows": int(rows.shape[0])}


def write_json(path, obj) -> dict:
    path = Path(path)
    path.write_text(json.dumps(jsonable(obj), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return {"path": path.name, "columns": None, "rows": None}


def jsonable(obj):
    """Plain-JSON copy: numpy scalars and arrays unwrapped, NaN and inf as None."""
    if isinstance(obj, dict):
        return {str(k): jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return jsonable(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        return x if math.isfinite(x) else None
    return obj


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


@dataclass
class RunManifest:
    command: str
    config_sha256: str
    seed: int
    config: dict
    started: str = field(default_factory=_now)
    finished: str | None = None
    status: str = "ok"
    message: str = ""
    files: list = field(default_factory=list)
    metrics: dict = field(default_factory=dict)

    def add(self, record: dict):
        self.files.append(record)

    def to_dict(self) -> dict:
        return {
            "tool": "dcgeom", "version": __version__, "command": self.command,
            "config_sha256": self.config_sha256, "seed": self.seed,
            "started": self.started, "finished": self.finished,
            "status": self.status, "message": self.message,
            "files": self.files, "metrics": self.metrics, "config": self.config,
        }

    def write(self, out_dir) -> Path:
        self.finished = _now()
        path = Path(out_dir) / MANIFEST
        path.write_text(json.dumps(jsonable(self.to_dict()), indent=2, sort_keys=True) + "\n",
                        encoding="utf-8")
        return path


def read_csv(path):
    """Header and float rows of a CSV written by :func:`write_csv`."""
    with Path(path).open(newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    return rows[0], np.array([[float(v) for v in r] for r in rows[1:]], dtype=float)


def check_manifest(out_dir) -> list[str]:
    """Problems found when comparing the manifest's file list with the disk."""
    out_dir = Path(out_dir)
    man = json.loads((out_dir / MANIFEST).read_text(encoding="utf-8"))
    problems = []
    for rec in man["files"]:
        p = out_dir / rec["path"]
        if not p.exists():
            problems.append(f"{rec['path']}: missing")
            continue
        if rec["columns"] is None:
            continue
        header, data = read_csv(p)
        if header != rec["columns"]:
            problems.append(f"{rec['path']}: header {header} != {rec['columns']}")
        if len(data) != rec["rows"]:
            problems.append(f"{rec['path']}: {len(data)} rows, manifest says {rec['rows']}")
        if len(data) and data.shape[1] != len(header):
            problems.append(f"{rec['path']}: ragged rows")
    return problems
