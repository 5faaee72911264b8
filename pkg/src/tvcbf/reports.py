"""Structured-text reports and delimited exports for CLI runs."""

from __future__ import annotations

import csv
import json
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


def plain(obj):
    """JSON-safe copy: arrays to lists, non-finite floats to strings."""
    if isinstance(obj, dict):
        return {str(k): plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return plain(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        if math.isnan(v):
            return "nan"
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return v
    if obj is None or isinstance(obj, (int, str)):
        return obj
    if hasattr(obj, "to_dict"):
        return plain(obj.to_dict())
    return repr(obj)


def write_json(path, data) -> Path:
    path = Path(path)
    path.write_text(json.dumps(plain(data), indent=2, sort_keys=False) + "\n")
    return path


def write_rows(path, header, rows) -> Path:
    path = Path(path)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([f"{float(v):.17g}" for v in row])
    return path


def write_violations(path, report, n: int) -> Path:
    header = [*(f"x{i + 1}" for i in range(n)), "b", "sup_db", "margin"]
    return write_rows(path, header, report.violation_rows())


@dataclass
class RunReport:
    """Everything one CLI command produced; ``files`` are relative to the output directory."""

    command: str
    target: str
    out_dir: Path
    passed: bool = True
    sections: dict = field(default_factory=dict)
    checks: dict = field(default_factory=dict)
    files: list = field(default_factory=list)
    timings: dict = field(default_factory=dict)
    error: str | None = None
    started: float = field(default_factory=time.perf_counter)

    def add_file(self, path) -> Path:
        path = Path(path)
        self.files.append(str(path.relative_to(self.out_dir)))
        return path

    def check(self, name: str, ok: bool) -> bool:
        self.checks[name] = bool(ok)
        if not ok:
            self.passed = False
        return bool(ok)

    def to_dict(self) -> dict:
        return {
            "command": self.command,
            "target": self.target,
            "passed": self.passed,
            "error": self.error,
            "checks": self.checks,
            "files": self.files,
            "timings_s": {k: round(v, 3) for k, v in self.timings.items()},
            **self.sections,
        }

    def write(self, name: str = "report.json") -> Path:
        missing = [f for f in self.files if not (self.out_dir / f).exists()]
        if missing:
            raise FileNotFoundError(f"report references missing files: {missing}")
        self.timings["total"] = time.perf_counter() - self.started
        return write_json(self.out_dir / name, self.to_dict())
