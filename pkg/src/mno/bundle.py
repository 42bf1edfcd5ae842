"""Result bundles: metric records, diagnostic reports, tables and provenance."""
from __future__ import annotations

import csv
import json
import time
from dataclasses import dataclass, field
from pathlib import Path

from . import io
from .metrics import MetricRecord


@dataclass
class DiagnosticReport:
    name: str
    passed: bool
    evidence: dict
    thresholds: dict
    seed: int | None
    runtime_ms: float
    checks: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"name": self.name, "passed": bool(self.passed), "evidence": self.evidence,
                "thresholds": self.thresholds, "seed": self.seed, "runtime_ms": self.runtime_ms,
                "checks": {k: bool(v) for k, v in self.checks.items()}}


@dataclass
class ResultBundle:
    metrics: list[MetricRecord] = field(default_factory=list)
    reports: list[DiagnosticReport] = field(default_factory=list)
    tables: dict[str, list[dict]] = field(default_factory=dict)
    timings: dict = field(default_factory=dict)
    provenance: dict = field(default_factory=dict)

    def add_metric(self, name, value, n_samples, seed, **aux) -> MetricRecord:
        rec = MetricRecord(name, value, n_samples, seed, aux)
        self.metrics.append(rec)
        return rec

    def metric(self, name: str, **aux) -> MetricRecord:
        for rec in self.metrics:
            if rec.name == name and all(rec.aux.get(k) == v for k, v in aux.items()):
                return rec
        raise KeyError(name)

    def content(self) -> dict:
        return {
            "metrics": [m.to_dict() for m in self.metrics],
            "reports": [r.to_dict() for r in self.reports],
            "tables": self.tables,
            "provenance": self.provenance,
        }

    def content_hash(self) -> str:
        """Hash of everything except timings and the timestamp."""
        return io.sha256_bytes(io.dumps(self.content()).encode())

    def to_json(self) -> str:
        doc = self.content()
        doc["timings"] = self.timings
        doc["content_hash"] = self.content_hash()
        doc["timestamp"] = time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime())
        return io.dumps(doc)

    def write(self, out_dir, stem: str = "bundle") -> Path:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        path = out / f"{stem}.json"
        path.write_text(self.to_json() + "\n")
        for name, rows in self.tables.items():
            write_csv(out / f"{stem}_{name}.csv", rows)
        return path


def write_csv(path, rows: list[dict]):
    cols: list[str] = []
    for row in rows:
        cols.extend(k for k in row if k not in cols)
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=cols)
        w.writeheader()
        for row in rows:
            w.writerow({k: (format(v, ".17g") if isinstance(v, float) else v) for k, v in row.items()})


def read_bundle(path) -> dict:
    return json.loads(Path(path).read_text())
