"""Result persistence: append-only CSV with a schema header, plus a JSON
run manifest recording the config and outputs for reproducibility."""

from __future__ import annotations

import csv
import hashlib
import json
import os
import time
from dataclasses import asdict, dataclass
from typing import Optional

SCHEMA_LINE = "# wsmesh-results v1"

COLUMNS = [
    "method",
    "d",
    "L",
    "n_train",
    "n_test",
    "k_or_degree",
    "mean",
    "std_error",
    "mesh_u0",
    "wall_time_s",
    "seed",
    "artifact_version",
]


@dataclass(frozen=True)
class ResultRow:
    method: str
    d: int
    L: int
    n_train: Optional[int]
    n_test: Optional[int]
    k_or_degree: Optional[int]
    mean: float
    std_error: float
    mesh_u0: Optional[float]
    wall_time_s: float
    seed: Optional[int]
    artifact_version: str

    def as_record(self) -> dict:
        rec = asdict(self)
        for key, val in rec.items():
            if val is None:
                rec[key] = ""
        return rec


def config_digest(config_dict: dict) -> str:
    """Short content hash of a config, recorded with every result row."""
    blob = json.dumps(config_dict, sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()[:10]


class ResultTable:
    """Append-only CSV sink; the header is written once per file."""

    def __init__(self, path):
        self.path = str(path)
        self.rows_written = 0

    def append(self, rows):
        rows = list(rows)
        if not rows:
            return
        new_file = not os.path.exists(self.path) or os.path.getsize(self.path) == 0
        os.makedirs(os.path.dirname(os.path.abspath(self.path)), exist_ok=True)
        with open(self.path, "a", newline="") as fh:
            if new_file:
                fh.write(SCHEMA_LINE + "\n")
            writer = csv.DictWriter(fh, fieldnames=COLUMNS)
            if new_file:
                writer.writeheader()
            for row in rows:
                writer.writerow(row.as_record())
        self.rows_written += len(rows)


def read_result_rows(path) -> list:
    """Read back a results CSV (skipping the schema line) as dicts."""
    with open(path) as fh:
        first = fh.readline()
        if not first.startswith("#"):
            fh.seek(0)
        return list(csv.DictReader(fh))


def write_manifest(path, config_dict: dict, command: str, outputs, rows: int,
                   package_version: str):
    manifest = {
        "schema": "wsmesh-manifest v1",
        "created_utc": time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime()),
        "command": command,
        "config": config_dict,
        "config_digest": config_digest(config_dict),
        "rows_written": rows,
        "outputs": [str(o) for o in outputs],
        "package_version": package_version,
    }
    with open(path, "w") as fh:
        json.dump(manifest, fh, indent=2, default=str)
    return manifest
