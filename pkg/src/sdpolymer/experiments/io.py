"""Table writers/readers and the run manifest.

CSV files start with a ``# run_id=<hex>`` comment line followed by a header
row; JSON files mirror the same rows with the config and summary. The run id
hashes the config, code version and seeds, so it is known before any output
exists; the manifest then records checksums of every written file.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
import platform
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Sequence

from .. import __version__


def _jsonable(x: Any) -> Any:
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if hasattr(x, "tolist"):
        return _jsonable(x.tolist())
    if isinstance(x, float) and not math.isfinite(x):
        return repr(x)
    return x


def write_csv(path: Path, columns: Sequence[str], rows: Sequence[dict], run_id: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        fh.write(f"# run_id={run_id}\n")
        w = csv.DictWriter(fh, fieldnames=list(columns), lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({c: (repr(float(r[c])) if isinstance(r[c], float) else r[c]) for c in columns})


def _convert(s: str) -> Any:
    for kind in (int, float):
        try:
            return kind(s)
        except ValueError:
            pass
    return s


def read_csv(path: Path) -> tuple[str, list[str], list[dict]]:
    """Returns (run_id, columns, rows) with numeric fields converted."""
    with Path(path).open() as fh:
        first = fh.readline()
        if not first.startswith("# run_id="):
            raise ValueError(f"{path}: missing run_id line")
        rd = csv.DictReader(fh)
        rows = [{k: _convert(v) for k, v in row.items()} for row in rd]
        return first.strip().split("=", 1)[1], list(rd.fieldnames or []), rows


def write_json(path: Path, payload: dict) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(_jsonable(payload), indent=2, sort_keys=True) + "\n")


def sha256_file(path: Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


@dataclass
class RunManifest:
    kind: str
    config_hash: str
    master_seed: int
    replica_ids: list[int]
    code_version: str = __version__
    wall_times: dict[str, float] = field(default_factory=dict)
    outputs: dict[str, str] = field(default_factory=dict)
    failures: list[int] = field(default_factory=list)

    @property
    def run_id(self) -> str:
        key = json.dumps([self.kind, self.config_hash, self.code_version, self.master_seed, self.replica_ids])
        return hashlib.sha256(key.encode()).hexdigest()[:16]

    def record(self, path: Path) -> None:
        self.outputs[path.name] = sha256_file(path)

    def write(self, path: Path) -> None:
        write_json(path, {
            "kind": self.kind, "run_id": self.run_id, "config_hash": self.config_hash,
            "code_version": self.code_version, "python": platform.python_version(),
            "master_seed": self.master_seed, "replica_ids": self.replica_ids,
            "wall_times": self.wall_times, "outputs": self.outputs, "failures": self.failures,
        })

    @staticmethod
    def verify(path: Path) -> bool:
        """Whether every listed output still matches its checksum."""
        m = json.loads(Path(path).read_text())
        base = Path(path).parent
        return all(sha256_file(base / name) == digest for name, digest in m["outputs"].items())
