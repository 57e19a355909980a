"""Artifact emission: deterministic CSV, JSON manifests with checksums."""

from __future__ import annotations

import csv
import hashlib
import json
from pathlib import Path

__all__ = ["fmt_cell", "sha256_file", "write_manifest", "write_rows_csv", "write_rows_json"]


def fmt_cell(x) -> str:
    """repr-exact floats so identical results serialize to identical bytes."""
    if x is None:
        return ""
    if isinstance(x, float):
        return repr(x)
    return str(x)


def write_rows_csv(path, columns: list[str], rows: list[dict]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(columns)
        for row in rows:
            writer.writerow([fmt_cell(row.get(col)) for col in columns])


def write_rows_json(path, columns: list[str], rows: list[dict]) -> None:
    payload = [{col: row.get(col) for col in columns} for row in rows]
    Path(path).write_text(json.dumps(payload, indent=2) + "\n")


def sha256_file(path) -> str:
    h = hashlib.sha256()
    h.update(Path(path).read_bytes())
    return h.hexdigest()


def write_manifest(path, *, config_echo, seed, version, files: dict, checks=None, timings=None) -> None:
    """Record what a run produced. ``timings`` is wall-clock and therefore the
    one section that varies between otherwise identical runs."""
    payload = {
        "version": version,
        "seed": seed,
        "config": config_echo,
        "files": files,
        "checks": checks if checks is not None else [],
        "timings_s": timings if timings is not None else {},
    }
    Path(path).write_text(json.dumps(payload, indent=2) + "\n")
