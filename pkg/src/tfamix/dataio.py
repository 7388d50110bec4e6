"""File ingestion and result persistence.

CSV is the only data format and JSON the only model format. Every write
goes through a temp-file-plus-rename so partial outputs never appear,
and each command drops a manifest recording its inputs (with content
hashes), outputs, and per-phase timings.
"""

from __future__ import annotations

import csv
import hashlib
import json
import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .ecm import FitResult
from .model import Dataset


__all__ = [
    "ParseError",
    "read_csv",
    "write_dataset_csv",
    "write_assignments_csv",
    "read_assignments_csv",
    "atomic_write_text",
    "sha256_file",
    "RunManifest",
]

LABEL_COLUMN = "label"


class ParseError(ValueError):
    """CSV contents could not be interpreted; names the row and column."""


def read_csv(path, label_column: Optional[str] = "auto") -> Dataset:
    """Read a dataset CSV (header row, one observation per row).

    ``label_column="auto"`` treats a column literally named ``label`` as
    ground-truth labels when present; pass a name to force a column, or
    ``None`` to read every column as a feature.
    """
    path = Path(path)
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        rows = [row for row in reader if row]
    if not rows:
        raise ParseError(f"{path}: file is empty")
    header = [c.strip() for c in rows[0]]
    if label_column == "auto":
        label_column = LABEL_COLUMN if LABEL_COLUMN in header else None
    label_idx = None
    if label_column is not None:
        if label_column not in header:
            raise ParseError(f"{path}: no column named {label_column!r}")
        label_idx = header.index(label_column)
    feature_idx = [j for j in range(len(header)) if j != label_idx]
    if not feature_idx:
        raise ParseError(f"{path}: no feature columns")
    if len(rows) < 3:
        raise ParseError(f"{path}: need at least 2 data rows")

    n = len(rows) - 1
    y = np.empty((n, len(feature_idx)))
    labels = np.empty(n, dtype=int) if label_idx is not None else None
    for i, row in enumerate(rows[1:], start=2):
        if len(row) != len(header):
            raise ParseError(
                f"{path}: row {i} has {len(row)} cells, expected {len(header)}"
            )
        for jj, j in enumerate(feature_idx):
            cell = row[j].strip()
            try:
                value = float(cell)
            except ValueError:
                value = float("nan")
            if not np.isfinite(value):
                raise ParseError(
                    f"{path}: row {i}, column {header[j]!r}: "
                    f"cannot parse {cell!r} as a finite number"
                )
            y[i - 2, jj] = value
        if label_idx is not None:
            cell = row[label_idx].strip()
            try:
                labels[i - 2] = int(float(cell))
            except ValueError:
                raise ParseError(
                    f"{path}: row {i}, column {header[label_idx]!r}: "
                    f"cannot parse {cell!r} as an integer label"
                )
    names = tuple(header[j] for j in feature_idx)
    return Dataset(y=y, labels=labels, feature_names=names)


def atomic_write_text(path, text: str) -> None:
    """Write text via a temp file in the same directory plus rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_dataset_csv(path, dataset: Dataset) -> None:
    """Write features (and the label column when present) with full
    float precision."""
    names = dataset.feature_names or tuple(
        f"x{j + 1}" for j in range(dataset.p)
    )
    out = []
    header = list(names) + ([LABEL_COLUMN] if dataset.labels is not None else [])
    out.append(",".join(header))
    for i in range(dataset.n):
        cells = [repr(float(v)) for v in dataset.y[i]]
        if dataset.labels is not None:
            cells.append(str(int(dataset.labels[i])))
        out.append(",".join(cells))
    atomic_write_text(path, "\n".join(out) + "\n")


def write_assignments_csv(path, result: FitResult) -> None:
    """Row index, 1-based hard component, and per-component gamma."""
    gamma = result.responsibilities.gamma
    K = gamma.shape[1]
    lines = ["index,component," + ",".join(f"gamma_{k + 1}" for k in range(K))]
    for i in range(gamma.shape[0]):
        cells = [str(i), str(int(result.hard_assignment[i]) + 1)]
        cells.extend(repr(float(v)) for v in gamma[i])
        lines.append(",".join(cells))
    atomic_write_text(path, "\n".join(lines) + "\n")


def read_assignments_csv(path) -> np.ndarray:
    """Hard component labels (1-based) from an assignments CSV."""
    path = Path(path)
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        rows = [row for row in reader if row]
    if not rows or "component" not in rows[0]:
        raise ParseError(f"{path}: not an assignments CSV (no 'component' column)")
    j = rows[0].index("component")
    try:
        return np.array([int(row[j]) for row in rows[1:]], dtype=int)
    except (ValueError, IndexError) as exc:
        raise ParseError(f"{path}: bad component column: {exc}")


def sha256_file(path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


@dataclass
class RunManifest:
    """Provenance record written alongside every command's outputs."""

    command: str
    config: dict
    seed: int
    inputs: dict = field(default_factory=dict)  # path -> sha256
    outputs: list = field(default_factory=list)
    timings: dict = field(default_factory=dict)  # phase -> seconds

    def add_input(self, path) -> None:
        self.inputs[str(path)] = sha256_file(path)

    def write(self, path) -> None:
        payload = {
            "command": self.command,
            "config": self.config,
            "seed": self.seed,
            "inputs": self.inputs,
            "outputs": [str(p) for p in self.outputs],
            "timings_seconds": self.timings,
        }
        atomic_write_text(path, json.dumps(payload, indent=2) + "\n")
