"""Target-pair CSV ingestion and run configuration files."""
from __future__ import annotations

import csv
import dataclasses
import json
import math
import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from para.errors import ParseError
from para.train import TrainConfig

_HEADER = re.compile(r"^([xy])_(\d+)$")


def _check_header(header: list[str]) -> tuple[int, int]:
    xs, ys = [], []
    for col, name in enumerate(header, start=1):
        m = _HEADER.match(name.strip())
        if not m:
            raise ParseError(f"header column {col} {name!r} is not x_<i> or y_<j>", row=1, column=col)
        (xs if m.group(1) == "x" else ys).append((int(m.group(2)), col))
    k, d = len(xs), len(ys)
    if k == 0 or d == 0:
        raise ParseError("header needs at least one x_ and one y_ column", row=1)
    expected = [f"x_{i}" for i in range(k)] + [f"y_{j}" for j in range(d)]
    if [h.strip() for h in header] != expected:
        raise ParseError(f"header must read {','.join(expected)}", row=1)
    return k, d


def load_targets_csv(path) -> list[tuple[np.ndarray, np.ndarray]]:
    """Read ``(x, y)`` column-vector pairs, one per data row.

    The header is ``x_0,...,x_{k-1},y_0,...,y_{d-1}``. Row and column numbers
    in errors are 1-based and count the header as row 1.
    """
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    rows = [r for r in rows if r]
    if not rows:
        raise ParseError(f"{path}: file is empty", row=1)
    k, d = _check_header(rows[0])
    if len(rows) == 1:
        raise ParseError(f"{path}: no data rows", row=2)
    pairs = []
    for line, row in enumerate(rows[1:], start=2):
        if len(row) != k + d:
            raise ParseError(f"row {line} has {len(row)} fields, expected {k + d}", row=line)
        values = []
        for col, cell in enumerate(row, start=1):
            try:
                v = float(cell)
            except ValueError:
                raise ParseError(f"row {line}, column {col}: {cell!r} is not a number", line, col) from None
            if not math.isfinite(v):
                raise ParseError(f"row {line}, column {col}: non-finite value {cell!r}", line, col)
            values.append(v)
        arr = np.array(values)
        pairs.append((arr[:k].reshape(k, 1), arr[k:].reshape(d, 1)))
    return pairs


def write_targets_csv(path, pairs) -> None:
    pairs = list(pairs)
    k = pairs[0][0].shape[0]
    d = pairs[0][1].shape[0]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([f"x_{i}" for i in range(k)] + [f"y_{j}" for j in range(d)])
        for x, y in pairs:
            x = np.asarray(x, dtype=np.float64)
            y = np.asarray(y, dtype=np.float64)
            for j in range(x.shape[1] if x.ndim == 2 else 1):
                xc = x[:, j] if x.ndim == 2 else x
                yc = y[:, j] if y.ndim == 2 else y
                w.writerow([repr(float(v)) for v in xc] + [repr(float(v)) for v in yc])


@dataclass
class RunConfig:
    """Training run described in a JSON file; keys mirror TrainConfig plus paths."""

    model: Path
    targets: Path
    out: Path
    train: TrainConfig

    @classmethod
    def from_dict(cls, doc: dict, base_dir=None) -> "RunConfig":
        base = Path(base_dir) if base_dir else Path.cwd()
        train_keys = {f.name for f in dataclasses.fields(TrainConfig)}
        allowed = train_keys | {"model", "targets", "out"}
        unknown = sorted(set(doc) - allowed)
        if unknown:
            raise ValueError(f"unknown config keys: {', '.join(unknown)}")
        missing = [k for k in ("model", "targets", "out") if k not in doc]
        if missing:
            raise ValueError(f"missing config keys: {', '.join(missing)}")
        paths = {k: (base / doc[k]) if not Path(doc[k]).is_absolute() else Path(doc[k]) for k in ("model", "targets", "out")}
        for k in ("model", "targets"):
            if not paths[k].exists():
                raise FileNotFoundError(f"{k} path does not exist: {paths[k]}")
        train = TrainConfig(**{k: v for k, v in doc.items() if k in train_keys})
        return cls(paths["model"], paths["targets"], paths["out"], train)

    @classmethod
    def load(cls, path) -> "RunConfig":
        path = Path(path)
        doc = json.loads(path.read_text())
        if not isinstance(doc, dict):
            raise ValueError("config must be a JSON object")
        return cls.from_dict(doc, base_dir=path.parent)
