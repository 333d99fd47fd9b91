"""Abalone CSV ingestion and seeded three-way splits."""

from __future__ import annotations

import csv
import math
from pathlib import Path

import numpy as np

from .core import ContractViolation, Dataset

COLUMNS = ("sex", "length", "diameter", "height", "whole_weight")
RESPONSE = "rings"
SEX_CODES = {"M": 0, "F": 1, "I": 2}
SEX_LEVELS = ("M", "F", "I")
CANONICAL_ROWS = 4177


class IngestionError(ValueError):
    """A malformed input file, reported with its row and column."""


def _key(name: str) -> str:
    return name.strip().lower().replace(" ", "_")


def load_abalone(path) -> Dataset:
    """Read ``sex, length, diameter, height, whole_weight, rings`` by header name.

    Extra columns are ignored. Rows are numbered from 1 after the header.
    """
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise IngestionError(f"{path}: empty file") from None
        keys = [_key(h) for h in header]
        index = {}
        for col in COLUMNS + (RESPONSE,):
            if col not in keys:
                raise IngestionError(f"{path}: missing column {col!r}")
            index[col] = keys.index(col)
        X, y = [], []
        for r, row in enumerate(reader, start=1):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) < len(header):
                raise IngestionError(f"row {r}: expected {len(header)} fields, got {len(row)}")
            sex = row[index["sex"]].strip().upper()
            if sex not in SEX_CODES:
                raise IngestionError(f"row {r}, column 'sex': unknown code {row[index['sex']]!r}")
            vals = [float(SEX_CODES[sex])]
            for col in COLUMNS[1:] + (RESPONSE,):
                raw = row[index[col]].strip()
                try:
                    v = float(raw)
                except ValueError:
                    raise IngestionError(f"row {r}, column {col!r}: not a number: {raw!r}") from None
                if not math.isfinite(v):
                    raise IngestionError(f"row {r}, column {col!r}: not finite: {raw!r}")
                vals.append(v)
            X.append(vals[:-1])
            y.append(vals[-1])
    if not X:
        raise IngestionError(f"{path}: no data rows")
    return Dataset(np.array(X), np.array(y), categorical=(True, False, False, False, False),
                   names=COLUMNS, levels={0: SEX_LEVELS})


def split_sizes(n: int, fractions=(1 / 3, 1 / 3, 1 / 3)) -> list[int]:
    """Largest-remainder integer split; ties go to the earlier part."""
    f = np.asarray(fractions, dtype=float)
    if np.any(f <= 0) or abs(f.sum() - 1.0) > 1e-9:
        raise ContractViolation("split fractions must be positive and sum to 1")
    raw = f * n
    sizes = np.floor(raw).astype(int)
    rem = raw - sizes
    order = sorted(range(f.size), key=lambda i: (-round(rem[i], 12), i))
    for i in order[: n - int(sizes.sum())]:
        sizes[i] += 1
    return sizes.tolist()


def three_way_split(data: Dataset, gen: np.random.Generator, fractions=(1 / 3, 1 / 3, 1 / 3)):
    sizes = split_sizes(data.n, fractions)
    perm = gen.permutation(data.n)
    a, b = sizes[0], sizes[0] + sizes[1]
    return data.subset(perm[:a]), data.subset(perm[a:b]), data.subset(perm[b:])


def write_synthetic_abalone(path, n: int, seed: int = 0) -> None:
    """A file with the abalone schema and a plausible joint law, for tests and demos."""
    gen = np.random.default_rng(seed)
    sex = gen.choice(SEX_LEVELS, size=n, p=[0.37, 0.31, 0.32])
    infant = sex == "I"
    length = np.clip(gen.normal(np.where(infant, 0.43, 0.57), 0.09), 0.08, 0.82)
    diameter = np.clip(0.79 * length + gen.normal(0, 0.015, n), 0.05, 0.65)
    height = np.clip(0.27 * length + gen.normal(0, 0.012, n), 0.01, 0.5)
    whole = np.clip(3.2 * length**3 * (1 + gen.normal(0, 0.12, n)), 0.002, 2.8)
    rings = np.maximum(1, np.round(3 + 14 * length + 8 * height + gen.normal(0, 2.0 + 2.5 * length, n)
                                   - 1.5 * infant)).astype(int)
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["sex", "length", "diameter", "height", "whole_weight", "rings"])
        for i in range(n):
            w.writerow([sex[i], f"{length[i]:.3f}", f"{diameter[i]:.3f}", f"{height[i]:.3f}",
                        f"{whole[i]:.4f}", rings[i]])
