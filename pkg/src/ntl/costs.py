"""Pairwise transport costs between number-token values."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .numvocab import NumberVocabulary


class CostError(ValueError):
    pass


@dataclass(frozen=True)
class CostSpec:
    kind: str  # "euclidean" | "squashed" | "explicit"
    matrix: np.ndarray
    values: np.ndarray
    factor: float | None = None

    @property
    def ratio(self) -> float:
        off = self.matrix[~np.eye(len(self.matrix), dtype=bool)]
        return float(off.max() / off.min())


def _validate(matrix: np.ndarray, values: np.ndarray) -> None:
    n = len(values)
    if matrix.shape != (n, n):
        raise CostError(f"cost matrix must be {n}x{n}, got {matrix.shape}")
    if not np.all(np.isfinite(matrix)):
        raise CostError("cost matrix has non-finite entries")
    if not np.array_equal(matrix, matrix.T):
        raise CostError("cost matrix must be symmetric")
    if np.any(np.diag(matrix) != 0):
        raise CostError("cost matrix must have a zero diagonal")
    distinct = values[:, None] != values[None, :]
    if np.any(matrix[distinct] <= 0):
        raise CostError("costs between distinct values must be positive")


def euclidean_cost(values) -> np.ndarray:
    v = np.asarray(values, dtype=np.float64)
    return np.abs(v[:, None] - v[None, :])


def squash_cost(values, factor: float) -> np.ndarray:
    """Power-law squash of euclidean distances to a max/min ratio of ``factor``.

    ``d -> d_min * (d / d_min) ** beta`` with ``beta = ln(factor) / ln(d_max / d_min)``;
    factor 1 gives a flat (nominal) cost and ``d_max / d_min`` the euclidean one.
    """
    if not factor > 0:
        raise CostError("squash factor must be positive")
    d = euclidean_cost(values)
    nz = d[d > 0]
    if nz.size == 0:
        raise CostError("squashing needs at least two distinct values")
    d_min, d_max = nz.min(), nz.max()
    if d_max == d_min:
        if factor != 1:
            raise CostError("all distances are equal; only factor 1 is attainable")
        beta = 0.0
    else:
        beta = math.log(factor) / math.log(d_max / d_min)
    out = np.zeros_like(d)
    pos = d > 0
    out[pos] = d_min * (d[pos] / d_min) ** beta
    return out


def build_cost(vocab: NumberVocabulary, kind: str = "euclidean", factor: float | None = None,
               matrix=None) -> CostSpec:
    values = vocab.number_values()
    if len(values) < 2:
        raise CostError("need at least two number tokens")
    if kind == "euclidean":
        m = euclidean_cost(values)
    elif kind == "squashed":
        if factor is None:
            raise CostError("squashed cost needs a factor")
        m = squash_cost(values, factor)
    elif kind == "explicit":
        if matrix is None:
            raise CostError("explicit cost needs a matrix")
        m = np.array(matrix, dtype=np.float64)
    else:
        raise CostError(f"unknown cost kind {kind!r}")
    _validate(m, values)
    m.setflags(write=False)
    return CostSpec(kind, m, values, factor)


def save_cost_csv(cost: CostSpec, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        for row in cost.matrix:
            w.writerow([format(x, ".17g") for x in row])


def load_cost_matrix(path: str | Path) -> np.ndarray:
    with open(path, newline="") as fh:
        return np.array([[float(x) for x in row] for row in csv.reader(fh) if row])
