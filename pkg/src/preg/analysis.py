"""Numerical checks of propagation limits, the Laplacian identity, and smoothing diagnostics."""

from __future__ import annotations

import csv
import sys
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, TextIO

import numpy as np

from .graph import Graph, is_connected, normalize_adjacency, normalized_laplacian, spmm, spmm_t
from .reg import phi


class AnalysisError(RuntimeError):
    pass


@dataclass
class ConvergenceReport:
    iterations: int
    dispersion: float
    converged: bool
    limit: np.ndarray
    trace: list[float] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)


def row_dispersion(Z: np.ndarray) -> float:
    """Largest column range, i.e. max over row pairs of ||Z_i - Z_j||_inf."""
    if Z.shape[0] == 0:
        raise ValueError("row dispersion of an empty matrix")
    return float((Z.max(axis=0) - Z.min(axis=0)).max(initial=0.0))


def infinite_gcn(g: Graph, Z: np.ndarray, tol: float = 1e-8, max_iter: int = 10000) -> ConvergenceReport:
    """Apply ``Z <- D^-1 A Z`` until all rows agree to within ``tol``.

    Without self-loops the iteration can oscillate on bipartite graphs; a
    warning is recorded in the report and the iteration still runs.
    """
    if not is_connected(g):
        raise AnalysisError("infinite propagation needs a connected graph")
    notes = []
    if not g.has_self_loops():
        msg = "graph has no self-loops; bipartite components may oscillate"
        notes.append(msg)
        warnings.warn(msg, RuntimeWarning, stacklevel=2)
    op = normalize_adjacency(g, "row")
    Z = np.array(Z, dtype=np.float64)
    disp = row_dispersion(Z)
    trace = [disp]
    it = 0
    while disp >= tol and it < max_iter:
        Z = spmm(op, Z)
        it += 1
        disp = row_dispersion(Z)
        trace.append(disp)
    return ConvergenceReport(it, disp, disp < tol, Z, trace, notes)


def quadratic_form_residual(g: Graph, Z: np.ndarray) -> float:
    """|phi_SE(Z, A_hat Z) - 0.5 <Z, L^T L Z>| with L = I - D^-1 A."""
    op = normalize_adjacency(g, "row")
    lap = normalized_laplacian(g)
    lhs, _, _ = phi("squared_error", Z, spmm(op, Z))
    rhs = 0.5 * float(np.sum(Z * spmm_t(lap, spmm(lap, Z))))
    return abs(lhs - rhs)


# name used by the command-line check
theorem1_residual = quadratic_form_residual


@dataclass
class DescentResult:
    Z: np.ndarray
    values: list[float]
    dispersion: list[float]


def minimize_preg_descent(
    g: Graph,
    Z0: np.ndarray,
    variant: str = "squared_error",
    lr: float = 0.1,
    steps: int = 2000,
) -> DescentResult:
    """Fixed-step gradient descent on phi(Z, A_hat Z) over Z itself.

    ``values[k]`` and ``dispersion[k]`` describe the iterate after ``k`` steps.
    """
    if not is_connected(g):
        raise AnalysisError("descent check needs a connected graph")
    op = normalize_adjacency(g, "row")
    Z = np.array(Z0, dtype=np.float64)
    values, disp = [], []
    for step in range(steps + 1):
        with np.errstate(over="ignore", invalid="ignore"):
            value, dZ, dZp = phi(variant, Z, spmm(op, Z))
        if not np.isfinite(value):
            raise AnalysisError(f"descent diverged at step {step}; try a smaller learning rate")
        values.append(value)
        disp.append(row_dispersion(Z))
        if step == steps:
            break
        Z = Z - lr * (dZ + spmm_t(op, dZp))
    return DescentResult(Z, values, disp)


def intra_class_distance(Z: np.ndarray, labels: np.ndarray) -> float:
    """Mean Euclidean distance of each row of ``Z`` to its class centroid."""
    total = 0.0
    for c in np.unique(labels):
        rows = Z[labels == c]
        if rows.shape[0] == 0:
            continue
        total += float(np.linalg.norm(rows - rows.mean(axis=0), axis=1).sum())
    return total / Z.shape[0]


def write_trace_csv(
    path: str | Path | TextIO | None, rows: Iterable[tuple], header: tuple[str, ...] = ("step", "value", "dispersion")
):
    """Write ``rows`` as CSV to ``path``, an open text stream, or stdout when ``None``."""
    owned = isinstance(path, (str, Path))
    fh = open(path, "w", encoding="utf-8", newline="") if owned else (path or sys.stdout)
    try:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([repr(v) if isinstance(v, float) else v for v in row])
    finally:
        if owned:
            fh.close()
