"""Propagation regularization and the baseline regularizers.

Every loss returns ``(value, gradient)`` so the training loop can chain
the gradient into :func:`preg.nn.model_backward`.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Literal

import numpy as np

from .graph import Graph, SparseOperator, spmm, spmm_t
from .nn import log_softmax_rows, softmax_rows

RegKind = Literal["none", "preg", "laplacian", "label_smoothing", "confidence_penalty"]
Phi = Literal["squared_error", "cross_entropy", "kl_divergence"]

PHI_ALIASES: dict[str, Phi] = {
    "se": "squared_error",
    "ce": "cross_entropy",
    "kl": "kl_divergence",
    "squared_error": "squared_error",
    "cross_entropy": "cross_entropy",
    "kl_divergence": "kl_divergence",
}


class RegConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RegSpec:
    kind: RegKind = "none"
    phi: Phi = "cross_entropy"
    mu: float = 0.0
    unmask_ratio: float = 1.0
    anneal: bool = False
    threshold: float | None = None
    ls_alpha: float = 0.1
    cp_beta: float = 0.1
    self_loops: bool = False

    def __post_init__(self) -> None:
        if self.kind not in ("none", "preg", "laplacian", "label_smoothing", "confidence_penalty"):
            raise RegConfigError(f"unknown regularizer kind {self.kind!r}")
        object.__setattr__(self, "phi", resolve_phi(self.phi))
        if not self.mu >= 0.0:
            raise RegConfigError(f"mu must be nonnegative, got {self.mu}")
        if not 0.0 <= self.unmask_ratio <= 1.0:
            raise RegConfigError(f"unmask ratio must lie in [0, 1], got {self.unmask_ratio}")
        if self.threshold is not None and not self.threshold >= 0.0:
            raise RegConfigError(f"threshold must be nonnegative, got {self.threshold}")
        if not 0.0 <= self.ls_alpha < 1.0:
            raise RegConfigError(f"label smoothing alpha must lie in [0, 1), got {self.ls_alpha}")
        if not self.cp_beta >= 0.0:
            raise RegConfigError(f"confidence penalty beta must be nonnegative, got {self.cp_beta}")
        if self.anneal and self.kind in ("preg", "laplacian") and not 0.0 < self.mu < 1.0:
            raise RegConfigError(f"annealing needs 0 < mu < 1, got {self.mu}")


def resolve_phi(name: str) -> Phi:
    try:
        return PHI_ALIASES[name]
    except KeyError:
        raise RegConfigError(f"unknown phi variant {name!r}") from None


def _softmax_backward(P: np.ndarray, dP: np.ndarray) -> np.ndarray:
    return P * (dP - (P * dP).sum(axis=1, keepdims=True))


def phi_rows(variant: Phi, Z: np.ndarray, Zprop: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Per-row disagreement between ``Z`` and ``Zprop`` plus per-row gradients.

    Returns ``(values[N], dZ, dZprop)``; summing ``values`` gives phi.
    """
    if Z.shape != Zprop.shape:
        raise ValueError(f"shape mismatch: {Z.shape} vs {Zprop.shape}")
    variant = resolve_phi(variant)
    if variant == "squared_error":
        diff = Zprop - Z
        return 0.5 * (diff * diff).sum(axis=1), -diff, diff

    log_p = log_softmax_rows(Z)
    log_q = log_softmax_rows(Zprop)
    P = np.exp(log_p)
    Q = np.exp(log_q)
    if variant == "cross_entropy":
        values = -(P * log_q).sum(axis=1)
        dZ = _softmax_backward(P, -log_q)
    else:
        values = (P * (log_p - log_q)).sum(axis=1)
        dZ = _softmax_backward(P, log_p - log_q)
    # d/dZprop of -sum_j P_j log Q_j, using sum_j P_j = 1
    return values, dZ, Q - P


def phi(variant: Phi, Z: np.ndarray, Zprop: np.ndarray) -> tuple[float, np.ndarray, np.ndarray]:
    values, dZ, dZp = phi_rows(variant, Z, Zprop)
    return float(values.sum()), dZ, dZp


def eligible_nodes(op: SparseOperator) -> np.ndarray:
    """Nodes whose propagation row is nonempty (isolated nodes have no neighbor vote)."""
    return np.flatnonzero(np.diff(op.row_offsets) > 0)


def draw_unmask_set(eligible: np.ndarray, ratio: float, rng: np.random.Generator) -> np.ndarray:
    k = int(np.rint(ratio * eligible.shape[0]))
    if k >= eligible.shape[0]:
        return eligible.copy()
    return np.sort(rng.choice(eligible, size=k, replace=False))


def preg_loss(
    op: SparseOperator,
    Z: np.ndarray,
    variant: Phi,
    unmask_set: np.ndarray | None = None,
) -> tuple[float, np.ndarray]:
    """Mean of phi(Z_i, (op Z)_i) over ``unmask_set`` (default: every eligible node).

    The gradient flows through both arguments, so ``dZ = dZ_direct + op.T @ dZprop``.
    """
    if unmask_set is None:
        unmask_set = eligible_nodes(op)
    unmask_set = np.asarray(unmask_set, dtype=np.int64)
    if unmask_set.size == 0:
        return 0.0, np.zeros_like(Z)
    Zp = spmm(op, Z)
    values, dZ_rows, dZp_rows = phi_rows(variant, Z[unmask_set], Zp[unmask_set])
    scale = 1.0 / unmask_set.shape[0]
    dZ = np.zeros_like(Z)
    dZp = np.zeros_like(Z)
    dZ[unmask_set] = dZ_rows * scale
    dZp[unmask_set] = dZp_rows * scale
    return float(values.sum()) * scale, dZ + spmm_t(op, dZp)


def laplacian_reg(g: Graph, Z: np.ndarray) -> tuple[float, np.ndarray]:
    """Sum over undirected edges (each counted once) of ||Z_i - Z_j||^2; equals tr(Z^T (D - A) Z)."""
    e = g.edge_list()
    e = e[e[:, 0] != e[:, 1]]
    diff = Z[e[:, 0]] - Z[e[:, 1]]
    value = float((diff * diff).sum())
    dZ = np.zeros_like(Z)
    np.add.at(dZ, e[:, 0], 2.0 * diff)
    np.add.at(dZ, e[:, 1], -2.0 * diff)
    return value, dZ


def smooth_labels(Y: np.ndarray, ls_alpha: float) -> np.ndarray:
    if not 0.0 <= ls_alpha < 1.0:
        raise RegConfigError(f"label smoothing alpha must lie in [0, 1), got {ls_alpha}")
    C = Y.shape[1]
    return (1.0 - ls_alpha) * Y + ls_alpha / C


def confidence_penalty(Z: np.ndarray, mask: np.ndarray | None = None) -> tuple[float, np.ndarray]:
    """Negative entropy sum_i sum_j P_ij log P_ij over ``mask`` rows, with gradient w.r.t. logits ``Z``."""
    rows = np.arange(Z.shape[0]) if mask is None else np.asarray(mask, dtype=np.int64)
    log_p = log_softmax_rows(Z[rows])
    P = np.exp(log_p)
    value = float((P * log_p).sum())
    dZ = np.zeros_like(Z)
    dZ[rows] = _softmax_backward(P, log_p + 1.0)
    return value, dZ


def confidence_penalty_probs(P: np.ndarray, eps: float = 1e-12) -> float:
    """Negative entropy computed directly from probabilities (logs clamped at ``eps``)."""
    return float((P * np.log(np.maximum(P, eps))).sum())


def anneal_mu(mu: float, epoch: int) -> float:
    if not 0.0 < mu < 1.0:
        raise RegConfigError(f"annealing needs 0 < mu < 1, got {mu}")
    if epoch < 1:
        raise RegConfigError(f"epoch counts from 1, got {epoch}")
    return mu ** (1.0 / epoch)


def threshold_hinge(value: float, tau: float) -> tuple[float, float]:
    """``max(0, value - tau)`` and the factor (0 or 1) to apply to the incoming gradient."""
    if tau < 0.0:
        raise RegConfigError(f"threshold must be nonnegative, got {tau}")
    excess = value - tau
    if excess > 0.0:
        return excess, 1.0
    return 0.0, 0.0


__all__ = [
    "RegSpec",
    "RegConfigError",
    "phi",
    "phi_rows",
    "preg_loss",
    "laplacian_reg",
    "smooth_labels",
    "confidence_penalty",
    "confidence_penalty_probs",
    "anneal_mu",
    "threshold_hinge",
    "eligible_nodes",
    "draw_unmask_set",
    "softmax_rows",
]
