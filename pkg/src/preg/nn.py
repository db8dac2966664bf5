"""Two-layer GCN / MLP with hand-written forward and backward passes.

Matrices are plain float64 ``numpy`` arrays. The GCN computes
``op @ dropout(relu(op @ X @ W0)) @ W1`` and the MLP drops both ``op``
products. Dropout is inverted, so evaluation needs no rescaling.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Literal

import numpy as np

from .graph import SparseOperator, spmm, spmm_t

ModelKind = Literal["gcn", "mlp"]

DEFAULT_HIDDEN = {"gcn": 64, "mlp": 16}


@dataclass
class ModelParams:
    kind: ModelKind
    W0: np.ndarray
    W1: np.ndarray

    def __post_init__(self) -> None:
        if self.kind not in ("gcn", "mlp"):
            raise ValueError(f"unknown model kind {self.kind!r}")
        if self.W0.ndim != 2 or self.W1.ndim != 2 or self.W0.shape[1] != self.W1.shape[0]:
            raise ValueError(f"inconsistent weight shapes {self.W0.shape} and {self.W1.shape}")

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.W0.shape[0], self.W0.shape[1], self.W1.shape[1]

    def arrays(self) -> list[np.ndarray]:
        return [self.W0, self.W1]

    def copy(self) -> "ModelParams":
        return ModelParams(self.kind, self.W0.copy(), self.W1.copy())


@dataclass
class ForwardCache:
    kind: ModelKind
    op: SparseOperator | None
    inputs: np.ndarray  # op @ X for gcn, X for mlp
    pre_act: np.ndarray
    hidden: np.ndarray  # post-ReLU, post-dropout
    mask: np.ndarray | None
    out_shape: tuple[int, int]


def glorot_init(rows: int, cols: int, rng: np.random.Generator) -> np.ndarray:
    if rows <= 0 or cols <= 0:
        raise ValueError("glorot_init needs positive dimensions")
    bound = np.sqrt(6.0 / (rows + cols))
    return rng.uniform(-bound, bound, size=(rows, cols))


def init_params(
    kind: ModelKind, n_features: int, n_classes: int, rng: np.random.Generator, hidden: int | None = None
) -> ModelParams:
    h = DEFAULT_HIDDEN[kind] if hidden is None else hidden
    return ModelParams(kind, glorot_init(n_features, h, rng), glorot_init(h, n_classes, rng))


def log_softmax_rows(Z: np.ndarray) -> np.ndarray:
    shifted = Z - Z.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def softmax_rows(Z: np.ndarray) -> np.ndarray:
    shifted = Z - Z.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def dropout_mask(shape: tuple[int, ...], p: float, rng: np.random.Generator) -> np.ndarray:
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout probability must lie in [0, 1), got {p}")
    if p == 0.0:
        return np.ones(shape)
    keep = rng.random(shape) >= p
    return keep / (1.0 - p)


def model_forward(
    params: ModelParams,
    X: np.ndarray,
    op: SparseOperator | None,
    dropout_p: float = 0.0,
    training: bool = False,
    rng: np.random.Generator | None = None,
    propagated_inputs: np.ndarray | None = None,
) -> tuple[np.ndarray, ForwardCache]:
    """Run the model and return logits ``Z`` with the cache for :func:`model_backward`.

    ``propagated_inputs`` may carry a precomputed ``op @ X`` (it does not
    depend on the weights, so the training loop computes it once).
    """
    F, _, _ = params.dims
    if X.ndim != 2 or X.shape[1] != F:
        raise ValueError(f"features have shape {X.shape}, model expects {F} columns")
    if params.kind == "gcn":
        if op is None:
            raise ValueError("gcn forward needs a propagation operator")
        inputs = propagated_inputs if propagated_inputs is not None else spmm(op, X)
    else:
        inputs = X
    pre = inputs @ params.W0
    h = np.maximum(pre, 0.0)
    mask = None
    if training and dropout_p > 0.0:
        if rng is None:
            raise ValueError("training-mode dropout needs an rng")
        mask = dropout_mask(h.shape, dropout_p, rng)
        h = h * mask
    out = h @ params.W1
    if params.kind == "gcn":
        out = spmm(op, out)
    return out, ForwardCache(params.kind, op if params.kind == "gcn" else None, inputs, pre, h, mask, out.shape)


def model_backward(
    cache: ForwardCache, params: ModelParams, dZ: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Gradients ``(dW0, dW1)`` of a scalar loss given ``dZ = dL/dZ``."""
    if cache.kind != params.kind:
        raise ValueError("cache was produced by a different model kind")
    n, h = cache.hidden.shape
    if (
        dZ.shape != cache.out_shape
        or params.W0.shape != (cache.inputs.shape[1], h)
        or params.W1.shape != (h, dZ.shape[1])
    ):
        raise ValueError(f"gradient shape {dZ.shape} does not match cached forward pass")
    d_out = spmm_t(cache.op, dZ) if cache.kind == "gcn" else dZ
    dW1 = cache.hidden.T @ d_out
    dh = d_out @ params.W1.T
    if cache.mask is not None:
        dh = dh * cache.mask
    dpre = dh * (cache.pre_act > 0.0)
    dW0 = cache.inputs.T @ dpre
    return dW0, dW1


def finite_diff_gradcheck(
    loss_and_grad: Callable[[ModelParams], tuple[float, tuple[np.ndarray, np.ndarray]]],
    params: ModelParams,
    eps: float = 1e-5,
    max_coords: int | None = None,
    rng: np.random.Generator | None = None,
) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``loss_and_grad`` must be deterministic (no live dropout). With
    ``max_coords`` set, a random subsample of at least 200 coordinates is
    checked instead of every weight.
    """
    if not eps > 0.0:
        raise ValueError(f"finite-difference step must be positive, got {eps}")
    base, grads = loss_and_grad(params)
    if not np.isfinite(base):
        raise FloatingPointError("loss is not finite at the base point")
    coords = [(k, idx) for k, w in enumerate(params.arrays()) for idx in np.ndindex(w.shape)]
    if max_coords is not None and max_coords < len(coords):
        rng = rng or np.random.default_rng(0)
        pick = rng.choice(len(coords), size=max(max_coords, 200), replace=False)
        coords = [coords[i] for i in sorted(pick)]

    worst = 0.0
    probe = params.copy()
    arrays = probe.arrays()
    for k, idx in coords:
        w = arrays[k]
        orig = w[idx]
        w[idx] = orig + eps
        fp, _ = loss_and_grad(probe)
        w[idx] = orig - eps
        fm, _ = loss_and_grad(probe)
        w[idx] = orig
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise FloatingPointError(f"loss is not finite near coordinate {k}{idx}")
        numeric = (fp - fm) / (2.0 * eps)
        analytic = grads[k][idx]
        denom = max(abs(numeric), abs(analytic), 1e-8)
        worst = max(worst, abs(numeric - analytic) / denom)
    return worst
