"""Composite loss, Adam, early stopping, splits and the mu grid search."""

from __future__ import annotations

import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from typing import Callable, Literal, Sequence

import numpy as np

from .analysis import intra_class_distance
from .data import Dataset
from .graph import Graph, SparseOperator, normalize_adjacency, with_self_loops
from .nn import ModelKind, ModelParams, init_params, log_softmax_rows, model_backward, model_forward
from .reg import (
    RegSpec,
    anneal_mu,
    confidence_penalty,
    draw_unmask_set,
    eligible_nodes,
    laplacian_reg,
    preg_loss,
    smooth_labels,
    threshold_hinge,
)

log = logging.getLogger(__name__)

DEFAULT_MU_GRID = tuple(round(0.05 * k, 2) for k in range(1, 21))


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class SplitSpec:
    train_idx: np.ndarray
    val_idx: np.ndarray
    test_idx: np.ndarray

    def validate(self, labels: np.ndarray, num_classes: int | None = None) -> None:
        sets = [set(map(int, s)) for s in (self.train_idx, self.val_idx, self.test_idx)]
        if sets[0] & sets[1] or sets[0] & sets[2] or sets[1] & sets[2]:
            raise ValueError("train/val/test index sets overlap")
        n = labels.shape[0]
        if any(i < 0 or i >= n for s in sets for i in s):
            raise ValueError("split index out of range")
        k = int(labels.max()) + 1 if num_classes is None else num_classes
        missing = set(range(k)) - set(labels[self.train_idx].tolist())
        if missing:
            raise ValueError(f"classes {sorted(missing)} have no training node")


@dataclass(frozen=True)
class TrainConfig:
    model: ModelKind = "gcn"
    reg: RegSpec = field(default_factory=RegSpec)
    lr: float = 0.01
    weight_decay: float = 5e-4
    max_epochs: int = 2000
    patience: int = 200
    seed: int = 0
    hidden: int | None = None
    dropout: float = 0.5
    split: SplitSpec | None = None
    split_seed: int = 0
    train_per_class: int = 20
    val_per_class: int = 30
    model_norm: Literal["row", "symmetric"] = "symmetric"
    betas: tuple[float, float] = (0.9, 0.999)
    adam_eps: float = 1e-8

    def __post_init__(self) -> None:
        if not self.lr > 0:
            raise ValueError(f"learning rate must be positive, got {self.lr}")
        if self.patience < 1:
            raise ValueError("patience must be at least 1")
        if self.max_epochs < self.patience:
            raise ValueError("max_epochs must be at least patience")


@dataclass
class Metrics:
    mu: float
    phi: str
    reg: str
    train_acc: float
    val_acc: float
    test_acc: float
    omega: float
    stopped_epoch: int
    best_epoch: int
    seed: int = 0
    split_seed: int = 0
    loss_curve: list[dict] = field(default_factory=list)

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


@dataclass
class AdamState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    t: int = 0

    @classmethod
    def zeros_like(cls, params: Sequence[np.ndarray]) -> "AdamState":
        return cls([np.zeros_like(p) for p in params], [np.zeros_like(p) for p in params])


@dataclass
class LossContext:
    """Operators and fixed index sets the composite loss needs for one run."""

    graph: Graph
    preg_op: SparseOperator
    unmask_set: np.ndarray | None = None

    @classmethod
    def build(cls, g: Graph, reg: RegSpec, rng: np.random.Generator | None = None) -> "LossContext":
        base = with_self_loops(g) if reg.self_loops else g
        op = normalize_adjacency(base, "row")
        unmask = None
        if reg.kind == "preg" and reg.unmask_ratio < 1.0:
            unmask = draw_unmask_set(eligible_nodes(op), reg.unmask_ratio, rng or np.random.default_rng(0))
        return cls(g, op, unmask)


def cross_entropy(Z: np.ndarray, targets: np.ndarray, idx: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean over ``idx`` of -sum_j T_ij log softmax(Z)_ij, with gradient w.r.t. ``Z``."""
    log_p = log_softmax_rows(Z[idx])
    T = targets[idx]
    m = idx.shape[0]
    value = -float((T * log_p).sum()) / m
    dZ = np.zeros_like(Z)
    dZ[idx] = (np.exp(log_p) * T.sum(axis=1, keepdims=True) - T) / m
    return value, dZ


def composite_loss(
    Z: np.ndarray,
    Y: np.ndarray,
    split: SplitSpec,
    reg: RegSpec,
    ctx: LossContext,
    epoch: int = 1,
) -> tuple[float, np.ndarray, dict[str, float]]:
    """Classification loss plus the weighted regularizer.

    ``Y`` is the one-hot label matrix. Returns ``(value, dZ, parts)`` where
    ``parts`` holds the unweighted ``cls`` and ``reg`` terms.
    """
    idx = np.asarray(split.train_idx, dtype=np.int64)
    if idx.size == 0:
        raise TrainingError("composite loss needs at least one training node")
    targets = smooth_labels(Y, reg.ls_alpha) if reg.kind == "label_smoothing" else Y
    cls_value, dZ = cross_entropy(Z, targets, idx)
    parts = {"cls": cls_value, "reg": 0.0}
    if reg.kind in ("none", "label_smoothing"):
        return cls_value, dZ, parts

    if reg.kind == "confidence_penalty":
        if reg.cp_beta == 0.0:
            return cls_value, dZ, parts
        value, dR = confidence_penalty(Z, idx)
        value /= idx.shape[0]
        parts["reg"] = value
        return cls_value + reg.cp_beta * value, dZ + (reg.cp_beta / idx.shape[0]) * dR, parts

    if reg.mu == 0.0:
        return cls_value, dZ, parts
    if reg.kind == "preg":
        value, dR = preg_loss(ctx.preg_op, Z, reg.phi, ctx.unmask_set)
    else:
        n = Z.shape[0]
        value, dR = laplacian_reg(ctx.graph, Z)
        value, dR = value / n, dR / n
    parts["reg"] = value
    weight = anneal_mu(reg.mu, epoch) if reg.anneal else reg.mu
    if reg.threshold is not None:
        value, factor = threshold_hinge(value, reg.threshold)
        if factor == 0.0:
            return cls_value, dZ, parts
    return cls_value + weight * value, dZ + weight * dR, parts


def adam_step(
    params: Sequence[np.ndarray],
    grads: Sequence[np.ndarray],
    state: AdamState,
    lr: float = 0.01,
    betas: tuple[float, float] = (0.9, 0.999),
    eps: float = 1e-8,
    weight_decay: float = 0.0,
) -> tuple[list[np.ndarray], AdamState]:
    """One Adam update with coupled L2 decay (``wd * p`` added to the gradient)."""
    b1, b2 = betas
    t = state.t + 1
    new_params, new_m, new_v = [], [], []
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if weight_decay:
            g = g + weight_decay * p
        m = b1 * m + (1.0 - b1) * g
        v = b2 * v + (1.0 - b2) * (g * g)
        m_hat = m / (1.0 - b1**t)
        v_hat = v / (1.0 - b2**t)
        new_params.append(p - lr * m_hat / (np.sqrt(v_hat) + eps))
        new_m.append(m)
        new_v.append(v)
    return new_params, AdamState(new_m, new_v, t)


def random_split(
    labels: np.ndarray, per_class_train: int, per_class_val: int, rng: np.random.Generator
) -> SplitSpec:
    """Sample ``per_class_train``/``per_class_val`` nodes per class; the rest is test."""
    train, val, test = [], [], []
    for c in range(int(labels.max()) + 1):
        members = np.flatnonzero(labels == c)
        need = per_class_train + per_class_val
        if members.shape[0] < need or per_class_train >= members.shape[0]:
            raise ValueError(f"class {c} has {members.shape[0]} nodes, needs more than {per_class_train} and at least {need}")
        perm = rng.permutation(members)
        train.append(perm[:per_class_train])
        val.append(perm[per_class_train:need])
        test.append(perm[need:])
    return SplitSpec(*(np.sort(np.concatenate(parts)) for parts in (train, val, test)))


def evaluate_accuracy(Z: np.ndarray, labels: np.ndarray, idx: np.ndarray) -> float:
    idx = np.asarray(idx, dtype=np.int64)
    if idx.size == 0:
        raise ValueError("accuracy over an empty index set")
    # np.argmax returns the first maximum, i.e. ties go to the lowest class
    return float(np.mean(np.argmax(Z[idx], axis=1) == labels[idx]))


def resolve_split(cfg: TrainConfig, ds: Dataset) -> SplitSpec:
    if cfg.split is not None:
        split = cfg.split
    else:
        split = random_split(
            ds.labels, cfg.train_per_class, cfg.val_per_class, np.random.default_rng(cfg.split_seed)
        )
    split.validate(ds.labels, ds.num_classes)
    return split


def predict(params: ModelParams, ds: Dataset, op: SparseOperator | None = None, norm: str = "symmetric") -> np.ndarray:
    if op is None and params.kind == "gcn":
        op = normalize_adjacency(ds.graph, norm)
    Z, _ = model_forward(params, ds.features, op)
    return Z


def train(cfg: TrainConfig, ds: Dataset) -> tuple[ModelParams, Metrics]:
    """Full-batch Adam training with early stopping on validation accuracy.

    The parameters with the best validation accuracy are restored at the end.
    """
    split = resolve_split(cfg, ds)
    rng = np.random.default_rng(cfg.seed)
    mask_rng = np.random.default_rng([cfg.seed, 1])
    Y = ds.one_hot()
    ctx = LossContext.build(ds.graph, cfg.reg, mask_rng)
    model_op = normalize_adjacency(ds.graph, cfg.model_norm) if cfg.model == "gcn" else None
    X = ds.features
    inputs = model_op.to_scipy() @ X if model_op is not None else None

    params = init_params(cfg.model, X.shape[1], ds.num_classes, rng, cfg.hidden)
    state = AdamState.zeros_like(params.arrays())
    best_val, best_epoch, best = -1.0, 0, params.copy()
    wait = 0
    curve = []
    epoch = 0
    for epoch in range(1, cfg.max_epochs + 1):
        Z, cache = model_forward(params, X, model_op, cfg.dropout, True, rng, inputs)
        loss, dZ, parts = composite_loss(Z, Y, split, cfg.reg, ctx, epoch)
        if not np.isfinite(loss):
            raise TrainingError(f"loss became non-finite at epoch {epoch}")
        curve.append({"epoch": epoch, "loss": loss, "cls": parts["cls"], "preg": parts["reg"]})
        grads = model_backward(cache, params, dZ)
        (W0, W1), state = adam_step(
            params.arrays(), grads, state, cfg.lr, cfg.betas, cfg.adam_eps, cfg.weight_decay
        )
        params = ModelParams(cfg.model, W0, W1)

        Z_eval, _ = model_forward(params, X, model_op, propagated_inputs=inputs)
        val_acc = evaluate_accuracy(Z_eval, ds.labels, split.val_idx)
        if val_acc >= best_val:
            best_epoch, best = epoch, params.copy()
        if val_acc > best_val:
            best_val = val_acc
            wait = 0
        else:
            wait += 1
            if wait >= cfg.patience:
                break

    Z_best, _ = model_forward(best, X, model_op, propagated_inputs=inputs)
    metrics = Metrics(
        mu=cfg.reg.mu,
        phi=cfg.reg.phi,
        reg=cfg.reg.kind,
        train_acc=evaluate_accuracy(Z_best, ds.labels, split.train_idx),
        val_acc=evaluate_accuracy(Z_best, ds.labels, split.val_idx),
        test_acc=evaluate_accuracy(Z_best, ds.labels, split.test_idx),
        omega=intra_class_distance(Z_best, ds.labels),
        stopped_epoch=epoch,
        best_epoch=best_epoch,
        seed=cfg.seed,
        split_seed=cfg.split_seed,
        loss_curve=curve,
    )
    log.debug("mu=%s stopped at %d (best %d) val=%.4f", cfg.reg.mu, epoch, best_epoch, best_val)
    return best, metrics


def _run_one(args: tuple[TrainConfig, Dataset]) -> Metrics:
    cfg, ds = args
    return train(cfg, ds)[1]


def grid_search_mu(
    cfg: TrainConfig,
    ds: Dataset,
    values: Sequence[float] = DEFAULT_MU_GRID,
    seeds: Sequence[int] | None = None,
    split_seeds: Sequence[int] | None = None,
    run: Callable[[TrainConfig, Dataset], Metrics] | None = None,
    workers: int = 1,
) -> tuple[float, dict[float, list[Metrics]]]:
    """Train once per (mu, split, seed) and pick the mu with the best mean validation accuracy.

    One mu is chosen for all splits and seeds; ties go to the smaller mu.
    ``run`` replaces the training call (used to inject a fixed evaluator).
    Results are keyed by mu, in (split, seed) order, whatever the worker count.
    """
    if not values:
        raise ValueError("grid search needs at least one mu value")
    seeds = [cfg.seed] if seeds is None else list(seeds)
    split_seeds = [cfg.split_seed] if split_seeds is None or cfg.split is not None else list(split_seeds)
    jobs = [
        (float(mu), replace(cfg, seed=s, split_seed=sp, reg=replace(cfg.reg, mu=float(mu))))
        for mu in values
        for sp in split_seeds
        for s in seeds
    ]
    if run is not None:
        results = [run(c, ds) for _, c in jobs]
    elif workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_one, [(c, ds) for _, c in jobs]))
    else:
        results = [_run_one((c, ds)) for _, c in jobs]

    by_mu: dict[float, list[Metrics]] = {}
    for (mu, _), m in zip(jobs, results):
        by_mu.setdefault(mu, []).append(m)
    best_mu = min(by_mu, key=lambda mu: (-float(np.mean([m.val_acc for m in by_mu[mu]])), mu))
    return best_mu, by_mu
