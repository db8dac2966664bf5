"""Multi-run experiments: mu sweeps, masked sweeps and composite-loss gradient checks."""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np
from scipy.stats import spearmanr

from .data import Dataset, random_connected_graph
from .graph import normalize_adjacency
from .nn import ModelKind, ModelParams, finite_diff_gradcheck, glorot_init, model_backward, model_forward
from .reg import RegSpec
from .train import DEFAULT_MU_GRID, LossContext, TrainConfig, composite_loss, random_split, train

DEFAULT_RATIO_GRID = tuple(round(0.1 * k, 1) for k in range(11))

SWEEP_COLUMNS = ("param", "seed", "split_seed", "train_acc", "val_acc", "test_acc", "omega", "stopped_epoch")


@dataclass(frozen=True)
class SweepRow:
    param: float
    seed: int
    split_seed: int
    train_acc: float
    val_acc: float
    test_acc: float
    omega: float
    stopped_epoch: int

    def as_tuple(self) -> tuple:
        return tuple(getattr(self, c) for c in SWEEP_COLUMNS)


def _sweep(cfg: TrainConfig, ds: Dataset, configs: list[tuple[float, RegSpec]], seeds, split_seeds) -> list[SweepRow]:
    rows = []
    for value, reg in configs:
        for sp in split_seeds:
            for s in seeds:
                _, m = train(replace(cfg, reg=reg, seed=s, split_seed=sp), ds)
                rows.append(SweepRow(value, s, sp, m.train_acc, m.val_acc, m.test_acc, m.omega, m.stopped_epoch))
    return rows


def mu_sweep(
    cfg: TrainConfig,
    ds: Dataset,
    values: Sequence[float] = DEFAULT_MU_GRID,
    seeds: Sequence[int] = (0,),
    split_seeds: Sequence[int] = (0,),
) -> list[SweepRow]:
    """Train at every mu in ``values`` (regularizer settings otherwise from ``cfg.reg``)."""
    return _sweep(cfg, ds, [(float(mu), replace(cfg.reg, mu=float(mu))) for mu in values], seeds, split_seeds)


def masked_sweep(
    cfg: TrainConfig,
    ds: Dataset,
    ratios: Sequence[float] = DEFAULT_RATIO_GRID,
    seeds: Sequence[int] = (0,),
    split_seeds: Sequence[int] = (0,),
) -> list[SweepRow]:
    """Train P-reg with the unmask ratio set to each value in ``ratios``."""
    if cfg.reg.kind != "preg":
        raise ValueError("masked sweep needs the preg regularizer")
    configs = [(float(a), replace(cfg.reg, unmask_ratio=float(a))) for a in ratios]
    return _sweep(cfg, ds, configs, seeds, split_seeds)


def median_by_param(rows: Sequence[SweepRow], column: str) -> tuple[np.ndarray, np.ndarray]:
    params = np.array(sorted({r.param for r in rows}))
    med = np.array([np.median([getattr(r, column) for r in rows if r.param == p]) for p in params])
    return params, med


def spearman(x: Sequence[float], y: Sequence[float]) -> float:
    """Spearman rank correlation (average ranks for ties)."""
    if len(x) != len(y) or len(x) < 2:
        raise ValueError("spearman needs two equal-length sequences of length >= 2")
    return float(spearmanr(x, y).statistic)


def composite_gradcheck(
    kind: ModelKind,
    reg: RegSpec,
    seed: int = 0,
    n: int = 10,
    n_features: int = 5,
    hidden: int = 8,
    n_classes: int = 3,
    eps: float = 1e-5,
    epoch: int = 2,
) -> float:
    """Max relative gradient error of the full training loss on a random small instance.

    Dropout is off so the loss is a deterministic function of the weights.
    """
    rng = np.random.default_rng(seed)
    g = random_connected_graph(n, n, rng)
    labels = np.arange(n) % n_classes
    ds = Dataset(g, rng.standard_normal((n, n_features)), labels)
    split = random_split(labels, 2, 1, rng)
    ctx = LossContext.build(g, reg, np.random.default_rng([seed, 1]))
    op = normalize_adjacency(g, "symmetric")
    Y = ds.one_hot()
    params = ModelParams(kind, glorot_init(n_features, hidden, rng), glorot_init(hidden, n_classes, rng))

    def loss_and_grad(p: ModelParams):
        Z, cache = model_forward(p, ds.features, op)
        value, dZ, _ = composite_loss(Z, Y, split, reg, ctx, epoch)
        return value, model_backward(cache, p, dZ)

    return finite_diff_gradcheck(loss_and_grad, params, eps=eps)
