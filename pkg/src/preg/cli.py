"""Command-line entry point: ``preg {train,gridsearch,analyze,gen-sbm,gradcheck}``.

Exit codes: 0 success, 1 runtime failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import warnings
from contextlib import contextmanager
from pathlib import Path

import numpy as np

from . import analysis
from .data import Dataset, SbmConfig, generate_sbm, load_dataset, load_split, write_dataset
from .experiments import DEFAULT_RATIO_GRID, SWEEP_COLUMNS, composite_gradcheck, masked_sweep, mu_sweep
from .graph import with_self_loops
from .nn import ModelParams
from .reg import RegSpec
from .train import DEFAULT_MU_GRID, SplitSpec, TrainConfig, grid_search_mu, predict, train

log = logging.getLogger("preg")

REG_KINDS = {"none": "none", "preg": "preg", "lap": "laplacian", "ls": "label_smoothing", "cp": "confidence_penalty"}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse exits 2 by default; keep that but route through one place
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _float_list(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")


def _int_list(text: str) -> list[int]:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def _add_data(p: argparse.ArgumentParser, required: bool = True) -> None:
    p.add_argument("--data", type=Path, required=required, help="dataset directory (edges.tsv, features.txt, labels.txt)")


def _add_training(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("model and regularizer")
    g.add_argument("--model", choices=("gcn", "mlp"), default="gcn", help="backbone (default gcn)")
    g.add_argument("--reg", choices=tuple(REG_KINDS), default="none", help="regularizer kind (default none)")
    g.add_argument("--phi", choices=("se", "ce", "kl"), default="ce", help="P-reg disagreement measure (default ce)")
    g.add_argument("--mu", type=float, default=0.0, help="regularization factor in [0, 1] (default 0)")
    g.add_argument("--unmask-ratio", type=float, default=1.0, help="fraction of nodes P-reg is applied to (default 1)")
    g.add_argument("--anneal", action="store_true", help="use mu**(1/epoch) as the P-reg weight")
    g.add_argument("--threshold", type=float, default=None, help="hinge P-reg as max(0, value - threshold)")
    g.add_argument("--ls-alpha", type=float, default=0.1, help="label smoothing factor (default 0.1)")
    g.add_argument("--cp-beta", type=float, default=0.1, help="confidence penalty weight (default 0.1)")
    g.add_argument("--self-loops", action="store_true", help="add self-loops to the P-reg propagation graph")
    t = p.add_argument_group("optimization")
    t.add_argument("--lr", type=float, default=0.01, help="Adam learning rate (default 0.01)")
    t.add_argument("--weight-decay", type=float, default=5e-4, help="L2 weight decay (default 5e-4)")
    t.add_argument("--dropout", type=float, default=0.5, help="dropout probability (default 0.5)")
    t.add_argument("--hidden", type=int, default=None, help="hidden width (default 64 gcn, 16 mlp)")
    t.add_argument("--max-epochs", type=int, default=2000, help="epoch cap (default 2000)")
    t.add_argument("--patience", type=int, default=200, help="early-stopping patience (default 200)")
    t.add_argument("--seed", type=int, default=0, help="seed for initialization, dropout and masking (default 0)")
    s = p.add_argument_group("split")
    s.add_argument("--split", choices=("random", "files"), default="random",
                   help="random per-class split, or train/val/test_idx.txt in the data directory")
    s.add_argument("--split-seed", type=int, default=0, help="seed for the random split (default 0)")
    s.add_argument("--train-per-class", type=int, default=20, help="training nodes per class (default 20)")
    s.add_argument("--val-per-class", type=int, default=30, help="validation nodes per class (default 30)")


def _add_out(p: argparse.ArgumentParser, what: str) -> None:
    p.add_argument("--out", type=Path, default=None, help=f"{what} output path (default stdout)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="preg", description="Propagation-regularized GCN training and analysis.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("train", help="train one model and write metrics JSON")
    _add_data(p)
    _add_training(p)
    _add_out(p, "metrics JSON")
    p.add_argument("--checkpoint", type=Path, default=None, help="save the restored best weights as .npz")

    p = sub.add_parser("gridsearch", help="select mu on validation accuracy over a grid")
    _add_data(p)
    _add_training(p)
    _add_out(p, "results JSON")
    p.add_argument("--values", type=_float_list, default=list(DEFAULT_MU_GRID), help="comma-separated mu grid (default 0.05..1.0)")
    p.add_argument("--seeds", type=_int_list, default=None, help="comma-separated run seeds (default --seed)")
    p.add_argument("--split-seeds", type=_int_list, default=None, help="comma-separated split seeds (default --split-seed)")
    p.add_argument("--workers", type=int, default=1, help="parallel training processes (default 1)")

    p = sub.add_parser("analyze", help="numerical checks and sweeps, written as CSV")
    p.add_argument("--check", required=True,
                   choices=("theorem1", "infinite-gcn", "preg-descent", "omega", "masked-sweep", "mu-sweep"),
                   help="which analysis to run")
    _add_data(p)
    _add_training(p)
    _add_out(p, "CSV")
    p.add_argument("--tol", type=float, default=1e-8, help="infinite-gcn dispersion tolerance (default 1e-8)")
    p.add_argument("--max-iter", type=int, default=10000, help="infinite-gcn iteration cap (default 10000)")
    p.add_argument("--step-size", type=float, default=0.1, help="preg-descent step size (default 0.1)")
    p.add_argument("--steps", type=int, default=2000, help="preg-descent steps (default 2000)")
    p.add_argument("--checkpoint", type=Path, nargs="+", default=None, help="omega: .npz checkpoints written by train")
    p.add_argument("--values", type=_float_list, default=list(DEFAULT_MU_GRID), help="mu-sweep grid (default 0.05..1.0)")
    p.add_argument("--ratios", type=_float_list, default=list(DEFAULT_RATIO_GRID), help="masked-sweep unmask ratios (default 0,0.1,..,1)")
    p.add_argument("--seeds", type=_int_list, default=None, help="sweep run seeds (default --seed)")
    p.add_argument("--split-seeds", type=_int_list, default=None, help="sweep split seeds (default --split-seed)")

    p = sub.add_parser("gen-sbm", help="sample a stochastic block model dataset")
    p.add_argument("--out", type=Path, required=True, help="output dataset directory")
    d = SbmConfig()
    p.add_argument("--blocks", type=int, default=d.blocks, help=f"number of blocks (default {d.blocks})")
    p.add_argument("--nodes-per-block", type=int, default=d.nodes_per_block, help=f"nodes per block (default {d.nodes_per_block})")
    p.add_argument("--p-in", type=float, default=d.p_in, help=f"intra-block edge probability (default {d.p_in})")
    p.add_argument("--p-out", type=float, default=d.p_out, help=f"inter-block edge probability (default {d.p_out})")
    p.add_argument("--feature-dim", type=int, default=d.feature_dim, help=f"feature dimension (default {d.feature_dim})")
    p.add_argument("--separation", type=float, default=d.center_separation, help=f"block center separation (default {d.center_separation})")
    p.add_argument("--noise", type=float, default=d.feature_noise_sd, help=f"feature noise sd (default {d.feature_noise_sd})")
    p.add_argument("--seed", type=int, default=d.seed, help=f"sampling seed (default {d.seed})")
    p.add_argument("--connected", action="store_true", help="resample on later seeds until the graph is connected")

    p = sub.add_parser("gradcheck", help="finite-difference check of the full training loss")
    _add_training(p)
    _add_out(p, "result JSON")
    p.add_argument("--nodes", type=int, default=10, help="nodes in the random instance (default 10)")
    p.add_argument("--eps", type=float, default=1e-5, help="finite-difference step (default 1e-5)")
    p.add_argument("--tol", type=float, default=1e-5, help="max relative error to pass (default 1e-5)")
    return parser


@contextmanager
def _output(path: Path | None):
    if path is None:
        yield sys.stdout
    else:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8", newline="") as fh:
            yield fh


def _reg_spec(args) -> RegSpec:
    return RegSpec(
        kind=REG_KINDS[args.reg],
        phi=args.phi,
        mu=args.mu,
        unmask_ratio=args.unmask_ratio,
        anneal=args.anneal,
        threshold=args.threshold,
        ls_alpha=args.ls_alpha,
        cp_beta=args.cp_beta,
        self_loops=args.self_loops,
    )


def _train_config(args, ds: Dataset | None) -> TrainConfig:
    split = None
    if ds is not None and args.split == "files":
        split = SplitSpec(*load_split(args.data))
    return TrainConfig(
        model=args.model,
        reg=_reg_spec(args),
        lr=args.lr,
        weight_decay=args.weight_decay,
        max_epochs=args.max_epochs,
        patience=args.patience,
        seed=args.seed,
        hidden=args.hidden,
        dropout=args.dropout,
        split=split,
        split_seed=args.split_seed,
        train_per_class=args.train_per_class,
        val_per_class=args.val_per_class,
    )


def _validate_ranges(args) -> None:
    # checked before any file is touched so bad values are usage errors
    if hasattr(args, "mu") and not 0.0 <= args.mu <= 1.0:
        raise UsageError(f"--mu must lie in [0, 1], got {args.mu}")
    if hasattr(args, "unmask_ratio") and not 0.0 <= args.unmask_ratio <= 1.0:
        raise UsageError(f"--unmask-ratio must lie in [0, 1], got {args.unmask_ratio}")
    if hasattr(args, "dropout") and not 0.0 <= args.dropout < 1.0:
        raise UsageError(f"--dropout must lie in [0, 1), got {args.dropout}")
    for name in ("values", "ratios"):
        vals = getattr(args, name, None)
        if vals is not None and (not vals or any(not 0.0 <= v <= 1.0 for v in vals)):
            raise UsageError(f"--{name} must be a nonempty list of numbers in [0, 1]")
    if getattr(args, "command", None) == "analyze" and args.check == "omega" and not args.checkpoint:
        raise UsageError("--check omega needs --checkpoint")
    try:
        if hasattr(args, "reg"):
            _reg_spec(args)
    except ValueError as exc:
        raise UsageError(str(exc))


def _summary(m) -> dict:
    d = m.to_dict()
    d.pop("loss_curve")
    return d


def cmd_train(args) -> int:
    ds = load_dataset(args.data)
    params, metrics = train(_train_config(args, ds), ds)
    if args.checkpoint is not None:
        args.checkpoint.parent.mkdir(parents=True, exist_ok=True)
        with open(args.checkpoint, "wb") as fh:
            np.savez(fh, kind=np.array(params.kind), W0=params.W0, W1=params.W1)
    with _output(args.out) as fh:
        fh.write(metrics.to_json() + "\n")
    return 0


def cmd_gridsearch(args) -> int:
    ds = load_dataset(args.data)
    cfg = _train_config(args, ds)
    best, by_mu = grid_search_mu(cfg, ds, args.values, args.seeds, args.split_seeds, workers=args.workers)
    doc = {
        "best_mu": best,
        "mean_val_acc": {repr(mu): float(np.mean([m.val_acc for m in runs])) for mu, runs in by_mu.items()},
        "mean_test_acc": {repr(mu): float(np.mean([m.test_acc for m in runs])) for mu, runs in by_mu.items()},
        "runs": [_summary(m) for runs in by_mu.values() for m in runs],
    }
    with _output(args.out) as fh:
        fh.write(json.dumps(doc, indent=2) + "\n")
    return 0


def load_checkpoint(path: Path) -> ModelParams:
    with np.load(path) as z:
        return ModelParams(str(z["kind"]), z["W0"], z["W1"])


def cmd_analyze(args) -> int:
    ds = load_dataset(args.data)
    g = with_self_loops(ds.graph) if args.self_loops else ds.graph
    Z = ds.features
    if args.check == "theorem1":
        rows = [(0, analysis.quadratic_form_residual(g, Z), analysis.row_dispersion(Z))]
        header = ("step", "value", "dispersion")
    elif args.check == "infinite-gcn":
        with warnings.catch_warnings():
            # reported once through logging below
            warnings.simplefilter("ignore", RuntimeWarning)
            rep = analysis.infinite_gcn(g, Z, args.tol, args.max_iter)
        for note in rep.warnings:
            log.warning(note)
        rows = [(k, d, d) for k, d in enumerate(rep.trace)]
        header = ("step", "value", "dispersion")
    elif args.check == "preg-descent":
        res = analysis.minimize_preg_descent(g, Z, args.phi, args.step_size, args.steps)
        rows = list(zip(range(len(res.values)), res.values, res.dispersion))
        header = ("step", "value", "dispersion")
    elif args.check == "omega":
        rows = []
        for path in args.checkpoint:
            params = load_checkpoint(path)
            rows.append((str(path), analysis.intra_class_distance(predict(params, ds), ds.labels)))
        header = ("checkpoint", "omega")
    else:
        cfg = _train_config(args, ds)
        seeds = args.seeds or [args.seed]
        split_seeds = args.split_seeds or [args.split_seed]
        if args.check == "mu-sweep":
            sweep = mu_sweep(cfg, ds, args.values, seeds, split_seeds)
            header = ("mu",) + SWEEP_COLUMNS[1:]
        else:
            if cfg.reg.kind != "preg":
                raise UsageError("--check masked-sweep needs --reg preg")
            sweep = masked_sweep(cfg, ds, args.ratios, seeds, split_seeds)
            header = ("unmask_ratio",) + SWEEP_COLUMNS[1:]
        rows = [r.as_tuple() for r in sweep]
    with _output(args.out) as fh:
        analysis.write_trace_csv(fh, rows, header)
    return 0


def cmd_gen_sbm(args) -> int:
    cfg = SbmConfig(
        blocks=args.blocks,
        nodes_per_block=args.nodes_per_block,
        p_in=args.p_in,
        p_out=args.p_out,
        feature_dim=args.feature_dim,
        center_separation=args.separation,
        feature_noise_sd=args.noise,
        seed=args.seed,
    )
    ds = generate_sbm(cfg, require_connected=args.connected)
    write_dataset(ds, args.out)
    (args.out / "sbm_config.json").write_text(cfg.to_json() + "\n", encoding="utf-8")
    return 0


def cmd_gradcheck(args) -> int:
    reg = _reg_spec(args)
    err = float(composite_gradcheck(args.model, reg, seed=args.seed, n=args.nodes, eps=args.eps))
    ok = bool(err < args.tol)
    doc = {"model": args.model, "reg": reg.kind, "phi": reg.phi, "max_rel_error": err, "tol": args.tol, "passed": ok}
    with _output(args.out) as fh:
        fh.write(json.dumps(doc, indent=2) + "\n")
    return 0 if ok else 1


COMMANDS = {
    "train": cmd_train,
    "gridsearch": cmd_gridsearch,
    "analyze": cmd_analyze,
    "gen-sbm": cmd_gen_sbm,
    "gradcheck": cmd_gradcheck,
}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        _validate_ranges(args)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 2
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"preg {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except (OSError, ValueError, RuntimeError, FloatingPointError) as exc:
        print(f"preg {args.command}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
