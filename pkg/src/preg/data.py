"""Dataset files and the stochastic block model generator.

On-disk layout of a dataset directory::

    edges.tsv      src<TAB>dst per line, 0-indexed
    features.txt   F space-separated floats per line (one node per line)
    labels.txt     one class index per line
    classes.txt    optional, one class name per line

An optional split is stored as ``train_idx.txt`` / ``val_idx.txt`` /
``test_idx.txt`` with one node index per line.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .graph import Graph, GraphError, build_graph, is_connected, read_edge_list


class DatasetError(ValueError):
    pass


@dataclass(frozen=True)
class Dataset:
    graph: Graph
    features: np.ndarray
    labels: np.ndarray
    names: tuple[str, ...] | None = None

    def __post_init__(self) -> None:
        n = self.graph.num_nodes
        if self.features.ndim != 2 or self.features.shape[0] != n:
            raise DatasetError(f"features must have {n} rows, got shape {self.features.shape}")
        if self.features.shape[1] < 1:
            raise DatasetError("feature dimension must be at least 1")
        if not np.all(np.isfinite(self.features)):
            raise DatasetError("features contain NaN or infinite values")
        if self.labels.shape != (n,):
            raise DatasetError(f"expected {n} labels, got {self.labels.shape[0]}")
        if self.labels.min() < 0:
            raise DatasetError("labels must be nonnegative")
        if self.num_classes < 2:
            raise DatasetError("a dataset needs at least two classes")
        if self.names is not None and len(self.names) != self.num_classes:
            raise DatasetError(f"{len(self.names)} class names for {self.num_classes} classes")

    @property
    def num_nodes(self) -> int:
        return self.graph.num_nodes

    @property
    def num_classes(self) -> int:
        if self.names is not None:
            return len(self.names)
        return int(self.labels.max()) + 1

    def one_hot(self) -> np.ndarray:
        Y = np.zeros((self.num_nodes, self.num_classes))
        Y[np.arange(self.num_nodes), self.labels] = 1.0
        return Y


def _read_lines(path: Path) -> list[tuple[int, str]]:
    if not path.exists():
        raise DatasetError(f"missing dataset file: {path}")
    with open(path, encoding="utf-8") as fh:
        return [(i, line.strip()) for i, line in enumerate(fh, start=1) if line.strip()]


def _read_features(path: Path) -> np.ndarray:
    rows = []
    width = None
    for lineno, line in _read_lines(path):
        try:
            row = [float(tok) for tok in line.split()]
        except ValueError:
            raise DatasetError(f"{path}:{lineno}: malformed feature line") from None
        if width is None:
            width = len(row)
        elif len(row) != width:
            raise DatasetError(f"{path}:{lineno}: expected {width} values, got {len(row)}")
        if not all(np.isfinite(row)):
            raise DatasetError(f"{path}:{lineno}: non-finite feature value")
        rows.append(row)
    if not rows:
        raise DatasetError(f"{path}: no feature rows")
    return np.asarray(rows, dtype=np.float64)


def _read_ints(path: Path) -> np.ndarray:
    out = []
    for lineno, line in _read_lines(path):
        try:
            out.append(int(line))
        except ValueError:
            raise DatasetError(f"{path}:{lineno}: expected an integer, got {line!r}") from None
    return np.asarray(out, dtype=np.int64)


def load_dataset(path: str | Path) -> Dataset:
    d = Path(path)
    features = _read_features(d / "features.txt")
    labels = _read_ints(d / "labels.txt")
    n = features.shape[0]
    if labels.shape[0] != n:
        raise DatasetError(f"{d / 'labels.txt'}: {labels.shape[0]} labels for {n} feature rows")
    names = None
    if (d / "classes.txt").exists():
        names = tuple(line for _, line in _read_lines(d / "classes.txt"))
        bad = labels[(labels < 0) | (labels >= len(names))]
        if bad.size:
            raise DatasetError(f"label {bad[0]} out of range for {len(names)} classes")
    elif labels.size and labels.min() < 0:
        raise DatasetError(f"negative label {labels.min()} in {d / 'labels.txt'}")
    edges_path = d / "edges.tsv"
    if not edges_path.exists():
        raise DatasetError(f"missing dataset file: {edges_path}")
    try:
        graph = build_graph(read_edge_list(edges_path), n)
    except GraphError as exc:
        raise DatasetError(str(exc)) from exc
    return Dataset(graph, features, labels, names)


def write_dataset(ds: Dataset, path: str | Path) -> None:
    d = Path(path)
    d.mkdir(parents=True, exist_ok=True)
    with open(d / "edges.tsv", "w", encoding="utf-8", newline="\n") as fh:
        for s, t in ds.graph.edge_list():
            fh.write(f"{s}\t{t}\n")
    with open(d / "features.txt", "w", encoding="utf-8", newline="\n") as fh:
        for row in ds.features:
            fh.write(" ".join(repr(float(v)) for v in row) + "\n")
    with open(d / "labels.txt", "w", encoding="utf-8", newline="\n") as fh:
        fh.writelines(f"{int(v)}\n" for v in ds.labels)
    if ds.names is not None:
        with open(d / "classes.txt", "w", encoding="utf-8", newline="\n") as fh:
            fh.writelines(f"{name}\n" for name in ds.names)


def load_split(path: str | Path) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    d = Path(path)
    return tuple(_read_ints(d / f"{name}_idx.txt") for name in ("train", "val", "test"))


def write_split(path: str | Path, train: np.ndarray, val: np.ndarray, test: np.ndarray) -> None:
    d = Path(path)
    for name, idx in (("train", train), ("val", val), ("test", test)):
        with open(d / f"{name}_idx.txt", "w", encoding="utf-8", newline="\n") as fh:
            fh.writelines(f"{int(i)}\n" for i in idx)


@dataclass(frozen=True)
class SbmConfig:
    blocks: int = 4
    nodes_per_block: int = 100
    p_in: float = 0.1
    p_out: float = 0.01
    feature_dim: int = 16
    center_separation: float = 1.0
    feature_noise_sd: float = 1.0
    seed: int = 0

    def __post_init__(self) -> None:
        if self.blocks < 2 or self.nodes_per_block < 1:
            raise DatasetError("need at least 2 blocks with at least 1 node each")
        if not 0.0 <= self.p_out < self.p_in <= 1.0:
            raise DatasetError(f"need 0 <= p_out < p_in <= 1, got p_in={self.p_in}, p_out={self.p_out}")
        if self.feature_noise_sd < 0.0:
            raise DatasetError("feature noise sd must be nonnegative")
        if self.feature_dim < self.blocks:
            raise DatasetError(f"feature_dim {self.feature_dim} cannot hold {self.blocks} orthogonal centers")

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "SbmConfig":
        return cls(**json.loads(text))


def _sample_sbm(cfg: SbmConfig, seed: int) -> Dataset:
    rng = np.random.default_rng(seed)
    n = cfg.blocks * cfg.nodes_per_block
    labels = np.repeat(np.arange(cfg.blocks), cfg.nodes_per_block)
    iu, ju = np.triu_indices(n, k=1)
    same = labels[iu] == labels[ju]
    prob = np.where(same, cfg.p_in, cfg.p_out)
    keep = rng.random(iu.shape[0]) < prob
    edges = np.stack([iu[keep], ju[keep]], axis=1)
    centers = np.zeros((cfg.blocks, cfg.feature_dim))
    centers[np.arange(cfg.blocks), np.arange(cfg.blocks)] = cfg.center_separation
    features = centers[labels] + cfg.feature_noise_sd * rng.standard_normal((n, cfg.feature_dim))
    return Dataset(build_graph(edges, n), features, labels)


def generate_sbm(cfg: SbmConfig, require_connected: bool = False, max_tries: int = 20) -> Dataset:
    """Sample an SBM dataset; with ``require_connected`` retry on seeds seed, seed+1, ..."""
    for attempt in range(max_tries if require_connected else 1):
        ds = _sample_sbm(cfg, cfg.seed + attempt)
        if not require_connected or is_connected(ds.graph):
            return ds
    raise DatasetError(f"no connected SBM sample in {max_tries} seeds starting at {cfg.seed}")


def edge_homophily(ds: Dataset) -> float:
    e = ds.graph.edge_list()
    e = e[e[:, 0] != e[:, 1]]
    if e.shape[0] == 0:
        return float("nan")
    return float(np.mean(ds.labels[e[:, 0]] == ds.labels[e[:, 1]]))


def path3() -> Dataset:
    """The 3-node path 0-1-2 with two classes used throughout the tests."""
    g = build_graph([(0, 1), (1, 2)], 3)
    features = np.array([[1.0, 0.0], [0.0, 1.0], [1.0, 0.0]])
    return Dataset(g, features, np.array([0, 1, 0]))


def random_connected_graph(n: int, extra: int, rng: np.random.Generator, self_loops: bool = False) -> Graph:
    """Random recursive tree on ``n`` nodes plus ``extra`` uniformly drawn edges.

    The tree guarantees connectivity; extra edges may repeat or be loops.
    """
    if n <= 0:
        raise DatasetError("graph needs at least one node")
    edges = [(i, int(rng.integers(0, i))) for i in range(1, n)]
    if n > 1:
        edges += [tuple(int(v) for v in rng.integers(0, n, 2)) for _ in range(extra)]
    return build_graph(edges, n, add_self_loops=self_loops)
