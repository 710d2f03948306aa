"""Dataset container, plain-text directory format, splits, synthetic blobs.

Directory layout (UTF-8, whitespace separated, one record per line)::

    meta.txt        n=<int> d=<int> c=<int> m=<int>   (one key per line)
    features.txt    n rows of d floats
    labels.txt      n integers in [0, c)
    graph_<v>.txt   "src dst [weight]" for v = 1..m, 0-based ids, weight 1.0 by default
    split.txt       optional, "<node-id> train|val|test"
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Sequence

import numpy as np

from .graph import Graph, NormalizedGraph, knn_graph, normalize


class DataError(ValueError):
    pass


@dataclass(frozen=True)
class Split:
    train: tuple[int, ...]
    val: tuple[int, ...]
    test: tuple[int, ...]

    def __post_init__(self):
        for name in ("train", "val", "test"):
            object.__setattr__(self, name, tuple(sorted(int(i) for i in getattr(self, name))))
        tr, va, te = set(self.train), set(self.val), set(self.test)
        if len(tr) != len(self.train) or len(va) != len(self.val) or len(te) != len(self.test):
            raise DataError("split contains duplicate node ids")
        if tr & va or tr & te or va & te:
            raise DataError("train/val/test sets overlap")
        if not self.train:
            raise DataError("training set is empty")

    def validate(self, n: int):
        for name in ("train", "val", "test"):
            ids = getattr(self, name)
            if ids and (ids[0] < 0 or ids[-1] >= n):
                raise DataError(f"{name} split references a node outside [0, {n})")

    @property
    def sizes(self) -> tuple[int, int, int]:
        return len(self.train), len(self.val), len(self.test)


@dataclass(frozen=True, eq=False)
class Dataset:
    features: np.ndarray
    labels: np.ndarray
    num_classes: int
    graphs: tuple[Graph, ...]
    name: str = "dataset"
    split: Split | None = None

    def __post_init__(self):
        X = np.array(self.features, dtype=np.float64)
        if X.ndim != 2:
            raise DataError(f"features must be a matrix, got shape {X.shape}")
        if not np.all(np.isfinite(X)):
            raise DataError("features contain non-finite values")
        X.setflags(write=False)
        y = np.array(self.labels, dtype=np.int64)
        y.setflags(write=False)
        n = X.shape[0]
        if y.shape != (n,):
            raise DataError(f"expected {n} labels, got shape {y.shape}")
        c = int(self.num_classes)
        if n and (y.min() < 0 or y.max() >= c):
            raise DataError(f"labels must lie in [0, {c})")
        missing = sorted(set(range(c)) - set(np.unique(y).tolist()))
        if missing:
            raise DataError(f"classes without any node: {missing}")
        graphs = tuple(self.graphs)
        if not graphs:
            raise DataError("dataset needs at least one graph")
        for v, g in enumerate(graphs):
            if g.n != n:
                raise DataError(f"graph {v + 1} has {g.n} nodes, features have {n}")
        if self.split is not None:
            self.split.validate(n)
        object.__setattr__(self, "features", X)
        object.__setattr__(self, "labels", y)
        object.__setattr__(self, "num_classes", c)
        object.__setattr__(self, "graphs", graphs)

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def d(self) -> int:
        return self.features.shape[1]

    @property
    def m(self) -> int:
        return len(self.graphs)

    @cached_property
    def normalized_graphs(self) -> tuple[NormalizedGraph, ...]:
        return tuple(normalize(g) for g in self.graphs)

    def class_counts(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.num_classes)


def row_normalize(x: np.ndarray) -> np.ndarray:
    """Scale each row to unit sum; all-zero rows stay zero."""
    x = np.asarray(x, dtype=np.float64)
    s = x.sum(axis=1, keepdims=True)
    out = np.zeros_like(x)
    np.divide(x, s, out=out, where=s != 0)
    return out


def with_features(ds: Dataset, features: np.ndarray) -> Dataset:
    return Dataset(features, ds.labels, ds.num_classes, ds.graphs, ds.name, ds.split)


# --------------------------------------------------------------------------
# text format


def _lines(path: Path):
    if not path.exists():
        raise DataError(f"{path}: missing file")
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if line and not line.startswith("#"):
                yield lineno, line.split()


def _read_meta(path: Path) -> dict[str, int]:
    meta = {}
    for lineno, toks in _lines(path):
        for tok in toks:
            key, sep, val = tok.partition("=")
            if not sep:
                raise DataError(f"{path}:{lineno}: expected key=value, got {tok!r}")
            try:
                meta[key] = int(val)
            except ValueError:
                raise DataError(f"{path}:{lineno}: {key} must be an integer, got {val!r}") from None
    for key in ("n", "d", "c", "m"):
        if key not in meta:
            raise DataError(f"{path}: missing {key}=")
    return meta


def _read_features(path: Path, n: int, d: int) -> np.ndarray:
    X = np.empty((n, d))
    row = 0
    for lineno, toks in _lines(path):
        if row >= n:
            raise DataError(f"{path}:{lineno}: more than n={n} rows")
        if len(toks) != d:
            raise DataError(f"{path}:{lineno}: expected {d} values, got {len(toks)}")
        try:
            vals = [float(t) for t in toks]
        except ValueError as e:
            raise DataError(f"{path}:{lineno}: {e}") from None
        if not all(math.isfinite(v) for v in vals):
            raise DataError(f"{path}:{lineno}: non-finite feature value")
        X[row] = vals
        row += 1
    if row != n:
        raise DataError(f"{path}: expected {n} rows, got {row}")
    return X


def _read_labels(path: Path, n: int, c: int) -> np.ndarray:
    y = []
    for lineno, toks in _lines(path):
        if len(toks) != 1:
            raise DataError(f"{path}:{lineno}: expected one label per line")
        try:
            lab = int(toks[0])
        except ValueError:
            raise DataError(f"{path}:{lineno}: label must be an integer, got {toks[0]!r}") from None
        if not 0 <= lab < c:
            raise DataError(f"{path}:{lineno}: label {lab} outside [0, {c})")
        y.append(lab)
    if len(y) != n:
        raise DataError(f"{path}: expected {n} labels, got {len(y)}")
    return np.asarray(y, dtype=np.int64)


def _read_graph(path: Path, n: int) -> Graph:
    edges, weights = [], []
    for lineno, toks in _lines(path):
        if len(toks) not in (2, 3):
            raise DataError(f"{path}:{lineno}: expected 'src dst [weight]'")
        try:
            i, j = int(toks[0]), int(toks[1])
            w = float(toks[2]) if len(toks) == 3 else 1.0
        except ValueError as e:
            raise DataError(f"{path}:{lineno}: {e}") from None
        if not (0 <= i < n and 0 <= j < n):
            raise DataError(f"{path}:{lineno}: node id out of range [0, {n})")
        if not math.isfinite(w) or w < 0:
            raise DataError(f"{path}:{lineno}: edge weight must be finite and non-negative")
        edges.append((i, j))
        weights.append(w)
    return Graph.from_edges(n, np.asarray(edges, dtype=np.intp).reshape(-1, 2), weights)


def _read_split(path: Path, n: int) -> Split:
    parts: dict[str, list[int]] = {"train": [], "val": [], "test": []}
    for lineno, toks in _lines(path):
        if len(toks) != 2 or toks[1] not in parts:
            raise DataError(f"{path}:{lineno}: expected '<node-id> train|val|test'")
        try:
            i = int(toks[0])
        except ValueError:
            raise DataError(f"{path}:{lineno}: bad node id {toks[0]!r}") from None
        if not 0 <= i < n:
            raise DataError(f"{path}:{lineno}: node id out of range [0, {n})")
        parts[toks[1]].append(i)
    return Split(**parts)


def load_dataset(directory) -> Dataset:
    root = Path(directory)
    if not root.is_dir():
        raise DataError(f"{root}: not a directory")
    meta = _read_meta(root / "meta.txt")
    n, d, c, m = meta["n"], meta["d"], meta["c"], meta["m"]
    if m < 1:
        raise DataError(f"{root / 'meta.txt'}: m must be at least 1")
    X = _read_features(root / "features.txt", n, d)
    y = _read_labels(root / "labels.txt", n, c)
    graphs = tuple(_read_graph(root / f"graph_{v}.txt", n) for v in range(1, m + 1))
    split = _read_split(root / "split.txt", n) if (root / "split.txt").exists() else None
    return Dataset(X, y, c, graphs, name=root.name, split=split)


def write_dataset(ds: Dataset, directory, split: Split | None = None) -> Path:
    root = Path(directory)
    root.mkdir(parents=True, exist_ok=True)
    (root / "meta.txt").write_text(f"n={ds.n}\nd={ds.d}\nc={ds.num_classes}\nm={ds.m}\n", encoding="utf-8")
    with open(root / "features.txt", "w", encoding="utf-8") as fh:
        for row in ds.features:
            fh.write(" ".join(repr(float(v)) for v in row) + "\n")
    (root / "labels.txt").write_text("".join(f"{int(v)}\n" for v in ds.labels), encoding="utf-8")
    for v, g in enumerate(ds.graphs, 1):
        iu, ju = np.nonzero(np.triu(g.adjacency))
        with open(root / f"graph_{v}.txt", "w", encoding="utf-8") as fh:
            for i, j in zip(iu, ju):
                fh.write(f"{i} {j} {float(g.adjacency[i, j])!r}\n")
    split = split if split is not None else ds.split
    if split is not None:
        with open(root / "split.txt", "w", encoding="utf-8") as fh:
            for name in ("train", "val", "test"):
                for i in getattr(split, name):
                    fh.write(f"{i} {name}\n")
    return root


# --------------------------------------------------------------------------
# splits

CITATION_PER_CLASS = 20
CITATION_VAL = 300
CITATION_TEST = 1000


def make_citation_split(
    ds: Dataset,
    rng: np.random.Generator,
    per_class: int = CITATION_PER_CLASS,
    n_val: int = CITATION_VAL,
    n_test: int = CITATION_TEST,
) -> Split:
    """``per_class`` labelled nodes per class, then ``n_val`` / ``n_test`` from the rest."""
    counts = ds.class_counts()
    small = [k for k, cnt in enumerate(counts) if cnt < per_class]
    if small:
        raise DataError(f"classes {small} have fewer than {per_class} nodes")
    need = per_class * ds.num_classes + n_val + n_test
    if ds.n < need:
        raise DataError(f"dataset has {ds.n} nodes, citation split needs at least {need}")
    train = []
    for k in range(ds.num_classes):
        members = np.flatnonzero(ds.labels == k)
        train.extend(rng.choice(members, size=per_class, replace=False).tolist())
    rest = np.setdiff1d(np.arange(ds.n), train)
    rest = rng.permutation(rest)
    return Split(train, rest[:n_val].tolist(), rest[n_val : n_val + n_test].tolist())


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def make_ratio_split(ds: Dataset, labeled_fraction: float, val_fraction: float, rng: np.random.Generator) -> Split:
    """Class-stratified labelled sample, then a uniform validation draw from the rest.

    Per class the labelled count is ``round_half_up(fraction * class_size)``;
    the validation count is ``round_half_up(val_fraction * n)``.
    """
    if not (0 < labeled_fraction < 1 and 0 < val_fraction < 1 and labeled_fraction + val_fraction < 1):
        raise DataError("fractions must lie in (0, 1) and sum to less than 1")
    train = []
    for k, cnt in enumerate(ds.class_counts()):
        take = _round_half_up(labeled_fraction * cnt)
        if take == 0:
            raise DataError(f"class {k} ({cnt} nodes) gets no labelled node at fraction {labeled_fraction}")
        if take >= cnt:
            raise DataError(f"class {k} ({cnt} nodes) would be entirely labelled at fraction {labeled_fraction}")
        members = np.flatnonzero(ds.labels == k)
        train.extend(rng.choice(members, size=take, replace=False).tolist())
    rest = rng.permutation(np.setdiff1d(np.arange(ds.n), train))
    n_val = min(_round_half_up(val_fraction * ds.n), len(rest))
    return Split(train, rest[:n_val].tolist(), rest[n_val:].tolist())


# --------------------------------------------------------------------------
# synthetic data

SEPARATION = 10.0
# small enough that (gamma/2) Z Z^T stays a mild perturbation at gamma = 20
DEFAULT_SCALE = 1e-3


def synth_blobs(
    n: int,
    d: int,
    c: int,
    m: int,
    noise,
    k: int,
    rng: np.random.Generator,
    scale: float = DEFAULT_SCALE,
    name: str = "blobs",
) -> Dataset:
    """Gaussian clusters plus ``m`` kNN graphs over independently perturbed copies.

    Within-cluster standard deviation is ``scale``; cluster centres sit
    ``SEPARATION * scale`` apart. Graph v is built from the features plus
    Gaussian noise of standard deviation ``noise[v] * scale`` per coordinate,
    so larger noise gives graphs with more cross-class edges. The stored
    features are the unperturbed ones.
    """
    if n <= 0 or d <= 0 or c <= 0 or m < 1:
        raise DataError("n, d, c must be positive and m >= 1")
    if n % c:
        raise DataError(f"n={n} is not divisible by c={c}")
    if not scale > 0:
        raise DataError("scale must be positive")
    noise = [float(noise)] * m if np.ndim(noise) == 0 else [float(v) for v in noise]
    if len(noise) != m or any(v < 0 for v in noise):
        raise DataError(f"need {m} non-negative noise levels, got {noise}")

    sep = SEPARATION * scale
    if d >= c:
        # orthogonal directions: every pair of centres is exactly sep apart
        centres = np.zeros((c, d))
        centres[np.arange(c), np.arange(c)] = sep / math.sqrt(2.0)
    else:
        dirs = rng.standard_normal((c, d))
        centres = sep * dirs / np.linalg.norm(dirs, axis=1, keepdims=True)
    labels = np.repeat(np.arange(c), n // c)
    X = centres[labels] + scale * rng.standard_normal((n, d))
    graphs = []
    for level in noise:
        Xv = X + level * scale * rng.standard_normal((n, d))
        graphs.append(knn_graph(Xv, k))
    return Dataset(X, labels, c, tuple(graphs), name=name)


def same_class_edge_fraction(g: Graph, labels: Sequence[int]) -> float:
    labels = np.asarray(labels)
    iu, ju = np.nonzero(np.triu(g.adjacency))
    if len(iu) == 0:
        return 0.0
    return float(np.mean(labels[iu] == labels[ju]))
