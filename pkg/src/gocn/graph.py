"""Graph containers, symmetric normalization, kNN construction."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import make_rng

SYMMETRY_TOL = 1e-12


class GraphError(ValueError):
    pass


def _frozen(a) -> np.ndarray:
    arr = np.array(a, dtype=np.float64)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class Graph:
    """Undirected weighted graph: symmetric, non-negative, zero diagonal."""

    adjacency: np.ndarray

    def __post_init__(self):
        A = _frozen(self.adjacency)
        if A.ndim != 2 or A.shape[0] != A.shape[1]:
            raise GraphError(f"adjacency must be square, got shape {A.shape}")
        if not np.all(np.isfinite(A)):
            raise GraphError("adjacency has non-finite entries")
        if np.any(A < 0):
            raise GraphError("adjacency has negative entries")
        if np.any(np.diag(A) != 0):
            raise GraphError("adjacency diagonal must be zero")
        if A.size and np.max(np.abs(A - A.T)) > SYMMETRY_TOL:
            raise GraphError("adjacency is not symmetric")
        object.__setattr__(self, "adjacency", A)

    @property
    def n(self) -> int:
        return self.adjacency.shape[0]

    @property
    def num_edges(self) -> int:
        return int(np.count_nonzero(np.triu(self.adjacency)))

    @classmethod
    def from_edges(cls, n: int, edges, weights=None) -> Graph:
        """Build from an undirected edge list; duplicates keep the max weight, self-loops are dropped."""
        A = np.zeros((n, n))
        edges = np.asarray(edges, dtype=np.intp).reshape(-1, 2)
        w = np.ones(len(edges)) if weights is None else np.asarray(weights, dtype=np.float64)
        keep = edges[:, 0] != edges[:, 1]
        edges, w = edges[keep], w[keep]
        np.maximum.at(A, (edges[:, 0], edges[:, 1]), w)
        np.maximum.at(A, (edges[:, 1], edges[:, 0]), w)
        return cls(A)


@dataclass(frozen=True, eq=False)
class NormalizedGraph:
    a_hat: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "a_hat", _frozen(self.a_hat))

    @property
    def n(self) -> int:
        return self.a_hat.shape[0]


def normalize(g: Graph) -> NormalizedGraph:
    """``D^{-1/2} A D^{-1/2}``; isolated nodes get an all-zero row and column."""
    A = g.adjacency
    deg = A.sum(axis=1)
    inv_sqrt = np.zeros_like(deg)
    nz = deg > 0
    inv_sqrt[nz] = 1.0 / np.sqrt(deg[nz])
    a_hat = inv_sqrt[:, None] * A * inv_sqrt[None, :]
    # exact symmetry regardless of rounding order
    a_hat = 0.5 * (a_hat + a_hat.T)
    return NormalizedGraph(a_hat)


def pairwise_sq_distances(x: np.ndarray) -> np.ndarray:
    sq = np.sum(x * x, axis=1)
    d2 = sq[:, None] + sq[None, :] - 2.0 * (x @ x.T)
    np.maximum(d2, 0.0, out=d2)
    np.fill_diagonal(d2, 0.0)
    return d2


def knn_graph(features, k: int, sigma: float | None = None) -> Graph:
    """Gaussian-weighted kNN graph, symmetrized by elementwise max.

    ``sigma`` defaults to the mean distance from each node to its k nearest
    neighbours. Ties in distance are broken by lower node index.
    """
    X = np.asarray(features, dtype=np.float64)
    if X.ndim != 2:
        raise GraphError(f"features must be a matrix, got shape {X.shape}")
    n = X.shape[0]
    if not 1 <= k < n:
        raise GraphError(f"k must satisfy 1 <= k < n, got k={k}, n={n}")
    if not np.all(np.isfinite(X)):
        raise GraphError("features contain non-finite values")
    if sigma is not None and not sigma > 0:
        raise GraphError(f"sigma must be positive, got {sigma}")

    d2 = pairwise_sq_distances(X)
    np.fill_diagonal(d2, np.inf)
    nbrs = np.argsort(d2, axis=1, kind="stable")[:, :k]
    rows = np.repeat(np.arange(n), k)
    cols = nbrs.ravel()
    nd2 = d2[rows, cols]
    if sigma is None:
        sigma = float(np.mean(np.sqrt(nd2)))
        if sigma == 0.0:
            sigma = 1.0
    w = np.exp(-nd2 / (2.0 * sigma**2))

    A = np.zeros((n, n))
    A[rows, cols] = w
    A = np.maximum(A, A.T)
    np.fill_diagonal(A, 0.0)
    return Graph(A)


@dataclass(frozen=True)
class SpectralEstimate:
    value: float
    iterations: int
    converged: bool

    def __float__(self) -> float:
        return self.value


def spectral_radius_estimate(m, iterations: int = 1000, tol: float = 1e-12, seed: int = 0) -> SpectralEstimate:
    """Dominant eigenvalue magnitude by power iteration from a fixed random start.

    The growth ratio of two consecutive steps is used, so matrices whose top
    eigenvalues are ``+rho`` and ``-rho`` (bipartite graphs) still converge.
    """
    M = np.asarray(getattr(m, "data", m), dtype=np.float64)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise GraphError(f"spectral radius needs a square matrix, got {M.shape}")
    n = M.shape[0]
    if n == 0:
        return SpectralEstimate(0.0, 0, True)
    v = make_rng(seed).standard_normal(n)
    v /= np.linalg.norm(v)
    est = 0.0
    for it in range(1, iterations + 1):
        w = M @ (M @ v)
        nw = np.linalg.norm(w)
        if nw == 0.0:
            return SpectralEstimate(0.0, it, True)
        new = float(np.sqrt(nw))
        v = w / nw
        if abs(new - est) <= tol * max(new, 1.0):
            return SpectralEstimate(new, it, True)
        est = new
    return SpectralEstimate(est, iterations, False)
