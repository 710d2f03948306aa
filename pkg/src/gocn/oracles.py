"""Slow, independent reference computations used by the test suite and ``gocn check``.

Nothing here touches :mod:`gocn.tensor`; each oracle reaches its answer by a
different route than the production code (loops, series, iterative descent,
exhaustive search, eigendecomposition).
"""

from __future__ import annotations

import itertools

import numpy as np


def matmul_loops(a, b) -> np.ndarray:
    a, b = np.asarray(a, float), np.asarray(b, float)
    n, k = a.shape
    k2, m = b.shape
    assert k == k2
    out = np.zeros((n, m))
    for i in range(n):
        for j in range(m):
            acc = 0.0
            for t in range(k):
                acc += a[i, t] * b[t, j]
            out[i, j] = acc
    return out


def normalize_loops(adj) -> np.ndarray:
    adj = np.asarray(adj, float)
    n = adj.shape[0]
    deg = [sum(adj[i]) for i in range(n)]
    out = np.zeros((n, n))
    for i in range(n):
        for j in range(n):
            if deg[i] > 0 and deg[j] > 0:
                out[i, j] = adj[i, j] / np.sqrt(deg[i] * deg[j])
    return out


def spectral_radius_eig(m) -> float:
    return float(np.max(np.abs(np.linalg.eigvals(np.asarray(m, float)))))


def neumann_z(s, h, alpha: float, terms: int = 200) -> np.ndarray:
    """``sum_{i<terms} (1-alpha) (alpha S)^i H``."""
    s, h = np.asarray(s, float), np.asarray(h, float)
    term = (1.0 - alpha) * h
    out = term.copy()
    for _ in range(1, terms):
        term = alpha * (s @ term)
        out += term
    return out


def power_expansion_z(s, h, alpha: float, T: int) -> np.ndarray:
    """``[(alpha S)^T + (1-alpha) sum_{i<T} (alpha S)^i] H`` with explicit matrix powers."""
    s, h = np.asarray(s, float), np.asarray(h, float)
    n = s.shape[0]
    a = alpha * s
    acc = np.zeros((n, n))
    for i in range(T):
        acc += np.linalg.matrix_power(a, i)
    return (np.linalg.matrix_power(a, T) + (1.0 - alpha) * acc) @ h


def s_block_objective(a_hats, weights, s, z, gamma: float, r: float = 1.0) -> float:
    """``sum_v w_v^r ||A_v - S||^2 + gamma Tr(Z^T (I - S) Z)``."""
    z = np.asarray(z, float)
    n = z.shape[0]
    val = sum(w**r * np.sum((np.asarray(a) - s) ** 2) for a, w in zip(a_hats, weights))
    return float(val + gamma * np.trace(z.T @ (np.eye(n) - s) @ z))


def projected_gradient_s(a_hats, weights, z, gamma: float, r: float = 1.0, steps: int = 10_000, lr: float = 1e-3):
    """Minimize the S-block objective over symmetric non-negative S by projected gradient descent."""
    z = np.asarray(z, float)
    n = z.shape[0]
    wr = [w**r for w in weights]
    s = np.zeros((n, n))
    zz = z @ z.T
    for _ in range(steps):
        g = sum(2.0 * c * (s - np.asarray(a)) for a, c in zip(a_hats, wr)) - gamma * zz
        s = s - lr * g
        s = 0.5 * (s + s.T)
        s = np.maximum(s, 0.0)
    return s


def simplex_grid(m: int, step: float = 0.01):
    """All points of the probability simplex on a regular grid."""
    k = int(round(1.0 / step))
    for combo in itertools.product(range(k + 1), repeat=m - 1):
        rest = k - sum(combo)
        if rest >= 0:
            yield np.array([*combo, rest], dtype=float) / k


def grid_min_w_objective(residuals, r: float, step: float = 0.01) -> tuple[float, np.ndarray]:
    e = np.asarray(residuals, float)
    best, arg = np.inf, None
    for w in simplex_grid(len(e), step):
        val = float(np.sum(w**r * e))
        if val < best:
            best, arg = val, w
    return best, arg


def finite_diff_grad(f, x, step: float = 1e-5) -> np.ndarray:
    x = np.array(x, float)
    out = np.zeros_like(x)
    for idx in np.ndindex(*x.shape):
        xp, xm = x.copy(), x.copy()
        xp[idx] += step
        xm[idx] -= step
        out[idx] = (f(xp) - f(xm)) / (2 * step)
    return out


def algorithm1_transcription(a_hat, h, alpha=0.9, gamma=20.0, T=2, M=3) -> np.ndarray:
    """Straight-line GOC layer propagation, explicit powers, no shared code."""
    a_hat, h = np.asarray(a_hat, float), np.asarray(h, float)
    n = h.shape[0]
    z = h.copy()
    for _ in range(M):
        s = np.maximum(a_hat + (gamma / 2.0) * (z @ z.T), 0.0)
        series = sum(np.linalg.matrix_power(alpha * s, i) for i in range(T))
        z = (np.linalg.matrix_power(alpha * s, T) + (1.0 - alpha) * series) @ h
        assert z.shape == (n, h.shape[1])
    return z


def algorithm2_transcription(a_hats, h, alpha=0.9, gamma=20.0, r=2.0, T=2, M=3, normalized=False):
    """Straight-line multi-graph propagation; returns ``(Z, w)``."""
    a_hats = [np.asarray(a, float) for a in a_hats]
    h = np.asarray(h, float)
    m = len(a_hats)
    w = np.full(m, 1.0 / m)
    z = h.copy()
    for _ in range(M):
        inner = sum(w[v] ** r * a_hats[v] for v in range(m)) + (gamma / 2.0) * (z @ z.T)
        if normalized:
            inner = inner / np.sum(w**r)
        s = np.maximum(inner, 0.0)
        series = sum(np.linalg.matrix_power(alpha * s, i) for i in range(T))
        z = (np.linalg.matrix_power(alpha * s, T) + (1.0 - alpha) * series) @ h
        res = np.array([max(np.sum((a - s) ** 2), 1e-12) for a in a_hats])
        score = (1.0 / res) ** (1.0 / (r - 1.0))
        w = score / score.sum()
    return z, w


def random_symmetric(rng, n: int, radius: float | None = None) -> np.ndarray:
    """Symmetric Gaussian matrix, optionally rescaled to a given spectral radius."""
    x = rng.standard_normal((n, n))
    s = 0.5 * (x + x.T)
    if radius is not None:
        s *= radius / spectral_radius_eig(s)
    return s


def random_graph_adjacency(rng, n: int, p: float = 0.5) -> np.ndarray:
    upper = np.triu((rng.random((n, n)) < p) * rng.uniform(0.5, 1.5, (n, n)), 1)
    return upper + upper.T
