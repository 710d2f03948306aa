"""Graph-optimized aggregation: objectives, block updates and the layer operators.

Everything here is written against the primitives in :mod:`gocn.tensor`, so
calling it with taped inputs records the full unrolled computation.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import tensor as tn
from .graph import NormalizedGraph, spectral_radius_estimate
from .tensor import Matrix, ShapeError

log = logging.getLogger(__name__)

RESIDUAL_FLOOR = 1e-12
MAX_CONDITION = 1e12


class ConfigError(ValueError):
    pass


class SingularSystemError(np.linalg.LinAlgError):
    pass


@dataclass(frozen=True)
class GocConfig:
    alpha: float = 0.9
    gamma: float = 20.0
    r: float = 2.0
    T: int = 2
    M: int = 3
    normalized_multi_s: bool = False
    mu: float | None = None

    def __post_init__(self):
        if not 0.0 < self.alpha < 1.0:
            raise ConfigError(f"alpha must lie in (0, 1), got {self.alpha}")
        expected = 1.0 / self.alpha - 1.0
        if self.mu is None:
            object.__setattr__(self, "mu", expected)
        elif abs(self.mu - expected) > 1e-12:
            raise ConfigError(f"mu must equal 1/alpha - 1 = {expected!r}, got {self.mu!r}")
        if self.gamma < 0:
            raise ConfigError(f"gamma must be non-negative, got {self.gamma}")
        if int(self.T) != self.T or self.T < 1:
            raise ConfigError(f"T must be a positive integer, got {self.T}")
        if int(self.M) != self.M or self.M < 1:
            raise ConfigError(f"M must be a positive integer, got {self.M}")

    def check_multi(self):
        if not self.r > 1.0:
            raise ConfigError(f"multi-graph propagation needs r > 1, got {self.r}")


@dataclass(frozen=True, eq=False)
class GraphWeights:
    """Simplex weights over the input graphs; entries may be taped scalars."""

    weights: tuple = field(default_factory=tuple)

    def __post_init__(self):
        w = self.values
        if len(w) == 0:
            raise ConfigError("graph weights cannot be empty")
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-10:
            raise ConfigError(f"graph weights must lie on the simplex, got {w}")

    @classmethod
    def uniform(cls, m: int) -> GraphWeights:
        return cls(tuple(Matrix(1.0 / m) for _ in range(m)))

    @classmethod
    def of(cls, values) -> GraphWeights:
        return cls(tuple(Matrix(float(v)) for v in values))

    @property
    def values(self) -> np.ndarray:
        return np.array([float(tn.as_matrix(x).data) for x in self.weights])

    def __len__(self) -> int:
        return len(self.weights)


def _a_hat(a) -> Matrix | np.ndarray:
    if isinstance(a, NormalizedGraph):
        return a.a_hat
    return a


def _shape(x) -> tuple[int, ...]:
    return tn.as_matrix(x).shape if not isinstance(x, np.ndarray) else x.shape


def _check_square(name: str, s, rows: int):
    sh = _shape(s)
    if len(sh) != 2 or sh[0] != sh[1] or sh[0] != rows:
        raise ShapeError(f"{name}: expected a {rows}x{rows} matrix, got {sh}")


def aggregate_gcn(a_hat, h) -> Matrix:
    """One-step aggregation ``A_hat H + H``."""
    a = _a_hat(a_hat)
    h = tn.as_matrix(h)
    _check_square("aggregate_gcn", a, h.rows)
    return tn.add(tn.matmul(a, h), h)


def regularizer_objective(s, h, z, mu: float) -> Matrix:
    """``Tr(Z^T (I - S) Z) + mu ||Z - H||_F^2``."""
    z = tn.as_matrix(z)
    _check_square("regularizer_objective", s, z.rows)
    smooth = tn.sub(tn.frobenius_norm_sq(z), tn.trace_quadratic(z, s))
    return tn.add(smooth, tn.scale(tn.frobenius_norm_sq(tn.sub(z, h)), mu))


def z_closed_form(s, h, alpha: float) -> Matrix:
    """Exact Z-block minimizer ``(1 - alpha)(I - alpha S)^{-1} H`` via a dense solve."""
    h = tn.as_matrix(h)
    n = h.rows
    _check_square("z_closed_form", s, n)
    system = tn.sub(np.eye(n), tn.scale(s, alpha))
    cond = np.linalg.cond(system.data)
    if not np.isfinite(cond) or cond > MAX_CONDITION:
        raise SingularSystemError(f"I - alpha*S is singular or ill-conditioned (condition ~ {cond:.3g})")
    z = tn.scale(tn.solve(system, h), 1.0 - alpha)
    resid = np.linalg.norm(system.data @ z.data - (1.0 - alpha) * h.data)
    if resid > 1e-8 * max(np.linalg.norm(h.data), 1e-300):
        raise SingularSystemError(f"linear solve residual too large: {resid:.3g}")
    return z


def z_power(s, h, alpha: float, T: int) -> Matrix:
    """``T`` steps of ``Z <- alpha S Z + (1 - alpha) H`` from ``Z = H``."""
    h = tn.as_matrix(h)
    _check_square("z_power", s, h.rows)
    base = tn.scale(h, 1.0 - alpha)
    z = h
    for _ in range(T):
        z = tn.add(tn.scale(tn.matmul(s, z), alpha), base)
    return z


def _gram_term(z, gamma: float) -> Matrix:
    z = tn.as_matrix(z)
    return tn.scale(tn.matmul(z, tn.transpose(z)), gamma / 2.0)


def s_update(a_hat, z, gamma: float) -> Matrix:
    """Closed-form S block: ``max(A_hat + (gamma/2) Z Z^T, 0)``."""
    a = _a_hat(a_hat)
    z = tn.as_matrix(z)
    _check_square("s_update", a, z.rows)
    return tn.relu(tn.add(a, _gram_term(z, gamma)))


def s_objective(a_hat, s, z, gamma: float) -> Matrix:
    """S-block objective ``||A_hat - S||_F^2 + gamma Tr(Z^T (I - S) Z)``."""
    a = _a_hat(a_hat)
    z = tn.as_matrix(z)
    smooth = tn.sub(tn.frobenius_norm_sq(z), tn.trace_quadratic(z, s))
    return tn.add(tn.frobenius_norm_sq(tn.sub(a, s)), tn.scale(smooth, gamma))


def goc_objective(a_hat, s, h, z, gamma: float, mu: float) -> Matrix:
    a = _a_hat(a_hat)
    return tn.add(tn.frobenius_norm_sq(tn.sub(a, s)), tn.scale(regularizer_objective(s, h, z, mu), gamma))


def _warn_if_expansive(s, alpha: float):
    if not log.isEnabledFor(logging.DEBUG):
        return
    rho = alpha * spectral_radius_estimate(tn.as_matrix(s).data, iterations=200).value
    if rho >= 1.0:
        log.debug("rho(alpha*S) = %.4g >= 1: power iteration no longer approximates the equilibrium", rho)


def phi_goc(a_hat, h, cfg: GocConfig) -> Matrix:
    """Alternate ``M`` times between the S update and ``T``-step Z propagation.

    The propagation restarts from the layer input ``h`` on every sweep; only
    the learned S carries information between sweeps.
    """
    a = _a_hat(a_hat)
    h = tn.as_matrix(h)
    _check_square("phi_goc", a, h.rows)
    z = h
    for _ in range(cfg.M):
        s = s_update(a, z, cfg.gamma)
        _warn_if_expansive(s, cfg.alpha)
        z = z_power(s, h, cfg.alpha, cfg.T)
    return z


def _check_graphs(a_hats: Sequence, n: int) -> list:
    if len(a_hats) == 0:
        raise ShapeError("at least one graph is required")
    mats = [_a_hat(a) for a in a_hats]
    for v, a in enumerate(mats):
        _check_square(f"graph {v}", a, n)
    return mats


def _weight_powers(w: GraphWeights, r: float) -> list[Matrix]:
    return [tn.power(x, r) for x in w.weights]


def s_update_multi(a_hats, w: GraphWeights, z, gamma: float, r: float, normalized: bool = False) -> Matrix:
    """S block over several graphs.

    ``normalized=False`` is ``max(sum_v w_v^r A_v + (gamma/2) Z Z^T, 0)``;
    ``normalized=True`` divides the inner sum by ``sum_v w_v^r`` first, which
    is the exact minimizer of the weighted S-block objective.
    """
    z = tn.as_matrix(z)
    mats = _check_graphs(a_hats, z.rows)
    if len(mats) != len(w):
        raise ShapeError(f"{len(mats)} graphs but {len(w)} weights")
    wr = _weight_powers(w, r)
    mix = tn.scale(mats[0], wr[0])
    for a, c in zip(mats[1:], wr[1:]):
        mix = tn.add(mix, tn.scale(a, c))
    inner = tn.add(mix, _gram_term(z, gamma))
    if normalized:
        total = wr[0]
        for c in wr[1:]:
            total = tn.add(total, c)
        inner = tn.scale(inner, tn.power(total, -1.0))
    return tn.relu(inner)


def graph_residuals(a_hats, s) -> list[Matrix]:
    """``||A_v - S||_F^2`` for each graph."""
    return [tn.frobenius_norm_sq(tn.sub(_a_hat(a), s)) for a in a_hats]


def w_update(a_hats, s, r: float) -> GraphWeights:
    """Closed-form simplex weights ``w_v ∝ (1 / ||A_v - S||^2)^{1/(r-1)}``.

    Residuals are floored at ``RESIDUAL_FLOOR`` so a graph that matches S
    exactly takes (almost) all of the weight instead of dividing by zero.
    """
    if not r > 1.0:
        raise ConfigError(f"w_update needs r > 1, got {r}")
    s = tn.as_matrix(s)
    mats = _check_graphs(a_hats, s.rows)
    return weights_from_residuals(graph_residuals(mats, s), r)


def weights_from_residuals(residuals: Sequence, r: float) -> GraphWeights:
    if not r > 1.0:
        raise ConfigError(f"weights need r > 1, got {r}")
    res = [tn.clip_min(tn.as_matrix(e), RESIDUAL_FLOOR) for e in residuals]
    # scale by the smallest residual first so that huge or tiny residuals
    # cannot overflow the 1/(r-1) power; the ratio is unchanged
    ref = float(min(float(e.data) for e in res))
    scores = [tn.power(tn.scale(e, 1.0 / ref), -1.0 / (r - 1.0)) for e in res]
    total = scores[0]
    for sc in scores[1:]:
        total = tn.add(total, sc)
    inv = tn.power(total, -1.0)
    return GraphWeights(tuple(tn.scale(sc, inv) for sc in scores))


def w_objective(residuals, w, r: float) -> float:
    """``sum_v w_v^r e_v`` evaluated on plain numbers."""
    e = np.asarray([float(tn.as_matrix(x).data) for x in residuals])
    wv = w.values if isinstance(w, GraphWeights) else np.asarray(w, dtype=np.float64)
    return float(np.sum(wv**r * e))


def mgoc_objective(a_hats, w: GraphWeights, s, h, z, gamma: float, mu: float, r: float) -> Matrix:
    z = tn.as_matrix(z)
    mats = _check_graphs(a_hats, z.rows)
    if len(mats) != len(w):
        raise ShapeError(f"{len(mats)} graphs but {len(w)} weights")
    terms = [tn.scale(e, tn.power(c, r)) for e, c in zip(graph_residuals(mats, s), w.weights)]
    total = terms[0]
    for t in terms[1:]:
        total = tn.add(total, t)
    return tn.add(total, tn.scale(regularizer_objective(s, h, z, mu), gamma))


@dataclass
class MultiTrace:
    """Side outputs of :func:`phi_mgoc`: the weights after the last sweep."""

    weights: GraphWeights | None = None


def phi_mgoc(a_hats, h, cfg: GocConfig, trace: MultiTrace | None = None) -> Matrix:
    """Multi-graph alternation: per sweep update S, then Z, then w.

    Weights start uniform on every call.
    """
    cfg.check_multi()
    h = tn.as_matrix(h)
    mats = _check_graphs(a_hats, h.rows)
    w = GraphWeights.uniform(len(mats))
    z = h
    for _ in range(cfg.M):
        s = s_update_multi(mats, w, z, cfg.gamma, cfg.r, cfg.normalized_multi_s)
        _warn_if_expansive(s, cfg.alpha)
        z = z_power(s, h, cfg.alpha, cfg.T)
        w = w_update(mats, s, cfg.r)
    if trace is not None:
        trace.weights = w
    return z
