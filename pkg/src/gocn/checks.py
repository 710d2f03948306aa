"""Named oracle and invariant checks behind ``gocn check``.

Every check runs with fixed seeds, compares production code against an
independent computation from :mod:`gocn.oracles`, and returns a
:class:`CheckResult`. ``tolerance`` overrides the check's default bound.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import oracles
from . import propagation as pg
from . import tensor as tn
from .datasets import Dataset
from .graph import Graph, normalize, spectral_radius_estimate
from .model import ModelConfig, cross_entropy_loss, forward, init_params
from .propagation import GocConfig, GraphWeights
from .tensor import finite_diff_check, make_rng


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    value: float
    tolerance: float
    detail: str = ""

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        extra = f" ({self.detail})" if self.detail else ""
        return f"{status} {self.name}: {self.value:.3g} <= {self.tolerance:.3g}{extra}"


def _result(name, value, tol, detail=""):
    return CheckResult(name, bool(value <= tol), float(value), float(tol), detail)


def _a_hat(rng, n, p=0.5):
    return normalize(Graph(oracles.random_graph_adjacency(rng, n, p))).a_hat


def check_normalize(tol=None):
    tol = 1e-12 if tol is None else tol
    rng = make_rng(101)
    worst = 0.0
    for n in (2, 5, 9):
        adj = oracles.random_graph_adjacency(rng, n, 0.5)
        worst = max(worst, np.max(np.abs(normalize(Graph(adj)).a_hat - oracles.normalize_loops(adj))))
    return _result("normalize", worst, tol, "vs explicit loops")


def check_spectral_radius(tol=None):
    tol = 1e-6 if tol is None else tol
    rng = make_rng(102)
    worst = 0.0
    for n in (3, 8, 15):
        a = _a_hat(rng, n, 0.4)
        worst = max(worst, abs(spectral_radius_estimate(a).value - oracles.spectral_radius_eig(a)))
    return _result("spectral_radius", worst, tol, "vs eigendecomposition")


def check_tensor_gradients(tol=None):
    tol = 1e-4 if tol is None else tol
    rng = make_rng(103)
    A = rng.uniform(-1, 1, (4, 3))
    W = rng.uniform(-1, 1, (4, 2))
    spd = rng.standard_normal((4, 4))
    spd = spd @ spd.T + 4 * np.eye(4)
    fns = [
        lambda x: tn.sum_all(tn.hadamard(tn.row_softmax(tn.matmul(A, x)), W)),
        lambda x: tn.trace_quadratic(x, spd),
        lambda x: tn.sum_all(tn.solve(spd, x)),
        lambda x: tn.sum_all(tn.log(tn.add(tn.hadamard(x, x), np.ones(x.shape)))),
    ]
    x0 = rng.uniform(0.1, 1.0, (3, 2))
    shapes = [(3, 2), (4, 2), (4, 2), (3, 2)]
    worst = 0.0
    for f, shape in zip(fns, shapes):
        x = x0 if shape == (3, 2) else rng.uniform(0.1, 1.0, shape)
        worst = max(worst, finite_diff_check(f, x, tolerance=tol).max_rel_error)
    return _result("tensor_gradients", worst, tol, "relative, central differences")


def check_z_closed_form(tol=None):
    tol = 1e-8 if tol is None else tol
    rng = make_rng(104)
    worst = 0.0
    for _ in range(5):
        S = oracles.random_symmetric(rng, 6, radius=0.5)
        H = rng.standard_normal((6, 2))
        worst = max(worst, np.max(np.abs(pg.z_closed_form(S, H, 0.9).data - oracles.neumann_z(S, H, 0.9))))
    return _result("z_closed_form", worst, tol, "vs truncated Neumann series")


def check_z_power(tol=None):
    """Relative error at T = 50 for rho(alpha S) <= 0.5, plus monotone decay."""
    tol = 1e-6 if tol is None else tol
    rng = make_rng(105)
    worst, monotone = 0.0, True
    for _ in range(10):
        S = oracles.random_symmetric(rng, 6, radius=0.5 / 0.9)
        H = rng.standard_normal((6, 3))
        exact = pg.z_closed_form(S, H, 0.9).data
        errs = [np.linalg.norm(pg.z_power(S, H, 0.9, T).data - exact) / np.linalg.norm(exact) for T in (1, 2, 5, 10, 50)]
        monotone &= all(b <= a for a, b in zip(errs, errs[1:]))
        worst = max(worst, errs[-1])
    res = _result("z_power", worst, tol, "rho(alpha S) = 0.5, T = 50")
    if not monotone:
        return CheckResult(res.name, False, res.value, res.tolerance, "error not monotone in T")
    return res


def check_s_update(tol=None):
    tol = 1e-6 if tol is None else tol
    rng = make_rng(106)
    worst = -math.inf
    for _ in range(5):
        a = _a_hat(rng, 5)
        Z = rng.standard_normal((5, 2))
        ours = pg.s_update(a, Z, 2.0).data
        ref = oracles.projected_gradient_s([a], [1.0], Z, 2.0)
        gap = oracles.s_block_objective([a], [1.0], ours, Z, 2.0) - oracles.s_block_objective([a], [1.0], ref, Z, 2.0)
        worst = max(worst, gap)
    return _result("s_update", worst, tol, "objective gap vs projected gradient")


def check_s_update_multi(tol=None):
    tol = 1e-6 if tol is None else tol
    rng = make_rng(107)
    worst = -math.inf
    for _ in range(3):
        mats = [_a_hat(rng, 5), _a_hat(rng, 5)]
        w = rng.dirichlet([1.0, 1.0])
        Z = rng.standard_normal((5, 2))
        ours = pg.s_update_multi(mats, GraphWeights.of(w), Z, 2.0, 2.0, normalized=True).data
        ref = oracles.projected_gradient_s(mats, w, Z, 2.0, r=2.0, steps=40_000)
        gap = oracles.s_block_objective(mats, w, ours, Z, 2.0, 2.0) - oracles.s_block_objective(mats, w, ref, Z, 2.0, 2.0)
        worst = max(worst, gap)
    return _result("s_update_multi", worst, tol, "normalized variant, objective gap")


def check_w_update(tol=None):
    tol = 1e-10 if tol is None else tol
    rng = make_rng(108)
    worst = -math.inf
    for m in (2, 3):
        for _ in range(5):
            S = np.abs(oracles.random_symmetric(rng, 4))
            mats = [_a_hat(rng, 4) for _ in range(m)]
            res = pg.graph_residuals(mats, S)
            best, _ = oracles.grid_min_w_objective([float(e) for e in res], 2.0, 0.01)
            worst = max(worst, pg.w_objective(res, pg.w_update(mats, S, 2.0), 2.0) - best)
    exact = pg.weights_from_residuals([1.0, 4.0], 2.0).values.tolist() == [0.8, 0.2]
    res = _result("w_update", worst, tol, "objective minus best simplex grid point")
    if not exact:
        return CheckResult(res.name, False, res.value, res.tolerance, "(1, 4) did not give (0.8, 0.2)")
    return res


def check_monotonicity(tol=None):
    tol = 1e-10 if tol is None else tol
    rng = make_rng(109)
    alpha, gamma = 0.9, 1.0
    mu = 1 / alpha - 1
    worst = -math.inf
    for _ in range(3):
        a = _a_hat(rng, 6)
        H = 0.05 * rng.standard_normal((6, 2))
        Z, prev = H, math.inf
        for _ in range(10):
            S = pg.s_update(a, Z, gamma).data
            Z = pg.z_closed_form(S, H, alpha).data
            val = float(pg.goc_objective(a, S, H, Z, gamma, mu))
            worst = max(worst, val - prev)
            prev = val
    return _result("monotonicity", max(worst, 0.0), tol, "largest objective increase, exact sweeps")


def check_phi_goc(tol=None):
    tol = 1e-10 if tol is None else tol
    a = normalize(Graph.from_edges(3, [(0, 1), (1, 2)])).a_hat
    out = pg.phi_goc(a, np.eye(3), GocConfig()).data
    ref = oracles.algorithm1_transcription(a, np.eye(3))
    return _result("phi_goc", float(np.max(np.abs(out - ref) / np.abs(ref))), tol, "vs straight-line transcription")


def check_phi_mgoc(tol=None):
    tol = 1e-10 if tol is None else tol
    rng = make_rng(110)
    mats = [_a_hat(rng, 3, 0.8) for _ in range(2)]
    H = 0.2 * rng.standard_normal((3, 2))
    trace = pg.MultiTrace()
    out = pg.phi_mgoc(mats, H, GocConfig(), trace).data
    z_ref, w_ref = oracles.algorithm2_transcription(mats, H)
    err = max(np.max(np.abs(out - z_ref) / np.abs(z_ref)), np.max(np.abs(trace.weights.values - w_ref)))
    return _result("phi_mgoc", float(err), tol, "vs straight-line transcription")


def check_gcn_reduction(tol=None):
    tol = 0.0 if tol is None else tol
    rng = make_rng(111)
    a = _a_hat(rng, 7)
    H = rng.standard_normal((7, 3))
    err = np.max(np.abs(pg.z_power(a, H, 0.5, 1).data - 0.5 * pg.aggregate_gcn(a, H).data))
    return _result("gcn_reduction", float(err), tol, "z_power(alpha=0.5, T=1) vs half GCN step")


def random_dataset(rng, n=6, d=3, c=2, m=1) -> Dataset:
    """Small positive-feature dataset whose propagation stays far from relu kinks."""
    X = rng.uniform(0.005, 0.03, (n, d))
    y = np.arange(n) % c
    graphs = tuple(Graph(oracles.random_graph_adjacency(rng, n, 0.6)) for _ in range(m))
    return Dataset(X, y, c, graphs, name="random")


def end_to_end_gradcheck(
    variant: str,
    m: int,
    seed: int = 0,
    tolerance: float = 1e-4,
    hidden: int = 4,
    goc: GocConfig | None = None,
):
    """Finite-difference reports for the training loss w.r.t. every Theta."""
    rng = make_rng(seed)
    ds = random_dataset(rng, m=m)
    cfg = ModelConfig(variant=variant, layer_dims=(ds.d, hidden, ds.num_classes), goc=goc or GocConfig())
    p = init_params(cfg, rng)
    train_set = list(range(ds.n - 2))
    reports = []
    for k in range(len(p.thetas)):

        def f(theta, k=k):
            thetas = list(p.thetas)
            thetas[k] = theta
            return cross_entropy_loss(forward(cfg, thetas, ds), ds.labels, train_set)

        reports.append(finite_diff_check(f, p.thetas[k], tolerance=tolerance))
    return reports


def check_end_to_end_gradients(tol=None):
    tol = 1e-4 if tol is None else tol
    worst = 0.0
    for variant, m in (("gcn", 1), ("gocn", 1), ("mgocn", 3)):
        for rep in end_to_end_gradcheck(variant, m, seed=112, tolerance=tol):
            worst = max(worst, rep.max_rel_error)
    return _result("end_to_end_gradients", worst, tol, "2-layer networks on 6 nodes")


CHECKS: dict[str, Callable[[float | None], CheckResult]] = {
    "normalize": check_normalize,
    "spectral_radius": check_spectral_radius,
    "tensor_gradients": check_tensor_gradients,
    "z_closed_form": check_z_closed_form,
    "z_power": check_z_power,
    "s_update": check_s_update,
    "s_update_multi": check_s_update_multi,
    "w_update": check_w_update,
    "monotonicity": check_monotonicity,
    "phi_goc": check_phi_goc,
    "phi_mgoc": check_phi_mgoc,
    "gcn_reduction": check_gcn_reduction,
    "end_to_end_gradients": check_end_to_end_gradients,
}


def run_checks(only=None, tolerance: float | None = None) -> list[CheckResult]:
    names = list(CHECKS) if not only else list(only)
    unknown = [n for n in names if n not in CHECKS]
    if unknown:
        raise KeyError(f"unknown checks: {', '.join(unknown)}; available: {', '.join(CHECKS)}")
    return [CHECKS[n](tolerance) for n in names]
