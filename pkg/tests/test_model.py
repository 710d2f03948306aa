import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gocn import tensor as tn
from gocn.datasets import Dataset, Split, make_ratio_split, synth_blobs
from gocn.graph import Graph
from gocn.model import (
    AdamState,
    ModelConfig,
    ModelParams,
    accuracy_from_probs,
    adam_step,
    cross_entropy_loss,
    evaluate,
    forward,
    glorot_init,
    init_params,
    loss_and_grads,
    train,
)
from gocn.oracles import finite_diff_grad, random_graph_adjacency
from gocn.propagation import GocConfig
from gocn.tensor import Matrix, Tape, finite_diff_check, grad, make_rng


def _tiny(seed=0, n=6, d=3, c=2, m=1, positive=False):
    rng = make_rng(seed)
    X = rng.uniform(0.005, 0.03, (n, d)) if positive else rng.standard_normal((n, d))
    y = np.arange(n) % c
    graphs = tuple(Graph(random_graph_adjacency(rng, n, 0.6)) for _ in range(m))
    return Dataset(X, y, c, graphs)


# --- init ----------------------------------------------------------------------


def test_glorot_range_and_determinism():
    a = math.sqrt(6 / (16 + 7))
    w = glorot_init(16, 7, make_rng(0))
    assert w.shape == (16, 7) and np.all(np.abs(w) < a)
    assert np.array_equal(w, glorot_init(16, 7, make_rng(0)))


def test_glorot_mean_within_three_standard_errors():
    a = math.sqrt(6 / 32)
    w = glorot_init(16, 16, make_rng(1))
    se = math.sqrt(a * a / 3 / w.size)
    assert abs(w.mean()) <= 3 * se


def test_glorot_rejects_empty():
    with pytest.raises(ValueError):
        glorot_init(0, 3, make_rng(0))


def test_config_validation():
    with pytest.raises(ValueError):
        ModelConfig(variant="gat")
    with pytest.raises(ValueError):
        ModelConfig(layer_dims=(3,))
    with pytest.raises(ValueError):
        ModelConfig(dropout=1.0)
    ds = _tiny()
    with pytest.raises(ValueError):
        ModelConfig(layer_dims=(3, 4, 5)).for_dataset(ds)
    assert ModelConfig().for_dataset(ds).layer_dims == (3, 16, 2)


def test_params_save_load(tmp_path):
    p = init_params(ModelConfig(layer_dims=(3, 4, 2)), make_rng(0))
    p.save(tmp_path / "p.npz")
    q = ModelParams.load(tmp_path / "p.npz")
    assert all(np.array_equal(a, b) for a, b in zip(p.thetas, q.thetas))


# --- forward ---------------------------------------------------------------------


def test_gcn_with_empty_graph_is_a_perceptron():
    rng = make_rng(2)
    X = rng.standard_normal((5, 3))
    ds = Dataset(X, [0, 1, 0, 1, 2], 3, (Graph(np.zeros((5, 5))),))
    cfg = ModelConfig(variant="gcn", layer_dims=(3, 4, 3))
    p = init_params(cfg, rng)
    h = np.maximum(X @ p.thetas[0], 0)
    logits = h @ p.thetas[1]
    want = np.exp(logits - logits.max(1, keepdims=True))
    want /= want.sum(1, keepdims=True)
    np.testing.assert_allclose(forward(cfg, p, ds).data, want, rtol=1e-13)


def test_gocn_reduction_to_gcn_output():
    ds = _tiny(3)
    gcn = ModelConfig(variant="gcn", layer_dims=(3, 5, 2))
    goc = replace(gcn, variant="gocn", goc=GocConfig(alpha=0.5, gamma=0.0, T=1))
    p = init_params(gcn, make_rng(4))
    doubled = ModelParams([2 * t for t in p.thetas])
    assert np.array_equal(forward(goc, doubled, ds).data, forward(gcn, p, ds).data)


@pytest.mark.parametrize("variant", ["gcn", "gocn", "mgocn"])
def test_forward_rows_sum_to_one(variant):
    ds = _tiny(5, m=3, positive=True)
    cfg = ModelConfig(variant=variant).for_dataset(ds)
    P = forward(cfg, init_params(cfg, make_rng(0)), ds).data
    assert P.shape == (6, 2)
    np.testing.assert_allclose(P.sum(1), 1.0, atol=1e-12)


def test_forward_shape_mismatch():
    ds = _tiny()
    cfg = ModelConfig(layer_dims=(3, 4, 2))
    with pytest.raises(Exception):
        forward(cfg, [np.ones((4, 4)), np.ones((4, 2))], ds)


def test_mgocn_records_graph_weights_per_layer():
    ds = _tiny(6, m=3, positive=True)
    cfg = ModelConfig(variant="mgocn").for_dataset(ds)
    traces = []
    forward(cfg, init_params(cfg, make_rng(0)), ds, traces=traces)
    assert len(traces) == 2
    for w in traces:
        assert len(w) == 3 and sum(w) == pytest.approx(1.0, abs=1e-12)


def test_dropout_needs_rng_and_changes_output():
    ds = _tiny(7)
    cfg = ModelConfig(variant="gcn", dropout=0.5).for_dataset(ds)
    p = init_params(cfg, make_rng(0))
    with pytest.raises(ValueError):
        forward(cfg, p, ds, dropout_active=True)
    a = forward(cfg, p, ds, dropout_active=True, rng=make_rng(1)).data
    assert not np.array_equal(a, forward(cfg, p, ds).data)


# --- loss / accuracy ------------------------------------------------------------------


def test_cross_entropy_examples():
    labels = [0, 1, 2, 1]
    onehot = np.eye(3)[labels]
    assert float(cross_entropy_loss(onehot, labels, [0, 1, 2])) == 0.0
    uniform = np.full((4, 3), 1 / 3)
    assert float(cross_entropy_loss(uniform, labels, [0, 2, 3])) == pytest.approx(3 * math.log(3), rel=1e-14)


def test_cross_entropy_clamps_zero_probability():
    assert float(cross_entropy_loss(np.array([[0.0, 1.0]]), [0], [0])) == pytest.approx(-math.log(1e-12))


def test_cross_entropy_empty_set():
    with pytest.raises(ValueError):
        cross_entropy_loss(np.ones((2, 2)) / 2, [0, 1], [])


def test_cross_entropy_logit_gradient_is_p_minus_y():
    rng = make_rng(8)
    logits = rng.standard_normal((5, 3))
    labels = np.array([0, 2, 1, 1, 0])
    train_set = [0, 1, 3]
    tape = Tape()
    z = tape.watch(logits)
    (g,) = grad(cross_entropy_loss(tn.row_softmax(z), labels, train_set), [z])
    P = tn.row_softmax(logits).data
    want = np.zeros_like(P)
    want[train_set] = P[train_set] - np.eye(3)[labels[train_set]]
    np.testing.assert_allclose(g, want, rtol=1e-12, atol=1e-14)
    num = finite_diff_grad(lambda v: float(cross_entropy_loss(tn.row_softmax(v), labels, train_set)), logits)
    np.testing.assert_allclose(g, num, rtol=1e-6, atol=1e-9)


def test_accuracy_examples():
    labels = [0, 1, 2]
    assert accuracy_from_probs(np.eye(3), labels, [0, 1, 2]) == 1.0
    # ties go to the lowest class index
    assert accuracy_from_probs(np.full((3, 3), 1 / 3), labels, [0, 1, 2]) == pytest.approx(1 / 3)
    with pytest.raises(ValueError):
        accuracy_from_probs(np.eye(3), labels, [])


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 30), st.integers(2, 5))
def test_accuracy_counts_matches(seed, n, c):
    rng = make_rng(seed)
    labels = rng.integers(0, c, n)
    pred = rng.integers(0, c, n)
    P = np.eye(c)[pred]
    acc = accuracy_from_probs(P, labels, range(n))
    assert 0.0 <= acc <= 1.0
    assert acc == pytest.approx(sum(int(a == b) for a, b in zip(pred, labels)) / n)


def test_evaluate_on_permuted_labels():
    ds = _tiny(9, n=6, c=3)
    cfg = ModelConfig(variant="gcn").for_dataset(ds)
    p = init_params(cfg, make_rng(0))
    pred = np.argmax(forward(cfg, p, ds).data, axis=1)
    # shift the label of nodes 0, 2, 3 away from the prediction, keep the rest correct
    wrong = np.zeros(6, dtype=bool)
    wrong[[0, 2, 3]] = True
    labels = np.where(wrong, (pred + 1) % 3, pred)
    if len(set(labels.tolist())) < 3:
        labels[5] = next(k for k in range(3) if k not in labels)
        wrong[5] = labels[5] != pred[5]
    relabeled = Dataset(ds.features, labels, 3, ds.graphs)
    assert evaluate(p, cfg, relabeled, range(6)) == pytest.approx(1 - wrong.mean())


# --- adam ------------------------------------------------------------------------------


def test_adam_zero_gradient_keeps_params():
    p = ModelParams([np.ones((2, 2))])
    q, _ = adam_step(p, [np.zeros((2, 2))], AdamState.zeros_like(p))
    assert np.array_equal(q.thetas[0], p.thetas[0])


def test_adam_first_step_magnitude_is_lr():
    p = ModelParams([np.zeros((1, 3))])
    g = np.array([[5.0, -2.0, 100.0]])
    q, state = adam_step(p, [g], AdamState.zeros_like(p), lr=0.01)
    np.testing.assert_allclose(q.thetas[0], -0.01 * np.sign(g), rtol=1e-6)
    assert state.t == 1


def test_adam_minimizes_quadratic():
    p = ModelParams([np.ones((1, 1))])
    state = AdamState.zeros_like(p)
    for _ in range(200):
        p, state = adam_step(p, [2 * p.thetas[0]], state, lr=0.05)
    assert abs(p.thetas[0].item()) < 1e-2


def test_adam_weight_decay_enters_gradient():
    p = ModelParams([np.full((1, 1), 2.0)])
    q, _ = adam_step(p, [np.zeros((1, 1))], AdamState.zeros_like(p), lr=0.1, weight_decay=0.5)
    assert q.thetas[0].item() == pytest.approx(1.9, rel=1e-6)


# --- gradients end to end ------------------------------------------------------------


def _end_to_end(variant, m):
    ds = _tiny(10, n=6, d=3, c=2, m=m, positive=True)
    cfg = ModelConfig(variant=variant, layer_dims=(3, 4, 2))
    p = init_params(cfg, make_rng(11))
    train_set = [0, 1, 2, 3]
    reports = []
    for k in range(2):

        def f(theta, k=k):
            thetas = list(p.thetas)
            thetas[k] = theta
            return cross_entropy_loss(forward(cfg, thetas, ds), ds.labels, train_set)

        reports.append(finite_diff_check(f, p.thetas[k], tolerance=1e-4))
    return reports


@pytest.mark.parametrize("variant, m", [("gcn", 1), ("gocn", 1), ("mgocn", 3)])
def test_end_to_end_gradients(variant, m):
    for rep in _end_to_end(variant, m):
        assert rep.passed, rep.max_rel_error


def test_loss_and_grads_match_direct_tape():
    ds = _tiny(12, positive=True)
    cfg = ModelConfig(variant="gocn").for_dataset(ds)
    p = init_params(cfg, make_rng(0))
    split = Split([0, 1], [2], [3, 4, 5])
    loss, grads, _ = loss_and_grads(cfg, p, ds, split)
    tape = Tape()
    th = [tape.watch(t) for t in p.thetas]
    ref = grad(cross_entropy_loss(forward(cfg, th, ds), ds.labels, [0, 1]), th)
    assert all(np.array_equal(a, b) for a, b in zip(grads, ref))


# --- training ----------------------------------------------------------------------------


@pytest.fixture(scope="module")
def blobs():
    ds = synth_blobs(60, 8, 3, 1, 0, 5, make_rng(0), scale=1e-3)
    return ds, make_ratio_split(ds, 0.1, 0.05, make_rng(1))


def test_train_separable_blobs(blobs):
    ds, split = blobs
    _, rep = train(ModelConfig(variant="gocn", seed=1), ds, split)
    assert rep.test_accuracy == 1.0
    assert rep.best_val_epoch <= rep.epochs_run
    assert 0 <= rep.val_accuracy <= 1


def test_train_is_deterministic(blobs):
    ds, split = blobs
    cfg = ModelConfig(variant="gocn", seed=3, max_epochs=60)
    p1, r1 = train(cfg, ds, split)
    p2, r2 = train(cfg, ds, split)
    assert r1.to_dict() == r2.to_dict()
    assert all(np.array_equal(a, b) for a, b in zip(p1.thetas, p2.thetas))


def test_patience_stops_early(blobs):
    ds, split = blobs
    _, rep = train(ModelConfig(variant="gcn", patience=1, seed=0), ds, split)
    assert rep.epochs_run < 10000


def test_train_restores_best_validation_params(blobs):
    ds, split = blobs
    cfg = ModelConfig(variant="gcn", seed=0, patience=5, max_epochs=400)
    best, rep = train(cfg, ds, split)
    P = forward(cfg.for_dataset(ds), best, ds)
    val = float(cross_entropy_loss(P, ds.labels, split.val))
    assert val == pytest.approx(rep.best_val_loss, rel=1e-12)
    assert rep.best_val_loss == min(rep.val_loss_history)


def test_training_loss_decreases_early(blobs):
    ds, split = blobs
    _, rep = train(ModelConfig(variant="gocn", seed=2, max_epochs=10), ds, split)
    hist = rep.train_loss_history
    assert len(hist) == 10
    assert hist[-1] < hist[0]


def test_mgocn_report_has_weights():
    ds = synth_blobs(30, 4, 3, 2, (0, 5), 4, make_rng(0), scale=1e-3)
    split = make_ratio_split(ds, 0.2, 0.1, make_rng(0))
    _, rep = train(ModelConfig(variant="mgocn", max_epochs=5), ds, split)
    assert len(rep.graph_weights) == 2
    assert all(len(w) == 2 for w in rep.graph_weights)
