"""Two-layer (or deeper) GCN / GOCN / M-GOCN networks and full-batch training."""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field, replace
from typing import Sequence

import numpy as np

from . import tensor as tn
from .datasets import Dataset, Split
from .propagation import GocConfig, MultiTrace, aggregate_gcn, phi_goc, phi_mgoc
from .tensor import Matrix, Tape, make_rng

log = logging.getLogger(__name__)

VARIANTS = ("gcn", "gocn", "mgocn")
PROB_FLOOR = 1e-12

# independent RNG streams derived from one seed
STREAM_INIT = 1
STREAM_DROPOUT = 2
STREAM_SPLIT = 3


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    variant: str = "gocn"
    layer_dims: tuple[int, ...] = ()
    goc: GocConfig = field(default_factory=GocConfig)
    learning_rate: float = 0.01
    max_epochs: int = 10000
    patience: int = 100
    weight_decay: float = 5e-4
    dropout: float = 0.0
    seed: int = 0
    adam_betas: tuple[float, float] = (0.9, 0.999)
    adam_eps: float = 1e-8
    init_scale: float = 1.0
    graph_index: int = 0

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        dims = tuple(int(d) for d in self.layer_dims)
        object.__setattr__(self, "layer_dims", dims)
        if dims and (len(dims) < 2 or min(dims) < 1):
            raise ValueError(f"layer_dims needs at least two positive sizes, got {dims}")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError(f"dropout must lie in [0, 1), got {self.dropout}")
        if self.variant == "mgocn":
            self.goc.check_multi()

    @property
    def num_layers(self) -> int:
        return len(self.layer_dims) - 1

    def for_dataset(self, ds: Dataset, hidden: Sequence[int] = (16,)) -> ModelConfig:
        """Fill in ``layer_dims`` from the dataset when left empty, and check them."""
        dims = self.layer_dims or (ds.d, *hidden, ds.num_classes)
        if dims[0] != ds.d or dims[-1] != ds.num_classes:
            raise ValueError(f"layer_dims {dims} do not match d={ds.d}, c={ds.num_classes}")
        if self.graph_index >= ds.m:
            raise ValueError(f"graph_index {self.graph_index} but dataset has {ds.m} graphs")
        return replace(self, layer_dims=tuple(dims))


@dataclass
class ModelParams:
    thetas: list[np.ndarray]

    def copy(self) -> ModelParams:
        return ModelParams([t.copy() for t in self.thetas])

    def check(self, config: ModelConfig):
        dims = config.layer_dims
        shapes = [t.shape for t in self.thetas]
        want = [(dims[k], dims[k + 1]) for k in range(len(dims) - 1)]
        if shapes != want:
            raise ValueError(f"parameter shapes {shapes} do not match layer_dims {dims}")

    def save(self, path):
        np.savez(path, *self.thetas)

    @classmethod
    def load(cls, path) -> ModelParams:
        with np.load(path) as f:
            return cls([f[f"arr_{i}"] for i in range(len(f.files))])


@dataclass
class TrainReport:
    epochs_run: int
    best_val_loss: float
    best_val_epoch: int
    test_accuracy: float
    val_accuracy: float
    train_loss_history: list[float]
    val_loss_history: list[float] = field(default_factory=list)
    graph_weights: list[list[float]] | None = None

    @property
    def final_train_loss(self) -> float:
        return self.train_loss_history[-1] if self.train_loss_history else math.nan

    def to_dict(self) -> dict:
        return asdict(self)


def glorot_init(d_in: int, d_out: int, rng: np.random.Generator) -> np.ndarray:
    if d_in < 1 or d_out < 1:
        raise ValueError(f"dimensions must be positive, got {d_in}x{d_out}")
    a = math.sqrt(6.0 / (d_in + d_out))
    return rng.uniform(-a, a, size=(d_in, d_out))


def init_params(config: ModelConfig, rng: np.random.Generator) -> ModelParams:
    dims = config.layer_dims
    thetas = [glorot_init(dims[k], dims[k + 1], rng) for k in range(len(dims) - 1)]
    if config.init_scale != 1.0:
        thetas = [config.init_scale * t for t in thetas]
    return ModelParams(thetas)


def _dropout(h: Matrix, rate: float, rng: np.random.Generator) -> Matrix:
    keep = rng.random(h.shape) >= rate
    return tn.hadamard(h, keep / (1.0 - rate))


def propagate(config: ModelConfig, ds: Dataset, h, traces: list | None = None) -> Matrix:
    """Apply the variant's aggregation operator to ``h``."""
    if config.variant == "gcn":
        return aggregate_gcn(ds.normalized_graphs[config.graph_index], h)
    if config.variant == "gocn":
        return phi_goc(ds.normalized_graphs[config.graph_index], h, config.goc)
    trace = MultiTrace()
    z = phi_mgoc(ds.normalized_graphs, h, config.goc, trace)
    if traces is not None:
        traces.append(trace.weights.values.tolist())
    return z


def forward(
    config: ModelConfig,
    params,
    ds: Dataset,
    dropout_active: bool = False,
    rng: np.random.Generator | None = None,
    traces: list | None = None,
) -> Matrix:
    """Class probabilities ``P`` (n x c).

    ``params`` is either a :class:`ModelParams` or a list of (possibly taped)
    weight matrices. Hidden layers use relu, the output layer a row softmax.
    """
    thetas = params.thetas if isinstance(params, ModelParams) else list(params)
    h = Matrix(ds.features)
    K = len(thetas)
    for k, theta in enumerate(thetas):
        if dropout_active and config.dropout > 0:
            if rng is None:
                raise ValueError("dropout needs an rng")
            h = _dropout(h, config.dropout, rng)
        pre = tn.matmul(propagate(config, ds, h, traces), theta)
        h = tn.relu(pre) if k < K - 1 else tn.row_softmax(pre)
    return h


def cross_entropy_loss(p, labels, node_set) -> Matrix:
    """``-sum_{i in node_set} ln P[i, y_i]``, probabilities floored at 1e-12."""
    idx = np.asarray(sorted(node_set), dtype=np.intp)
    if idx.size == 0:
        raise ValueError("cross-entropy needs at least one labelled node")
    y = np.asarray(labels)[idx]
    picked = tn.select(p, idx, y)
    return tn.scale(tn.sum_all(tn.log(tn.clip_min(picked, PROB_FLOOR))), -1.0)


def accuracy_from_probs(p: np.ndarray, labels, node_set) -> float:
    idx = np.asarray(sorted(node_set), dtype=np.intp)
    if idx.size == 0:
        raise ValueError("accuracy needs a non-empty node set")
    # np.argmax returns the first maximum, i.e. the lowest class index on ties
    pred = np.argmax(np.asarray(p)[idx], axis=1)
    return float(np.mean(pred == np.asarray(labels)[idx]))


def evaluate(params: ModelParams, config: ModelConfig, ds: Dataset, node_set) -> float:
    p = forward(config, params, ds, dropout_active=False)
    return accuracy_from_probs(p.data, ds.labels, node_set)


@dataclass
class AdamState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    t: int = 0

    @classmethod
    def zeros_like(cls, params: ModelParams) -> AdamState:
        return cls([np.zeros_like(p) for p in params.thetas], [np.zeros_like(p) for p in params.thetas])


def adam_step(
    params: ModelParams,
    grads: Sequence[np.ndarray],
    state: AdamState,
    lr: float = 0.01,
    betas: tuple[float, float] = (0.9, 0.999),
    eps: float = 1e-8,
    weight_decay: float = 0.0,
) -> tuple[ModelParams, AdamState]:
    """One bias-corrected Adam step; ``weight_decay * theta`` is added to each gradient."""
    b1, b2 = betas
    t = state.t + 1
    new_p, new_m, new_v = [], [], []
    for p, g, m, v in zip(params.thetas, grads, state.m, state.v):
        if weight_decay:
            g = g + weight_decay * p
        m = b1 * m + (1.0 - b1) * g
        v = b2 * v + (1.0 - b2) * (g * g)
        m_hat = m / (1.0 - b1**t)
        v_hat = v / (1.0 - b2**t)
        new_p.append(p - lr * m_hat / (np.sqrt(v_hat) + eps))
        new_m.append(m)
        new_v.append(v)
    return ModelParams(new_p), AdamState(new_m, new_v, t)


def loss_and_grads(config: ModelConfig, params: ModelParams, ds: Dataset, split: Split, rng=None):
    """Training loss, its gradients, and the pre-update probabilities."""
    tape = Tape()
    thetas = [tape.watch(t) for t in params.thetas]
    p = forward(config, thetas, ds, dropout_active=config.dropout > 0, rng=rng)
    loss = cross_entropy_loss(p, ds.labels, split.train)
    grads = tn.grad(loss, thetas)
    return float(loss), grads, p.data


def train(config: ModelConfig, ds: Dataset, split: Split) -> tuple[ModelParams, TrainReport]:
    """Full-batch Adam with early stopping on the validation loss.

    Training stops once the validation loss has not improved for
    ``patience`` consecutive epochs; the parameters of the best validation
    epoch are restored before the final evaluation. Without a validation set
    the training loss is monitored instead.
    """
    config = config.for_dataset(ds)
    split.validate(ds.n)
    params = init_params(config, make_rng(config.seed, STREAM_INIT))
    params.check(config)
    drop_rng = make_rng(config.seed, STREAM_DROPOUT)
    state = AdamState.zeros_like(params)
    monitor = split.val if split.val else split.train

    best = params.copy()
    best_loss, best_epoch = math.inf, 0
    train_hist, val_hist = [], []
    since_best = 0
    epoch = 0
    for epoch in range(1, config.max_epochs + 1):
        loss, grads, probs = loss_and_grads(config, params, ds, split, drop_rng)
        if config.dropout > 0:
            probs = forward(config, params, ds).data
        val_loss = float(cross_entropy_loss(Matrix(probs), ds.labels, monitor))
        if not (math.isfinite(loss) and math.isfinite(val_loss)) or not all(np.all(np.isfinite(g)) for g in grads):
            raise TrainingError(
                f"non-finite loss or gradient at epoch {epoch} (train={loss}, val={val_loss}); "
                "the aggregation operator probably diverged, try a smaller gamma or feature scale"
            )
        train_hist.append(loss)
        val_hist.append(val_loss)
        if val_loss < best_loss:
            best_loss, best_epoch, best = val_loss, epoch, params.copy()
            since_best = 0
        else:
            since_best += 1
            if since_best >= config.patience:
                break
        params, state = adam_step(
            params,
            grads,
            state,
            lr=config.learning_rate,
            betas=config.adam_betas,
            eps=config.adam_eps,
            weight_decay=config.weight_decay,
        )

    weights = [] if config.variant == "mgocn" else None
    p = forward(config, best, ds, traces=weights).data
    report = TrainReport(
        epochs_run=epoch,
        best_val_loss=best_loss,
        best_val_epoch=best_epoch,
        test_accuracy=accuracy_from_probs(p, ds.labels, split.test) if split.test else math.nan,
        val_accuracy=accuracy_from_probs(p, ds.labels, split.val) if split.val else math.nan,
        train_loss_history=train_hist,
        val_loss_history=val_hist,
        graph_weights=weights,
    )
    log.info(
        "%s: %d epochs, best val loss %.4f at %d, test acc %.4f",
        config.variant,
        report.epochs_run,
        best_loss,
        best_epoch,
        report.test_accuracy,
    )
    return best, report
