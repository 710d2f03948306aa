"""``gocn`` command line: train, eval, check, gradcheck, synth.

Exit codes: 0 success, 1 check or training failure, 2 usage error, 3 data error.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import statistics
import sys
from dataclasses import dataclass, fields
from pathlib import Path

from .checks import CHECKS, end_to_end_gradcheck, run_checks
from .datasets import DataError, Dataset, load_dataset, make_citation_split, make_ratio_split, synth_blobs, write_dataset
from .graph import GraphError
from .model import STREAM_SPLIT, ModelConfig, ModelParams, TrainingError, evaluate, train
from .propagation import ConfigError, GocConfig
from .tensor import make_rng

log = logging.getLogger("gocn")

EXIT_OK, EXIT_FAIL, EXIT_USAGE, EXIT_DATA = 0, 1, 2, 3
COMMANDS = ("train", "eval", "check", "gradcheck", "synth")

SYNTH_DEFAULTS = {"n": 60, "d": 8, "c": 3, "m": 1, "noise": "0", "k": 3, "seed": 0, "scale": 1e-3}


class UsageError(ValueError):
    pass


def parse_synth(spec: str) -> dict:
    """``blobs:n=60,c=3,m=3,noise=0/5/5`` -> generator keyword arguments."""
    kind, _, rest = spec.partition(":")
    if kind != "blobs":
        raise UsageError(f"unknown synthetic generator {kind!r} (only 'blobs')")
    out = dict(SYNTH_DEFAULTS)
    for item in filter(None, rest.split(",")):
        key, sep, val = item.partition("=")
        if not sep or key not in SYNTH_DEFAULTS:
            raise UsageError(f"bad synth field {item!r}; keys are {', '.join(SYNTH_DEFAULTS)}")
        out[key] = val
    try:
        noise = [float(v) for v in str(out["noise"]).split("/")]
        kw = {k: int(out[k]) for k in ("n", "d", "c", "m", "k", "seed")}
        kw["scale"] = float(out["scale"])
    except ValueError as e:
        raise UsageError(f"bad synth spec {spec!r}: {e}") from None
    kw["noise"] = noise[0] if len(noise) == 1 else tuple(noise)
    return kw


def build_synth(spec: str) -> Dataset:
    kw = parse_synth(spec)
    seed = kw.pop("seed")
    return synth_blobs(rng=make_rng(seed), name=spec, **kw)


def parse_split(text: str | None):
    if text is None:
        return None
    if text == "citation":
        return ("citation",)
    kind, _, rest = text.partition(":")
    if kind == "ratio":
        try:
            lab, val = (float(v) for v in rest.split(","))
        except ValueError:
            raise UsageError(f"--split ratio expects 'ratio:<labeled>,<val>', got {text!r}") from None
        return ("ratio", lab, val)
    raise UsageError(f"--split must be 'citation' or 'ratio:<labeled>,<val>', got {text!r}")


def _int_list(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(v) for v in text.split(",") if v.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a comma-separated integer list, got {text!r}") from None


@dataclass(frozen=True)
class RunConfig:
    command: str
    dataset: str | None = None
    synth: str | None = None
    variant: str = "gocn"
    alpha: float = 0.9
    gamma: float = 20.0
    r: float = 2.0
    T: int = 2
    M: int = 3
    hidden: tuple[int, ...] = (16,)
    lr: float = 0.01
    max_epochs: int = 10000
    patience: int = 100
    weight_decay: float = 5e-4
    dropout: float = 0.0
    seeds: tuple[int, ...] = (0,)
    split: str | None = None
    normalized_multi_s: bool = False
    out: str | None = None
    save_params: str | None = None
    params: str | None = None
    only: tuple[str, ...] = ()
    tolerance: float | None = None
    graphs: int | None = None

    @classmethod
    def from_args(cls, ns: argparse.Namespace) -> RunConfig:
        kw = {f.name: getattr(ns, f.name) for f in fields(cls) if hasattr(ns, f.name)}
        return cls(**kw)

    def to_argv(self) -> list[str]:
        argv = [self.command]
        default = RunConfig(self.command)
        for f in fields(self):
            if f.name == "command":
                continue
            val = getattr(self, f.name)
            if val == getattr(default, f.name):
                continue
            flag = "--" + f.name.replace("_", "-")
            if isinstance(val, bool):
                argv.append(flag)
            elif isinstance(val, tuple):
                argv += [flag, ",".join(str(v) for v in val)]
            else:
                argv += [flag, repr(val) if isinstance(val, float) else str(val)]
        return argv

    def goc(self) -> GocConfig:
        return GocConfig(
            alpha=self.alpha, gamma=self.gamma, r=self.r, T=self.T, M=self.M, normalized_multi_s=self.normalized_multi_s
        )

    def model_config(self, ds: Dataset, seed: int) -> ModelConfig:
        return ModelConfig(
            variant=self.variant,
            layer_dims=(ds.d, *self.hidden, ds.num_classes),
            goc=self.goc(),
            learning_rate=self.lr,
            max_epochs=self.max_epochs,
            patience=self.patience,
            weight_decay=self.weight_decay,
            dropout=self.dropout,
            seed=seed,
        )

    def echo_params(self) -> dict:
        return {
            "alpha": self.alpha,
            "gamma": self.gamma,
            "r": self.r,
            "T": self.T,
            "M": self.M,
            "hidden": list(self.hidden),
            "lr": self.lr,
            "weight_decay": self.weight_decay,
            "dropout": self.dropout,
        }


def _add_data_flags(p: argparse.ArgumentParser):
    src = p.add_mutually_exclusive_group()
    src.add_argument("--dataset", help="dataset directory")
    src.add_argument("--synth", help="synthetic spec, e.g. blobs:n=60,c=3,m=3,noise=0/5/5")


def _add_model_flags(p: argparse.ArgumentParser):
    p.add_argument("--variant", choices=("gcn", "gocn", "mgocn"), default="gocn")
    p.add_argument("--alpha", type=float, default=0.9)
    p.add_argument("--gamma", type=float, default=20.0)
    p.add_argument("--r", type=float, default=2.0)
    p.add_argument("--T", type=int, default=2)
    p.add_argument("--M", type=int, default=3)
    p.add_argument("--hidden", type=_int_list, default=(16,), help="hidden sizes, comma separated")
    p.add_argument("--lr", type=float, default=0.01)
    p.add_argument("--max-epochs", type=int, default=10000)
    p.add_argument("--patience", type=int, default=100)
    p.add_argument("--weight-decay", type=float, default=5e-4)
    p.add_argument("--dropout", type=float, default=0.0)
    p.add_argument("--seeds", type=_int_list, default=(0,), help="comma-separated seeds")
    p.add_argument("--split", help="citation | ratio:<labeled>,<val>")
    p.add_argument("--normalized-multi-s", action="store_true", help="divide the multi-graph S update by sum w^r")
    p.add_argument("--out", help="output path")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gocn", description="Graph-optimized convolutional networks")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train over one or more seeds and emit JSON-lines metrics")
    _add_data_flags(p)
    _add_model_flags(p)
    p.add_argument("--save-params", help="write the last seed's parameters (.npz)")

    p = sub.add_parser("eval", help="evaluate saved parameters on the test split")
    _add_data_flags(p)
    _add_model_flags(p)
    p.add_argument("--params", required=True, help="parameters saved by train --save-params")

    p = sub.add_parser("check", help="run oracle and invariant checks")
    p.add_argument("--only", type=lambda s: tuple(filter(None, s.split(","))), default=(), help="comma-separated check names")
    p.add_argument("--tolerance", type=float, default=None)

    p = sub.add_parser("gradcheck", help="finite-difference check of end-to-end gradients")
    _add_model_flags(p)
    p.add_argument("--graphs", type=int, default=None, help="number of graphs (mgocn)")
    p.add_argument("--tolerance", type=float, default=1e-4)

    p = sub.add_parser("synth", help="write a synthetic dataset directory")
    p.add_argument("--synth", default="blobs:", help="synthetic spec")
    p.add_argument("--out", required=True, help="output directory")
    return parser


def parse_args(argv) -> RunConfig:
    ns = build_parser().parse_args(argv)
    return RunConfig.from_args(ns), ns


def _load(cfg: RunConfig) -> Dataset:
    if cfg.dataset:
        return load_dataset(cfg.dataset)
    if cfg.synth:
        return build_synth(cfg.synth)
    raise UsageError("one of --dataset or --synth is required")


def _split_for(cfg: RunConfig, ds: Dataset, seed: int):
    choice = parse_split(cfg.split)
    if choice is None:
        if ds.split is not None:
            return ds.split
        choice = ("citation",) if cfg.dataset else ("ratio", 0.1, 0.05)
    rng = make_rng(seed, STREAM_SPLIT)
    if choice[0] == "citation":
        return make_citation_split(ds, rng)
    return make_ratio_split(ds, choice[1], choice[2], rng)


def metrics_record(cfg: RunConfig, ds: Dataset, seed: int, report) -> dict:
    rec = {
        "dataset": ds.name,
        "variant": cfg.variant,
        "seed": seed,
        "test_accuracy": report.test_accuracy,
        "val_accuracy": report.val_accuracy,
        "epochs_run": report.epochs_run,
        "best_val_epoch": report.best_val_epoch,
        "final_train_loss": report.final_train_loss,
        "params": cfg.echo_params(),
    }
    if report.graph_weights is not None:
        rec["graph_weights"] = report.graph_weights
    return rec


def summary_line(records: list[dict]) -> str:
    accs = [r["test_accuracy"] for r in sorted(records, key=lambda r: r["seed"])]
    mean = statistics.fmean(accs)
    std = statistics.stdev(accs) if len(accs) > 1 else 0.0
    return f"test_accuracy {100 * mean:.2f} ± {100 * std:.2f} over {len(accs)} seed(s)"


def cmd_train(cfg: RunConfig) -> int:
    ds = _load(cfg)
    sink = open(cfg.out, "a", encoding="utf-8") if cfg.out else sys.stdout
    records = []
    try:
        for seed in cfg.seeds:
            split = _split_for(cfg, ds, seed)
            params, report = train(cfg.model_config(ds, seed), ds, split)
            rec = metrics_record(cfg, ds, seed, report)
            records.append(rec)
            sink.write(json.dumps(rec) + "\n")
            sink.flush()
            if cfg.save_params:
                params.save(cfg.save_params)
    finally:
        if sink is not sys.stdout:
            sink.close()
    print(summary_line(records))
    return EXIT_OK


def cmd_eval(cfg: RunConfig) -> int:
    ds = _load(cfg)
    seed = cfg.seeds[0]
    mcfg = cfg.model_config(ds, seed).for_dataset(ds)
    params = ModelParams.load(cfg.params)
    params.check(mcfg)
    split = _split_for(cfg, ds, seed)
    rec = {"dataset": ds.name, "variant": cfg.variant, "seed": seed, "test_accuracy": evaluate(params, mcfg, ds, split.test)}
    print(json.dumps(rec))
    return EXIT_OK


def cmd_check(cfg: RunConfig) -> int:
    unknown = [n for n in cfg.only if n not in CHECKS]
    if unknown:
        raise UsageError(f"unknown checks {unknown}; available: {', '.join(CHECKS)}")
    results = run_checks(cfg.only, cfg.tolerance)
    for r in results:
        print(r.line())
    failed = sum(not r.passed for r in results)
    print(f"{len(results) - failed}/{len(results)} checks passed")
    return EXIT_OK if failed == 0 else EXIT_FAIL


def cmd_gradcheck(cfg: RunConfig) -> int:
    if cfg.dropout > 0:
        raise UsageError("gradcheck needs a deterministic forward pass; use --dropout 0")
    m = cfg.graphs if cfg.graphs is not None else (3 if cfg.variant == "mgocn" else 1)
    if m < 1:
        raise UsageError("--graphs must be at least 1")
    hidden = cfg.hidden[0] if cfg.hidden else 4
    worst = 0.0
    for seed in cfg.seeds:
        for k, rep in enumerate(end_to_end_gradcheck(cfg.variant, m, seed, cfg.tolerance, hidden, cfg.goc())):
            worst = max(worst, rep.max_rel_error)
            print(f"seed {seed} theta[{k}]: max relative error {rep.max_rel_error:.3g}")
    ok = worst <= cfg.tolerance
    print(f"{'PASS' if ok else 'FAIL'} gradcheck {cfg.variant} (m={m}): {worst:.3g} <= {cfg.tolerance:.3g}")
    return EXIT_OK if ok else EXIT_FAIL


def cmd_synth(cfg: RunConfig) -> int:
    ds = build_synth(cfg.synth or "blobs:")
    root = write_dataset(ds, cfg.out)
    print(f"wrote {ds.n} nodes, {ds.m} graph(s) to {root}")
    return EXIT_OK


HANDLERS = {"train": cmd_train, "eval": cmd_eval, "check": cmd_check, "gradcheck": cmd_gradcheck, "synth": cmd_synth}


def main(argv=None) -> int:
    try:
        cfg, ns = parse_args(argv)
    except SystemExit as e:
        return int(e.code) if isinstance(e.code, int) else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if ns.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return HANDLERS[cfg.command](cfg)
    except (UsageError, ConfigError) as e:
        print(f"gocn: error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, GraphError, OSError) as e:
        print(f"gocn: data error: {e}", file=sys.stderr)
        return EXIT_DATA
    except ValueError as e:
        print(f"gocn: error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except TrainingError as e:
        print(f"gocn: training failed: {e}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
