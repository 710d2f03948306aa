import json

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gocn.cli import RunConfig, main, parse_args, parse_split, parse_synth, summary_line
from gocn.datasets import load_dataset


def test_train_synth_reaches_full_accuracy(tmp_path, capsys):
    out = tmp_path / "m.jsonl"
    code = main(["train", "--synth", "blobs:n=60,c=3,m=1,noise=0", "--variant", "gocn", "--seeds", "1", "--out", str(out)])
    assert code == 0
    (rec,) = [json.loads(line) for line in out.read_text().splitlines()]
    assert rec["test_accuracy"] == 1.0
    assert set(rec) >= {
        "dataset",
        "variant",
        "seed",
        "test_accuracy",
        "val_accuracy",
        "epochs_run",
        "best_val_epoch",
        "final_train_loss",
        "params",
    }
    assert set(rec["params"]) == {"alpha", "gamma", "r", "T", "M", "hidden", "lr", "weight_decay", "dropout"}
    assert "over 1 seed" in capsys.readouterr().out


def test_train_multiple_seeds_appends_records(tmp_path):
    out = tmp_path / "m.jsonl"
    argv = ["train", "--synth", "blobs:n=30,c=3", "--variant", "gcn", "--seeds", "1,2,3", "--max-epochs", "20", "--out", str(out)]
    assert main(argv) == 0
    recs = [json.loads(line) for line in out.read_text().splitlines()]
    assert [r["seed"] for r in recs] == [1, 2, 3]


def test_unknown_flag_is_usage_error(capsys):
    assert main(["train", "--bogus"]) == 2
    assert "usage" in capsys.readouterr().err


def test_missing_dataset_is_data_error(tmp_path):
    assert main(["train", "--dataset", str(tmp_path / "nope")]) == 3


def test_check_only_filter(capsys):
    assert main(["check", "--only", "w_update"]) == 0
    out = capsys.readouterr().out
    assert "w_update" in out and "z_power" not in out


def test_check_z_power_tight_tolerance():
    assert main(["check", "--only", "z_power", "--tolerance", "1e-9"]) == 0


def test_check_unknown_name():
    assert main(["check", "--only", "nope"]) == 2


def test_check_default_all_pass(capsys):
    assert main(["check"]) == 0
    assert "13/13 checks passed" in capsys.readouterr().out


def test_gradcheck_defaults_and_multi_graph(capsys):
    assert main(["gradcheck"]) == 0
    assert main(["gradcheck", "--variant", "mgocn", "--graphs", "3"]) == 0
    assert "mgocn (m=3)" in capsys.readouterr().out


def test_gradcheck_refuses_dropout():
    assert main(["gradcheck", "--dropout", "0.5"]) == 2


def test_synth_round_trip_and_determinism(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    spec = "blobs:n=30,c=3,m=3,noise=0/5/5,seed=4"
    assert main(["synth", "--synth", spec, "--out", str(a)]) == 0
    assert main(["synth", "--synth", spec, "--out", str(b)]) == 0
    assert sorted(p.name for p in a.iterdir()) == ["features.txt", "graph_1.txt", "graph_2.txt", "graph_3.txt", "labels.txt", "meta.txt"]
    for p in a.iterdir():
        assert p.read_bytes() == (b / p.name).read_bytes()
    ds = load_dataset(a)
    assert (ds.n, ds.m, ds.num_classes) == (30, 3, 3)


def test_train_save_then_eval(tmp_path, capsys):
    data = tmp_path / "d"
    params = tmp_path / "p.npz"
    main(["synth", "--synth", "blobs:n=30,c=3", "--out", str(data)])
    base = ["--dataset", str(data), "--variant", "gcn", "--split", "ratio:0.2,0.1", "--seeds", "5"]
    assert main(["train", *base, "--save-params", str(params), "--max-epochs", "50"]) == 0
    capsys.readouterr()
    assert main(["eval", *base, "--params", str(params)]) == 0
    rec = json.loads(capsys.readouterr().out.strip())
    assert 0.0 <= rec["test_accuracy"] <= 1.0


def test_dataset_split_file_is_used(tmp_path, capsys):
    data = tmp_path / "d"
    main(["synth", "--synth", "blobs:n=30,c=3", "--out", str(data)])
    lines = [f"{i} {'train' if i < 9 else 'val' if i < 12 else 'test'}" for i in range(30)]
    (data / "split.txt").write_text("\n".join(lines) + "\n")
    assert main(["train", "--dataset", str(data), "--variant", "gcn", "--max-epochs", "5"]) == 0


def test_parse_synth_and_split():
    kw = parse_synth("blobs:n=90,c=3,m=3,noise=0/5/5,k=4,seed=2")
    assert kw["noise"] == (0.0, 5.0, 5.0) and kw["n"] == 90 and kw["k"] == 4
    assert parse_split("ratio:0.1,0.05") == ("ratio", 0.1, 0.05)
    assert parse_split("citation") == ("citation",)
    assert main(["train", "--synth", "blobs:q=1"]) == 2
    assert main(["train", "--synth", "blobs:n=30,c=3", "--split", "random"]) == 2


def test_summary_uses_sample_std():
    recs = [{"seed": s, "test_accuracy": a} for s, a in [(2, 0.8), (1, 0.6)]]
    assert summary_line(recs) == "test_accuracy 70.00 ± 14.14 over 2 seed(s)"


floats = st.floats(1e-4, 0.99, allow_nan=False)


@settings(max_examples=60, deadline=None)
@given(
    st.sampled_from(["train", "eval"]),
    st.sampled_from(["gcn", "gocn", "mgocn"]),
    floats,
    st.floats(0, 100),
    st.integers(1, 5),
    st.lists(st.integers(1, 64), min_size=1, max_size=3),
    st.lists(st.integers(0, 1000), min_size=1, max_size=5),
    st.booleans(),
    st.sampled_from([None, "citation", "ratio:0.1,0.05"]),
)
def test_run_config_round_trip(command, variant, alpha, gamma, T, hidden, seeds, norm, split):
    cfg = RunConfig(
        command,
        synth="blobs:n=30",
        variant=variant,
        alpha=alpha,
        gamma=gamma,
        T=T,
        hidden=tuple(hidden),
        seeds=tuple(seeds),
        normalized_multi_s=norm,
        split=split,
        params="p.npz" if command == "eval" else None,
    )
    again, _ = parse_args(cfg.to_argv())
    assert again == cfg
