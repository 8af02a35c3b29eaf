import numpy as np
import pytest

from broadface import cli
from broadface.config import parse_config
from broadface.data import load_dataset
from broadface.encoder import load_checkpoint
from broadface.evaluation import recall_at_k
from broadface.training import embed

TINY = """\
num_classes = 16
samples_per_class = 8
feature_dim = 8
layer_sizes = 8,16,4
batch_size = 16
queue_capacity = 32
epochs = 3
scale = 16
lr = 0.05
sweep_capacities = 0,32
num_genuine = 10
num_impostor = 100
"""


@pytest.fixture
def cfg_path(tmp_path):
    p = tmp_path / "tiny.cfg"
    p.write_text(TINY)
    return p


def _run(*args):
    return cli.main([str(a) for a in args])


def _rows(path):
    lines = path.read_text().splitlines()
    return lines[0], [line.split(",") for line in lines[2:]]


def test_train_writes_outputs(cfg_path, tmp_path):
    out = tmp_path / "run"
    assert _run("train", "--config", cfg_path, "--out", out) == 0
    header, rows = _rows(out / "metrics.csv")
    cfg = parse_config(TINY)
    assert header == f"# config={cfg.digest()} seed=0"
    assert (out / "metrics.csv").read_text().splitlines()[1] == "metric,step,value,extra"
    assert {r[0] for r in rows} >= {"encoder_loss", "classifier_loss", "recall@1"}
    assert all(r[3] == "broadface" for r in rows)
    assert parse_config((out / "config.echo").read_text()) == cfg
    assert load_checkpoint(out / "checkpoint.bfe").layer_sizes == (8, 16, 4)


def test_identical_runs_are_byte_identical(cfg_path, tmp_path):
    for name in ("a", "b"):
        assert _run("train", "--config", cfg_path, "--out", tmp_path / name, "--seed", 7) == 0
    a = (tmp_path / "a" / "metrics.csv").read_bytes()
    assert a == (tmp_path / "b" / "metrics.csv").read_bytes()
    assert a.startswith(b"# config=") and b"seed=7" in a.splitlines()[0]


def test_seed_changes_the_run(cfg_path, tmp_path):
    _run("train", "--config", cfg_path, "--out", tmp_path / "a", "--seed", 1)
    _run("train", "--config", cfg_path, "--out", tmp_path / "b", "--seed", 2)
    assert (tmp_path / "a" / "metrics.csv").read_bytes() != (tmp_path / "b" / "metrics.csv").read_bytes()


def test_capacity_zero_is_labelled_baseline(cfg_path, tmp_path):
    cfg_path.write_text(TINY + "queue_capacity = 0\n")
    assert _run("train", "--config", cfg_path, "--out", tmp_path / "r") == 0
    _, rows = _rows(tmp_path / "r" / "metrics.csv")
    assert {r[3] for r in rows} == {"baseline"}


def test_eval_reproduces_training_recall(cfg_path, tmp_path):
    out = tmp_path / "run"
    _run("train", "--config", cfg_path, "--out", out)
    before = (out / "metrics.csv").read_bytes()
    assert _run("eval", "--config", cfg_path, "--out", out) == 0
    assert (out / "metrics.csv").read_bytes() == before
    _, train_rows = _rows(out / "metrics.csv")
    _, eval_rows = _rows(out / "eval.csv")
    last = {r[0]: r[2] for r in train_rows if r[0].startswith("recall@") and r[1] == "3"}
    got = {r[0]: r[2] for r in eval_rows if r[0].startswith("recall@")}
    assert got == last
    assert {r[0] for r in eval_rows} >= {"tar@far", "rank1"}

    # plumbing identity with the evaluation module
    cfg = parse_config(TINY)
    _, (_, test) = cli._dataset(cfg)
    direct = recall_at_k(embed(load_checkpoint(out / "checkpoint.bfe"), test.features), test.labels, cfg.recall_ks)
    assert {f"recall@{k}": repr(v) for k, v in direct.items()} == got


def test_eval_without_checkpoint_is_a_config_error(cfg_path, tmp_path):
    assert _run("eval", "--config", cfg_path, "--out", tmp_path / "empty") == 2


def test_sweep_rows(cfg_path, tmp_path):
    out = tmp_path / "sweep"
    assert _run("sweep-queue", "--config", cfg_path, "--out", out) == 0
    _, rows = _rows(out / "metrics.csv")
    keys = {(r[1], r[3]) for r in rows if r[0] == "final_recall@1"}
    assert keys == {("0", "compensation=true"), ("32", "compensation=true"), ("32", "compensation=false")}


def test_sweep_single_baseline_row(cfg_path, tmp_path):
    cfg_path.write_text(TINY + "sweep_capacities = 0\n")
    _run("sweep-queue", "--config", cfg_path, "--out", tmp_path / "s")
    _, rows = _rows(tmp_path / "s" / "metrics.csv")
    assert [r[1] for r in rows if r[0] == "final_recall@1"] == ["0"]


def test_gen_data_round_trips(cfg_path, tmp_path):
    out = tmp_path / "data"
    assert _run("gen-data", "--config", cfg_path, "--out", out) == 0
    ds = load_dataset(out / "dataset.bfds")
    assert len(ds) == 128 and ds.num_classes == 16

    # a dataset path works as input to train
    cfg_path.write_text(TINY + f"dataset = {out / 'dataset.bfds'}\n")
    assert _run("train", "--config", cfg_path, "--out", tmp_path / "r") == 0


def test_grad_check(cfg_path, tmp_path, capsys):
    assert _run("grad-check", "--config", cfg_path, "--out", tmp_path / "g") == 0
    assert "max relative error" in capsys.readouterr().out


@pytest.mark.parametrize(
    "text",
    ["bogus = 1\n", "batch_size = 0\n", "dataset = /nonexistent/file.bfds\n", "num_genuine = 100000\n"],
)
def test_config_errors_exit_2(cfg_path, tmp_path, text):
    cfg_path.write_text(TINY + text)
    cmd = "eval" if "genuine" in text else "train"
    if cmd == "eval":
        _run("train", "--config", cfg_path, "--out", tmp_path / "r")
    assert _run(cmd, "--config", cfg_path, "--out", tmp_path / "r") == 2


def test_missing_config_exits_2(tmp_path):
    assert _run("train", "--config", tmp_path / "absent.cfg") == 2


def test_numeric_failure_exits_3(cfg_path, tmp_path):
    cfg_path.write_text(TINY + "lr = 1e6\nmomentum = 0.99\nepochs = 20\n")
    assert _run("train", "--config", cfg_path, "--out", tmp_path / "r") == 3


def test_bad_subcommand_is_a_usage_error(cfg_path):
    with pytest.raises(SystemExit) as exc:
        _run("fly", "--config", cfg_path)
    assert exc.value.code == 2
