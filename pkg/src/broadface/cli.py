"""``bfe`` command-line runner.

    bfe <train|eval|sweep-queue|gen-data|grad-check> --config PATH [--out DIR] [--seed N]

Exit status: 0 ok, 2 config/input error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import logging
import sys
from pathlib import Path

import numpy as np

from . import encoder as enc_mod
from .config import ConfigError, ExperimentConfig, load_config
from .data import generate_synthetic, load_dataset, save_dataset, split_pairs, train_test_split
from .evaluation import rank1_identification, recall_at_k, verification_report
from .gradcheck import run_suite
from .linalg import NearZeroNorm
from .training import embed, fit

log = logging.getLogger("bfe")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3
GRAD_TOLERANCE = 1e-5


class NumericFailure(RuntimeError):
    pass


def _dataset(cfg: ExperimentConfig):
    if cfg.dataset == "synthetic":
        full = generate_synthetic(cfg.synthetic_spec())
    else:
        full = load_dataset(cfg.dataset)
        if full.feature_dim != cfg.layer_sizes[0]:
            raise ConfigError(f"{cfg.dataset} has {full.feature_dim} features, encoder expects {cfg.layer_sizes[0]}")
    return full, train_test_split(full, cfg.test_fraction, cfg.data_seed)


def write_metrics(path: Path, cfg: ExperimentConfig, rows) -> None:
    """``metric,step,value,extra`` rows after a ``# config=... seed=...`` comment line."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(f"# config={cfg.digest()} seed={cfg.seed}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["metric", "step", "value", "extra"])
        for metric, step, value, extra in rows:
            w.writerow([metric, int(step), repr(float(value)), extra])


def _prepare_out(cfg: ExperimentConfig, out: Path) -> None:
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.echo").write_text(cfg.canonical(), encoding="utf-8")


def cmd_train(cfg: ExperimentConfig, out: Path) -> int:
    _, (train, test) = _dataset(cfg)
    _prepare_out(cfg, out)
    result = fit(train, cfg.train_config(), test)
    enc_mod.save_checkpoint(result.encoder, out / "checkpoint.bfe")
    write_metrics(out / "metrics.csv", cfg, result.records)
    last = result.recall_history[-1]
    print(f"{cfg.train_config().label}: recall@{cfg.recall_ks[0]} {last[1]:.4f} after {last[0]} epochs")
    return EXIT_OK


def evaluate_checkpoint(cfg: ExperimentConfig, encoder) -> list[tuple[str, int, float, str]]:
    """Recall@K, TAR@FAR and rank-1 on the held-out split."""
    _, (_, test) = _dataset(cfg)
    E = embed(encoder, test.features)
    rows = [(f"recall@{k}", 0, v, "") for k, v in recall_at_k(E, test.labels, cfg.recall_ks).items()]
    pairs = split_pairs(test, cfg.num_genuine, cfg.num_impostor, cfg.data_seed)
    rep = verification_report(E, test.labels, pairs, cfg.far_targets)
    for far, tar, thr in zip(rep.far_targets, rep.tar_at_far, rep.thresholds):
        rows.append(("tar@far", 0, tar, f"far={far!r};threshold={thr!r}"))
    # first sample of each class is the gallery, the rest are probes
    first = np.zeros(len(test), dtype=bool)
    first[np.unique(test.labels, return_index=True)[1]] = True
    rows.append(("rank1", 0, rank1_identification(E[~first], test.labels[~first], E[first], test.labels[first]), ""))
    return rows


def cmd_eval(cfg: ExperimentConfig, out: Path) -> int:
    ckpt = out / "checkpoint.bfe"
    if not ckpt.exists():
        raise ConfigError(f"no checkpoint at {ckpt}; run `bfe train` first")
    encoder = enc_mod.load_checkpoint(ckpt)
    if tuple(encoder.layer_sizes) != tuple(cfg.layer_sizes):
        raise ConfigError(f"checkpoint layers {encoder.layer_sizes} != config layer_sizes {cfg.layer_sizes}")
    rows = evaluate_checkpoint(cfg, encoder)
    write_metrics(out / "eval.csv", cfg, rows)
    for metric, _, value, extra in rows:
        print(f"{metric} {value:.4f} {extra}".rstrip())
    return EXIT_OK


def cmd_sweep_queue(cfg: ExperimentConfig, out: Path) -> int:
    _, (train, test) = _dataset(cfg)
    _prepare_out(cfg, out)
    rows = []
    for cap in cfg.sweep_capacities:
        flags = [True, False] if cap and cfg.sweep_without_compensation else [True]
        for comp in flags:
            run = dataclasses.replace(cfg.train_config(), queue_capacity=cap, compensation=comp)
            result = fit(train, run, test)
            final = [r for r in result.records if r[0].startswith("recall@") and r[1] == cfg.epochs]
            for metric, _, value, _ in final:
                rows.append((f"final_{metric}", cap, value, f"compensation={str(comp).lower()}"))
            print(f"capacity {cap} compensation {comp}: recall@{cfg.recall_ks[0]} {result.recall_history[-1][1]:.4f}")
    write_metrics(out / "metrics.csv", cfg, rows)
    return EXIT_OK


def cmd_gen_data(cfg: ExperimentConfig, out: Path) -> int:
    if cfg.dataset != "synthetic":
        raise ConfigError("gen-data needs dataset=synthetic")
    full, _ = _dataset(cfg)
    _prepare_out(cfg, out)
    save_dataset(full, out / "dataset.bfds")
    print(f"wrote {len(full)} samples, {full.num_classes} classes to {out / 'dataset.bfds'}")
    return EXIT_OK


def cmd_grad_check(cfg: ExperimentConfig, out: Path) -> int:
    worst = run_suite(range(cfg.seed, cfg.seed + 100))
    _prepare_out(cfg, out)
    write_metrics(out / "metrics.csv", cfg, [("grad_rel_error", 0, v, k) for k, v in worst.items()])
    for k, v in worst.items():
        print(f"{k} max relative error {v:.3e}")
    top = max(worst.values())
    print(f"max relative error {top:.3e}")
    if top >= GRAD_TOLERANCE:
        raise NumericFailure(f"gradient check failed: {top:.3e} >= {GRAD_TOLERANCE}")
    return EXIT_OK


COMMANDS = {
    "train": cmd_train,
    "eval": cmd_eval,
    "sweep-queue": cmd_sweep_queue,
    "gen-data": cmd_gen_data,
    "grad-check": cmd_grad_check,
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="bfe", description="Embedding-queue metric-learning experiments.")
    p.add_argument("command", choices=sorted(COMMANDS))
    p.add_argument("--config", required=True, help="flat key=value config file")
    p.add_argument("--out", help="output directory (default: output_dir from the config)")
    p.add_argument("--seed", type=int, help="override the training seed")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg = dataclasses.replace(cfg, seed=args.seed).validate()
        out = Path(args.out if args.out is not None else cfg.output_dir)
        with np.errstate(over="raise", invalid="raise", divide="raise"):
            return COMMANDS[args.command](cfg, out)
    except (FloatingPointError, NearZeroNorm, NumericFailure) as exc:
        print(f"bfe: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ValueError, OSError) as exc:
        # ConfigError, DatasetError and infeasible protocol requests
        print(f"bfe: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
