"""``hbar`` command line: train | attack | ablate | sweep | theorems.

Exit codes: 0 ok, 2 config error, 3 numeric abort, 4 artifact/checkpoint error.
"""

from __future__ import annotations

import argparse
import csv
import io
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .config import ConfigError, ExperimentConfig, load_config, preset_names
from .data import Splits, desk_splits, load_mnist, synth_gaussian
from .evaluation import (ExperimentReport, config_hash, config_snapshot, robustness_table,
                         run_ablation, run_experiment, run_sensitivity, validate_theorem1,
                         validate_theorem2)
from .model import CheckpointError, init, load_checkpoint, save_checkpoint
from .objectives import HbarConfig
from .tensor import NonFiniteError
from .trainer import NumericAbort, train

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_ARTIFACT = 0, 2, 3, 4

log = logging.getLogger("hbar")

EPOCH_COLUMNS = ["epoch", "ce", "hsic_xz_sum", "hsic_yz_sum", "total", "natural_acc",
                 "hsic_xz_M_probe", "hsic_yz_M_probe"]
ROBUST_COLUMNS = ["attack_name", "r", "steps", "step_size", "loss_variant", "robust_acc"]


class ArtifactError(RuntimeError):
    pass


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_csv(path: Path, columns: list[str], rows: list[dict], chash: str) -> None:
    buf = io.StringIO()
    buf.write(f"# config_hash={chash} hbar_version={__version__}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([_fmt(r.get(c)) for c in columns])
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as f:
        f.write(buf.getvalue())


def _out_dir(cfg: ExperimentConfig, override: str | None) -> Path:
    base = Path(override) if override else cfg.output_dir
    return base / cfg.run_name


def build_splits(cfg: ExperimentConfig) -> Splits:
    d = cfg.data
    if d["source"] == "synthetic":
        full = synth_gaussian(d["n_train"] + d["n_test"] + d["n_probe"], d["synth_dim"],
                              d["synth_sigma"], seed=d["seed"])
        idx = np.arange(len(full))
        a, b = d["n_train"], d["n_train"] + d["n_test"]
        return Splits(full.take(idx[:a], "train"), full.take(idx[a:b], "test"), full.take(idx[b:], "probe"))
    try:
        tr, te = load_mnist(cfg.data_dir)
    except FileNotFoundError as e:
        raise ArtifactError(str(e)) from None
    return desk_splits(tr, te, d["n_train"], d["n_test"], d["n_probe"], d["seed"], d["stratified"])


def _snapshot(cfg: ExperimentConfig) -> dict:
    snap = config_snapshot(cfg.dims, cfg.train, cfg.eval_attacks)
    snap["data"] = {k: v for k, v in cfg.data.items() if k != "dir"}
    return snap


def _apply_seed_override(cfg: ExperimentConfig, seed: int | None) -> ExperimentConfig:
    if seed is None:
        return cfg
    cfg.train = replace(cfg.train, seed=seed)
    cfg.seeds = [seed]
    return cfg


def cmd_train(cfg: ExperimentConfig, out: Path) -> int:
    splits = build_splits(cfg)
    chash = config_hash(_snapshot(cfg))
    seed = cfg.train.seed
    net, logs = train(init(cfg.dims, seed), splits.train, cfg.train, splits.test, splits.probe)
    cols = EPOCH_COLUMNS + (["robust_acc"] if cfg.train.eval_attack is not None else [])
    write_csv(out / "epochs.csv", cols, [e.row() for e in logs], chash)
    save_checkpoint(net, out / "model.ckpt")
    log.info("wrote %s", out)
    return EXIT_OK


def cmd_attack(cfg: ExperimentConfig, out: Path, checkpoint: str | None) -> int:
    ckpt = Path(checkpoint) if checkpoint else out / "model.ckpt"
    net = load_checkpoint(ckpt)
    if net.dims != cfg.dims:
        raise CheckpointError(f"checkpoint dims {net.dims} do not match config dims {cfg.dims}")
    splits = build_splits(cfg)
    rows = robustness_table(net, splits.test, cfg.eval_attacks)
    write_csv(out / "robustness.csv", ROBUST_COLUMNS, rows, config_hash(_snapshot(cfg)))
    return EXIT_OK


def _report_rows(reports: list[ExperimentReport], attack_names: list[str], extra) -> tuple[list[str], list[dict]]:
    cols = list(extra(reports[0]).keys()) + ["n_seeds"]
    metrics = ["natural_acc", "hsic_xz_M", "hsic_yz_M"] + [f"robust:{a}" for a in attack_names]
    for m in metrics:
        name = m.replace("robust:", "robust_")
        cols += [name, name + "_std"]
    rows = []
    for rep in reports:
        row = dict(extra(rep))
        row["n_seeds"] = len(rep.runs)
        for m in metrics:
            name = m.replace("robust:", "robust_")
            row[name] = rep.mean(m)
            row[name + "_std"] = rep.std(m)
        rows.append(row)
    return cols, rows


def _seed_rows(reports, attack_names, label) -> tuple[list[str], list[dict]]:
    cols = [label, "seed", "natural_acc", "hsic_xz_M", "hsic_yz_M"] + [f"robust_{a}" for a in attack_names]
    rows = []
    for rep in reports:
        for r in rep.runs:
            row = {label: rep.name, "seed": r.seed, "natural_acc": r.natural_acc,
                   "hsic_xz_M": r.hsic_xz_M, "hsic_yz_M": r.hsic_yz_M}
            row.update({f"robust_{a}": r.robust[a] for a in attack_names})
            rows.append(row)
    return cols, rows


def cmd_ablate(cfg: ExperimentConfig, out: Path, workers: int) -> int:
    splits = build_splits(cfg)
    chash = config_hash(_snapshot(cfg))
    reports = run_ablation(cfg.dims, cfg.train, splits, cfg.eval_attacks, cfg.seeds, workers)
    names = list(cfg.eval_attacks)
    cols, rows = _report_rows(reports, names, lambda r: {
        "row": r.name, "objective": r.config["objective"],
        "lambda_x": r.config["train"]["hbar"]["lambda_x"],
        "lambda_y": r.config["train"]["hbar"]["lambda_y"],
        "use_ce": r.config["train"]["hbar"]["use_ce"]})
    write_csv(out / "ablation.csv", cols, rows, chash)
    cols, rows = _seed_rows(reports, names, "row")
    write_csv(out / "ablation_seeds.csv", cols, rows, chash)
    return EXIT_OK


def cmd_sweep(cfg: ExperimentConfig, out: Path, workers: int) -> int:
    splits = build_splits(cfg)
    chash = config_hash(_snapshot(cfg))
    reports = run_sensitivity(cfg.sweep_grid, cfg.dims, cfg.train, splits, cfg.eval_attacks,
                              cfg.seeds, workers)
    names = list(cfg.eval_attacks)
    cols, rows = _report_rows(reports, names, lambda r: {
        "lambda_x": r.config["train"]["hbar"]["lambda_x"],
        "lambda_y": r.config["train"]["hbar"]["lambda_y"]})
    write_csv(out / "sensitivity.csv", cols, rows, chash)
    cols, rows = _seed_rows(reports, names, "grid_point")
    write_csv(out / "sensitivity_seeds.csv", cols, rows, chash)
    return EXIT_OK


def theorem_models(cfg: ExperimentConfig, splits: Splits, dims, train_cfg, workers: int = 1):
    th = cfg.theorems
    settings = [("ce", (0.0, 0.0)), ("hbar_low", th["low"][0]), ("hbar_high", th["high"][0])]
    nets = []
    for name, (lx, ly) in settings:
        c = replace(train_cfg, hbar=HbarConfig(lx, ly, train_cfg.hbar.layer_mask))
        rep = run_experiment(name, dims, c, splits, {}, [train_cfg.seed], workers, keep_nets=True)
        nets.append((name, rep.runs[0].net))
    return nets


def cmd_theorems(cfg: ExperimentConfig, out: Path, workers: int) -> int:
    th = cfg.theorems
    chash = config_hash({**_snapshot(cfg), "theorems": th})
    splits = build_splits(cfg)
    nets1 = theorem_models(cfg, splits, cfg.dims, cfg.train, workers)
    t1 = validate_theorem1([n for _, n in nets1], splits.probe, cfg.train.kernels)

    synth = synth_gaussian(th["synth_n_train"] + th["synth_n_probe"], th["synth_dims"][0],
                           cfg.data["synth_sigma"], seed=cfg.data["seed"])
    idx = np.arange(len(synth))
    s_train = synth.take(idx[:th["synth_n_train"]], "train")
    s_probe = synth.take(idx[th["synth_n_train"]:], "probe")
    s_splits = Splits(s_train, s_probe, s_probe)
    s_cfg = replace(cfg.train, epochs=th["synth_epochs"], learning_rate=th["synth_learning_rate"],
                    lr_schedule=(), adversarial=None, eval_attack=None)
    nets2 = theorem_models(cfg, s_splits, th["synth_dims"], s_cfg, workers)
    t2 = validate_theorem2([n for _, n in nets2], s_probe, th["radii"], th["r_fixed"],
                           cfg.train.kernels, th["sens_steps"])

    models = ";".join(n for n, _ in nets1)

    def detail(t, keys):
        return " ".join(f"{k}={t[k]!r}" for k in keys)
    rows = [
        {"check": "thm1", "models": models, "spearman": t1["spearman"], "verdict": t1["verdict"],
         "detail": detail(t1, ["hsic_xz_M", "output_variance"])},
        {"check": "thm2", "models": models, "spearman": t2["spearman"], "verdict": t2["verdict"],
         "detail": detail(t2, ["radii", "sensitivity", "hsic_xz_M", "zero_at_zero", "monotone"])},
    ]
    write_csv(out / "theorems.csv", ["check", "models", "spearman", "verdict", "detail"], rows, chash)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="hbar", description="HSIC-bottleneck regularized training and attacks")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)
    for name in ("train", "attack", "ablate", "sweep", "theorems"):
        s = sub.add_parser(name)
        s.add_argument("--config", required=True, help="config file or preset:<name>")
        s.add_argument("--out", help="output root (default: [output] dir)")
        s.add_argument("--workers", type=int, default=1)
        s.add_argument("--seed-override", type=int, default=None)
        s.add_argument("-v", "--verbose", action="store_true")
        if name == "attack":
            s.add_argument("--checkpoint")
    sub.add_parser("presets", help="list bundled preset names")
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "presets":
        print("\n".join(preset_names()))
        return EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    try:
        cfg = _apply_seed_override(load_config(args.config), args.seed_override)
    except ConfigError as e:
        print(f"hbar: config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    out = _out_dir(cfg, args.out)
    try:
        if args.command == "train":
            return cmd_train(cfg, out)
        if args.command == "attack":
            return cmd_attack(cfg, out, args.checkpoint)
        if args.command == "ablate":
            return cmd_ablate(cfg, out, args.workers)
        if args.command == "sweep":
            return cmd_sweep(cfg, out, args.workers)
        return cmd_theorems(cfg, out, args.workers)
    except (NumericAbort, NonFiniteError) as e:
        print(f"hbar: numeric abort: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except (CheckpointError, ArtifactError, OSError) as e:
        print(f"hbar: artifact error: {e}", file=sys.stderr)
        return EXIT_ARTIFACT


if __name__ == "__main__":
    sys.exit(main())
