"""Command-line front end: gen-data, train, sweep, eval.

Option precedence for `train`: built-in defaults are overridden by the
--config JSON file, which is overridden by explicit flags. Every run echoes
its fully resolved configuration into summary.json. Exit codes: 0 success,
2 usage error, 3 runtime abort (non-finite loss or unsatisfiable cluster
constraint), 4 I/O or parse failure.
"""

from __future__ import annotations

import argparse
import csv
import itertools
import json
import math
import os
import sys

import numpy as np

from . import backbone as bb
from . import data as dt
from . import kmeans as km
from . import metrics as mt
from . import rebalance as rb
from . import trainer as tr
from .errors import (
    CorruptCheckpointError,
    NonFiniteError,
    OdclabError,
    ParseError,
    UnsatisfiableError,
)
from .numerics import derive_seeds, format_float, make_rng

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_RUNTIME = 3
EXIT_IO = 4

# built-in defaults; a --config file overrides these, explicit flags override both
TRAIN_DEFAULTS = {
    "algo": "odc",
    "clusters": None,          # None: 10 x number of true classes in the data
    "batch_size": 64,
    "epochs": 50,
    "momentum": 0.5,
    "centroid_interval": 10,
    "min_cluster_size": None,  # None: max(2, floor(0.2 * n / clusters))
    "check_every": None,       # None: same as centroid_interval
    "lr": 0.005,
    "sgd_momentum": 0.9,
    "weight_decay": 0.0,
    "lr_decay_epoch": 15,
    "seed": 0,
    "uniform_sampling": False,
    "hidden_dim": 32,
    "feature_dim": 16,
    "kmeans_restarts": 10,
    "resume": None,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="odclab",
        description="Desk-scale online deep clustering experiments.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_gen = sub.add_parser("gen-data", help="generate Gaussian-blob features")
    p_gen.add_argument("--classes", type=int, default=5, help="true class count (default 5)")
    p_gen.add_argument("--dim", type=int, default=16, help="feature dimension (default 16)")
    p_gen.add_argument("--n", type=int, default=2000, help="total samples (default 2000)")
    p_gen.add_argument("--longtail-ratio", type=float, default=1.0,
                       help="largest/smallest class size ratio, >= 1 (default 1)")
    p_gen.add_argument("--separation", type=float, default=6.0,
                       help="min distance between class means in stds (default 6)")
    p_gen.add_argument("--seed", type=int, default=0)
    p_gen.add_argument("--out", required=True, help="output CSV path")

    p_train = sub.add_parser(
        "train", help="run one training job",
        description="Precedence: defaults < --config JSON < explicit flags.",
    )
    p_train.add_argument("--data", required=True, help="input feature CSV")
    p_train.add_argument("--out-dir", required=True,
                         help="directory for metrics.csv, summary.json, labels.csv")
    p_train.add_argument("--config", default=None,
                         help="JSON file with default overrides")
    p_train.add_argument("--algo", choices=["odc", "dc"], default=None,
                         help="training loop (default odc)")
    p_train.add_argument("--clusters", type=int, default=None,
                         help="cluster count (default: 10x true classes)")
    p_train.add_argument("--batch-size", type=int, default=None, help="default 64")
    p_train.add_argument("--epochs", type=int, default=None, help="default 50")
    p_train.add_argument("--momentum", type=float, default=None,
                         help="memory feature blend weight (default 0.5)")
    p_train.add_argument("--centroid-interval", type=int, default=None,
                         help="iterations between centroid refreshes (default 10)")
    p_train.add_argument("--min-cluster-size", type=int, default=None,
                         help="small-cluster threshold (default max(2, 0.2*n/clusters))")
    p_train.add_argument("--check-every", type=int, default=None,
                         help="iterations between rebalance checks (default: centroid interval)")
    p_train.add_argument("--lr", type=float, default=None, help="default 0.005")
    p_train.add_argument("--sgd-momentum", type=float, default=None, help="default 0.9")
    p_train.add_argument("--weight-decay", type=float, default=None, help="default 0")
    p_train.add_argument("--lr-decay-epoch", type=int, default=None,
                         help="epoch at which lr is multiplied once by 0.1 (default 15)")
    p_train.add_argument("--seed", type=int, default=None, help="default 0")
    p_train.add_argument("--uniform-sampling", action="store_true", default=None,
                         help="dc only: uniform-over-cluster sampling instead of re-weighting")
    p_train.add_argument("--hidden-dim", type=int, default=None, help="default 32")
    p_train.add_argument("--feature-dim", type=int, default=None, help="default 16")
    p_train.add_argument("--kmeans-restarts", type=int, default=None, help="default 10")
    p_train.add_argument("--resume", default=None, help="checkpoint to fine-tune from")
    p_train.add_argument("--checkpoint-out", default=None,
                         help="write the trained backbone here")

    p_sweep = sub.add_parser(
        "sweep", help="grid of runs over hyperparameters",
        description="One run per grid point (cartesian product) per seed; "
                    "rows are ordered by grid index, not completion order.",
    )
    p_sweep.add_argument("--classes", type=int, default=5)
    p_sweep.add_argument("--dim", type=int, default=16)
    p_sweep.add_argument("--n", type=int, default=2000)
    p_sweep.add_argument("--separation", type=float, default=6.0)
    p_sweep.add_argument("--clusters", type=int, default=None,
                         help="default: 10x classes")
    p_sweep.add_argument("--batch-size", type=int, default=64)
    p_sweep.add_argument("--epochs", type=int, default=50)
    p_sweep.add_argument("--algo", choices=["odc", "dc"], default="odc")
    p_sweep.add_argument("--lr", type=float, default=0.005)
    p_sweep.add_argument("--centroid-interval-grid", default=None,
                         help="comma list, e.g. 1,5,20 (default: 10)")
    p_sweep.add_argument("--min-cluster-size-grid", default=None,
                         help="comma list (default: auto threshold)")
    p_sweep.add_argument("--momentum-grid", default=None,
                         help="comma list (default: 0.5)")
    p_sweep.add_argument("--longtail-grid", default=None,
                         help="comma list of data long-tail ratios (default: 1)")
    p_sweep.add_argument("--seeds", default="0",
                         help="comma list of seeds; each grid point runs once per seed")
    p_sweep.add_argument("--out", required=True, help="aggregate CSV path")

    p_eval = sub.add_parser("eval", help="score labels or a checkpoint")
    p_eval.add_argument("--pred", default=None, help="predicted labels file")
    p_eval.add_argument("--truth", default=None, help="ground-truth labels file")
    p_eval.add_argument("--checkpoint", default=None,
                        help="backbone checkpoint; cluster its features instead of --pred")
    p_eval.add_argument("--data", default=None,
                        help="feature CSV with label column (checkpoint mode)")
    p_eval.add_argument("--clusters", type=int, default=None,
                        help="checkpoint mode cluster count (default: classifier width)")
    p_eval.add_argument("--seed", type=int, default=0)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    handler = {
        "gen-data": cmd_gen_data,
        "train": cmd_train,
        "sweep": cmd_sweep,
        "eval": cmd_eval,
    }[args.command]
    try:
        return handler(args)
    except (NonFiniteError, UnsatisfiableError) as exc:
        print(f"odclab: runtime abort: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except (ParseError, CorruptCheckpointError, OSError) as exc:
        print(f"odclab: {exc}", file=sys.stderr)
        return EXIT_IO
    except (ValueError, OdclabError) as exc:
        print(f"odclab: {exc}", file=sys.stderr)
        return EXIT_USAGE


def cmd_gen_data(args) -> int:
    spec = dt.BlobSpec(
        n_classes=args.classes,
        dim=args.dim,
        n_total=args.n,
        class_separation=args.separation,
        longtail_ratio=args.longtail_ratio,
        seed=args.seed,
    )
    dataset = dt.gen_blobs(spec)
    dt.write_csv(dataset, args.out)
    sizes = np.bincount(dataset.true_labels, minlength=spec.n_classes)
    print(f"wrote {dataset.n} x {dataset.dim} samples to {args.out} "
          f"(class sizes {sizes.tolist()})")
    return EXIT_OK


def _load_train_options(args) -> dict:
    options = dict(TRAIN_DEFAULTS)
    if args.config:
        with open(args.config, "r", encoding="utf-8") as f:
            file_options = json.load(f)
        unknown = set(file_options) - set(TRAIN_DEFAULTS)
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        options.update(file_options)
    for key in TRAIN_DEFAULTS:
        value = getattr(args, key, None)
        if value is not None:
            options[key] = value
    return options


def _run_config(options: dict, n: int, n_true_classes: int | None) -> tr.RunConfig:
    clusters = options["clusters"]
    if clusters is None:
        if n_true_classes is None:
            raise ValueError(
                "--clusters is required when the data has no label column"
            )
        clusters = 10 * n_true_classes
    min_size = options["min_cluster_size"]
    if min_size is None:
        min_size = rb.default_min_cluster_size(n, clusters)
    rebalance = rb.RebalanceConfig(
        min_cluster_size=min_size,
        check_every=options["check_every"] or options["centroid_interval"],
    )
    return tr.RunConfig(
        algo=options["algo"],
        n_clusters=clusters,
        batch_size=options["batch_size"],
        epochs=options["epochs"],
        momentum=options["momentum"],
        centroid_interval=options["centroid_interval"],
        rebalance=rebalance,
        sgd=bb.SgdConfig(
            learning_rate=options["lr"],
            momentum=options["sgd_momentum"],
            weight_decay=options["weight_decay"],
        ),
        seed=options["seed"],
        dc_uniform_sampling=bool(options["uniform_sampling"]),
        resume_checkpoint=options["resume"],
        hidden_dim=options["hidden_dim"],
        feature_dim=options["feature_dim"],
        kmeans_restarts=options["kmeans_restarts"],
        lr_decay_epoch=options["lr_decay_epoch"],
    )


def cmd_train(args) -> int:
    options = _load_train_options(args)
    dataset = dt.load_csv(args.data)
    n_true = None
    if dataset.true_labels is not None:
        n_true = int(np.unique(dataset.true_labels).size)
    cfg = _run_config(options, dataset.n, n_true)
    rng = make_rng(cfg.seed)
    log = tr.train(dataset.points, cfg, rng, dataset.true_labels)

    os.makedirs(args.out_dir, exist_ok=True)
    tr.write_metrics_csv(log, os.path.join(args.out_dir, "metrics.csv"))
    tr.write_summary_json(log, os.path.join(args.out_dir, "summary.json"))
    _write_labels(log.final_labels, os.path.join(args.out_dir, "labels.csv"))
    # timing is non-deterministic by nature, so it lives outside summary.json
    with open(os.path.join(args.out_dir, "timing.json"), "w", encoding="utf-8") as f:
        json.dump({"wall_time_sec": log.wall_time_sec}, f)
        f.write("\n")
    if args.checkpoint_out:
        bb.save_checkpoint(log.backbone, args.checkpoint_out)
    nmi_text = "n/a" if log.final_nmi is None else f"{log.final_nmi:.4f}"
    print(f"{cfg.algo}: {len(log.records)} iterations, final NMI {nmi_text}, "
          f"wall time {log.wall_time_sec:.2f}s, outputs in {args.out_dir}")
    return EXIT_OK


def _write_labels(labels: np.ndarray, path: str) -> None:
    with open(path, "w", encoding="utf-8", newline="") as f:
        f.write("label\n")
        for value in labels:
            f.write(f"{int(value)}\n")


def _read_labels(path: str) -> np.ndarray:
    """A labels file is either a headerless single column of integers or any
    CSV whose header names a `label` column."""
    with open(path, "r", encoding="utf-8", newline="") as f:
        rows = [r for r in csv.reader(f) if r]
    if not rows:
        raise ParseError(f"{path}: empty file")
    lowered = [c.strip().lower() for c in rows[0]]
    if "label" in lowered:
        col = lowered.index("label")
        start = 1
    elif len(rows[0]) == 1:
        col = 0
        start = 0
    else:
        raise ParseError(f"{path}: cannot locate a 'label' column")
    values = []
    for i, row in enumerate(rows[start:]):
        cell = row[col] if col < len(row) else ""
        try:
            values.append(int(cell))
        except ValueError:
            raise ParseError(f"{path}: malformed label {cell!r}",
                             row=i + start + 1, col=col + 1) from None
    if not values:
        raise ParseError(f"{path}: no label rows")
    return np.asarray(values, dtype=np.int64)


def _parse_grid(text: str | None, cast, fallback):
    if text is None:
        return [fallback]
    return [cast(tok) for tok in text.split(",") if tok.strip()]


def cmd_sweep(args) -> int:
    clusters = args.clusters if args.clusters is not None else 10 * args.classes
    intervals = _parse_grid(args.centroid_interval_grid, int, 10)
    min_sizes = _parse_grid(args.min_cluster_size_grid, int, None)
    momenta = _parse_grid(args.momentum_grid, float, 0.5)
    ratios = _parse_grid(args.longtail_grid, float, 1.0)
    seeds = [int(tok) for tok in args.seeds.split(",") if tok.strip()]

    grid = list(itertools.product(intervals, min_sizes, momenta, ratios, seeds))
    rows = []
    for grid_index, (interval, min_size, momentum, ratio, seed) in enumerate(grid):
        data_seed, train_seed = derive_seeds(seed, 2)
        dataset = dt.gen_blobs(dt.BlobSpec(
            n_classes=args.classes, dim=args.dim, n_total=args.n,
            class_separation=args.separation, longtail_ratio=ratio,
            seed=data_seed,
        ))
        rebalance = None
        if min_size is not None:
            rebalance = rb.RebalanceConfig(min_cluster_size=min_size,
                                           check_every=interval)
        cfg = tr.RunConfig(
            algo=args.algo, n_clusters=clusters, batch_size=args.batch_size,
            epochs=args.epochs, momentum=momentum, centroid_interval=interval,
            rebalance=rebalance, sgd=bb.SgdConfig(learning_rate=args.lr),
            seed=train_seed,
        )
        row = {
            "grid_index": grid_index,
            "centroid_interval": interval,
            "min_cluster_size": "" if min_size is None else min_size,
            "momentum": format_float(momentum),
            "longtail_ratio": format_float(ratio),
            "seed": seed,
        }
        try:
            log = tr.train(dataset.points, cfg, make_rng(train_seed),
                           dataset.true_labels)
        except UnsatisfiableError:
            row.update(status="unsatisfiable", final_nmi="", final_purity="",
                       max_boundary_jump="", max_interior_jump="")
            rows.append(row)
            continue
        epoch_len = math.ceil(dataset.n / args.batch_size)
        if len(log.records) >= 2 * epoch_len:
            boundary, interior = mt.loss_stability(
                log.losses(unweighted=True), epoch_len)
            boundary_text = format_float(boundary)
            interior_text = format_float(interior)
        else:
            boundary_text = interior_text = ""
        row.update(
            status="ok",
            final_nmi="" if log.final_nmi is None else format_float(log.final_nmi),
            final_purity="" if log.final_purity is None else format_float(log.final_purity),
            max_boundary_jump=boundary_text,
            max_interior_jump=interior_text,
        )
        rows.append(row)

    fieldnames = ["grid_index", "centroid_interval", "min_cluster_size",
                  "momentum", "longtail_ratio", "seed", "status", "final_nmi",
                  "final_purity", "max_boundary_jump", "max_interior_jump"]
    tmp = args.out + ".tmp"
    with open(tmp, "w", encoding="utf-8", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=fieldnames, lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow(row)
    os.replace(tmp, args.out)
    print(f"wrote {len(rows)} runs to {args.out}")
    return EXIT_OK


def cmd_eval(args) -> int:
    if args.checkpoint:
        if not args.data:
            raise ValueError("checkpoint mode needs --data")
        model = bb.load_checkpoint(args.checkpoint)
        dataset = dt.load_csv(args.data)
        if dataset.true_labels is None:
            raise ValueError("checkpoint mode needs a label column in --data")
        feats = tr.extract_unit_features(model, dataset.points)
        clusters = args.clusters or model.n_classes
        result = km.kmeans(feats, clusters, make_rng(args.seed))
        pred, truth = result.assignments, dataset.true_labels
    else:
        if not (args.pred and args.truth):
            raise ValueError("eval needs either --checkpoint or --pred plus --truth")
        pred = _read_labels(args.pred)
        truth = _read_labels(args.truth)
    print(json.dumps(
        {"nmi": mt.nmi(pred, truth), "purity": mt.purity(pred, truth)},
        sort_keys=True,
    ))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
