"""Command-line entry point wiring every stage together.

Subcommands: synth, preprocess, train, evaluate, predict, sweep-lookback,
sweep-horizon, export-plot-data.  Every run resolves its configuration
(flags > config file > defaults), writes a run manifest with input hashes
before any output artifact, and exits 0 on success, 1 on validation
failures, 2 on usage errors, 70 on internal faults.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
import traceback
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .metrics import (
    evaluate_model,
    export_series,
    sweep_horizon,
    sweep_lookback,
    write_reports,
)
from .model import ModelConfig, load_checkpoint, save_checkpoint
from .pipeline import (
    PipelineError,
    assemble,
    ingest_csv,
    prepare_corridor,
    write_pipeline_manifest,
)
from .synth import MOVEMENTS, SynthConfig, generate
from .topology import TopologyError, load_topology
from .trainer import TrainConfig, predict_batch, split_train_test, train


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", type=Path, default=None,
                        help="JSON file of option defaults (flags take precedence)")
    parser.add_argument("--threads", default=None,
                        help="worker hint, mirrors MGCNN_THREADS (default: auto)")
    parser.add_argument("--serial", action="store_true",
                        help="single-threaded, bit-reproducible artifacts")
    parser.add_argument("--out-dir", type=Path, required=True,
                        help="directory for output artifacts and the run manifest")


def _add_data(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--data-dir", type=Path, required=True,
                        help="directory of per-intersection CSVs")
    parser.add_argument("--topology", type=Path, default=None,
                        help="topology file (default: <data-dir>/topology.txt)")
    parser.add_argument("--train-days", type=int, default=19,
                        help="days in the training partition (default: 19)")
    parser.add_argument("--total-days", type=int, default=20,
                        help="days in the dataset (default: 20)")
    parser.add_argument("--collinearity-threshold", type=float, default=0.8,
                        help="|r| above which one of a non-target pair is dropped "
                             "(default: 0.8)")


def _add_train_like(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--epochs", type=int, default=50,
                        help="maximum training epochs (default: 50)")
    parser.add_argument("--batch-size", type=int, default=16,
                        help="minibatch size (default: 16)")
    parser.add_argument("--lr", type=float, default=0.0007,
                        help="learning rate (default: 0.0007)")
    parser.add_argument("--lr-decay", type=float, default=0.1,
                        help="decay factor applied every --lr-decay-every epochs "
                             "(default: 0.1)")
    parser.add_argument("--lr-decay-every", type=int, default=10,
                        help="epochs between learning-rate decays (default: 10)")
    parser.add_argument("--dropout", type=float, default=0.35,
                        help="dropout rate (default: 0.35)")
    parser.add_argument("--seed", type=int, default=0,
                        help="training seed (default: 0)")
    parser.add_argument("--cheb-order", type=int, default=3,
                        help="Chebyshev filter order K (default: 3)")
    parser.add_argument("--channels1", type=int, default=32,
                        help="layer-1 output channels (default: 32)")
    parser.add_argument("--channels2", type=int, default=32,
                        help="layer-2 output channels (default: 32)")
    parser.add_argument("--lambda-max", default="power",
                        help="'power' to estimate per snapshot, or 'fixed:<value>' "
                             "(default: power)")
    parser.add_argument("--patience", type=int, default=10,
                        help="early-stop patience in epochs, 0 disables (default: 10)")
    parser.add_argument("--train-stride", type=int, default=5,
                        help="train on every k-th window; overlapping windows make "
                             "consecutive samples redundant (default: 5)")
    parser.add_argument("--weight-transform", choices=["none", "inverse"],
                        default="none",
                        help="edge weights enter the Laplacian as raw travel times, "
                             "or as 1/travel-time affinities (default: none)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mgcnn",
        description="Multigraph spectral convolution for turning-movement forecasting",
    )
    parser.add_argument("--version", action="version", version=f"mgcnn {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic corridor dataset")
    _add_common(p)
    p.add_argument("--seed", type=int, default=7, help="generator seed (default: 7)")
    p.add_argument("--days", type=int, default=20, help="days to generate (default: 20)")
    p.add_argument("--nodes", type=int, default=10,
                   help="intersections along the corridor (default: 10)")
    p.add_argument("--outlier-rate", type=float, default=0.002,
                   help="fraction of extreme count outliers injected (default: 0.002)")

    p = sub.add_parser("preprocess", help="run the cleaning pipeline, write its manifest")
    _add_common(p)
    _add_data(p)

    p = sub.add_parser("train", help="train a model and write a checkpoint")
    _add_common(p)
    _add_data(p)
    _add_train_like(p)
    p.add_argument("--lookback", type=int, default=10,
                   help="lookback window M in minutes (default: 10)")
    p.add_argument("--horizon", type=int, default=5,
                   help="prediction horizon N in minutes (default: 5)")

    p = sub.add_parser("evaluate", help="score a checkpoint against the naive baselines")
    _add_common(p)
    _add_data(p)
    p.add_argument("--ckpt", type=Path, required=True, help="model checkpoint")

    p = sub.add_parser("predict", help="emit test-day predictions in raw counts")
    _add_common(p)
    _add_data(p)
    p.add_argument("--ckpt", type=Path, required=True, help="model checkpoint")
    p.add_argument("--at-minute", type=int, default=None,
                   help="predict only for the window ending at this minute")

    p = sub.add_parser("sweep-lookback", help="train/evaluate across lookback windows")
    _add_common(p)
    _add_data(p)
    _add_train_like(p)
    p.add_argument("--horizon", type=int, default=5,
                   help="prediction horizon N in minutes (default: 5)")
    p.add_argument("--lookbacks", default="10,20,30,40,50,60",
                   help="comma-separated M values (default: 10,20,30,40,50,60)")

    p = sub.add_parser("sweep-horizon", help="train/evaluate across prediction horizons")
    _add_common(p)
    _add_data(p)
    _add_train_like(p)
    p.add_argument("--lookback", type=int, default=10,
                   help="lookback window M in minutes (default: 10)")
    p.add_argument("--horizons", default="1,2,3,4,5",
                   help="comma-separated N values (default: 1,2,3,4,5)")

    p = sub.add_parser("export-plot-data",
                       help="write a truth-vs-prediction series for one movement")
    _add_common(p)
    _add_data(p)
    p.add_argument("--ckpt", type=Path, required=True, help="model checkpoint")
    p.add_argument("--node", default=None,
                   help="intersection id (default: first node)")
    p.add_argument("--movement", default="WB_T",
                   help=f"one of {','.join(MOVEMENTS)} (default: WB_T)")
    return parser


def _apply_config_file(args: argparse.Namespace, argv: list[str]) -> None:
    """Config-file values override defaults but not explicitly passed flags."""
    if getattr(args, "config", None) is None:
        return
    try:
        overrides = json.loads(Path(args.config).read_text())
    except Exception as exc:
        raise PipelineError(f"bad config file {args.config}: {exc}") from exc
    if not isinstance(overrides, dict):
        raise PipelineError(f"config file {args.config} must hold a JSON object")
    explicit = {a.lstrip("-").replace("-", "_") for a in argv if a.startswith("--")}
    for key, value in overrides.items():
        attr = key.replace("-", "_")
        if not hasattr(args, attr):
            raise PipelineError(f"config file option {key!r} is not a {args.command} option")
        if attr not in explicit:
            setattr(args, attr, value)


def _hash_file(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _write_manifest(args: argparse.Namespace, inputs: list[Path]) -> None:
    """Run manifest: command, resolved config, seed, input hashes, version,
    timestamp.  Written before any other artifact."""
    out_dir: Path = args.out_dir
    out_dir.mkdir(parents=True, exist_ok=True)
    resolved = {
        k: (str(v) if isinstance(v, Path) else v)
        for k, v in sorted(vars(args).items())
        if not k.startswith("_")
    }
    lines = [
        "mgcnn-run-manifest-v1",
        f"command: {args.command}",
        "argv: " + " ".join(getattr(args, "_argv", [])),
        f"version: {__version__}",
        f"timestamp: {datetime.now(timezone.utc).isoformat()}",
        f"seed: {getattr(args, 'seed', 'n/a')}",
        f"threads: {args.threads}",
        f"serial: {args.serial}",
        "config: " + json.dumps(resolved, sort_keys=True),
    ]
    for path in sorted(set(inputs)):
        lines.append(f"input {path} sha256={_hash_file(Path(path))}")
    (out_dir / "run_manifest.txt").write_text("\n".join(lines) + "\n")


def _data_inputs(args: argparse.Namespace) -> tuple[Path, list[Path]]:
    topo_path = args.topology or args.data_dir / "topology.txt"
    if not topo_path.exists():
        raise PipelineError(f"topology file not found: {topo_path}")
    csvs = sorted(args.data_dir.glob("*.csv"))
    if not csvs:
        raise PipelineError(f"no CSV files in {args.data_dir}")
    return topo_path, csvs


def _prepare(args: argparse.Namespace):
    topo_path, csvs = _data_inputs(args)
    topology = load_topology(topo_path)
    series = ingest_csv(csvs)
    prepared = prepare_corridor(
        series,
        topology,
        train_days=args.train_days,
        collinearity_threshold=args.collinearity_threshold,
    )
    return prepared, [topo_path, *csvs]


def _parse_lambda(text: str) -> float | None:
    if text == "power":
        return None
    if text.startswith("fixed:"):
        value = float(text.split(":", 1)[1])
        if value <= 0:
            raise PipelineError("fixed lambda_max must be positive")
        return value
    raise PipelineError(f"bad --lambda-max {text!r}; use 'power' or 'fixed:<value>'")


def _model_train_configs(args: argparse.Namespace) -> tuple[ModelConfig, TrainConfig]:
    model_config = ModelConfig(
        cheb_order=args.cheb_order,
        channels1=args.channels1,
        channels2=args.channels2,
        dropout_rate=args.dropout,
        lambda_max=_parse_lambda(args.lambda_max),
        weight_transform=args.weight_transform,
    )
    train_config = TrainConfig(
        learning_rate=args.lr,
        lr_decay_factor=args.lr_decay,
        lr_decay_every=args.lr_decay_every,
        batch_size=args.batch_size,
        epochs=args.epochs,
        dropout_rate=args.dropout,
        seed=args.seed,
        train_stride=args.train_stride,
        early_stop_patience=args.patience,
    )
    return model_config, train_config


def _log(message: str) -> None:
    print(message, file=sys.stderr)


def cmd_synth(args) -> int:
    config = SynthConfig(
        n_intersections=args.nodes,
        days=args.days,
        seed=args.seed,
        outlier_rate=args.outlier_rate,
    )
    config.validate()
    _write_manifest(args, [])
    topo_path, csv_paths = generate(config, args.out_dir)
    _log(f"wrote {topo_path} and {len(csv_paths)} intersection CSVs")
    return 0


def cmd_preprocess(args) -> int:
    prepared, inputs = _prepare(args)
    _write_manifest(args, inputs)
    manifest = args.out_dir / "pipeline_manifest.txt"
    write_pipeline_manifest(manifest, prepared)
    _log(f"kept {len(prepared.kept_ids)} of 85 attributes; manifest at {manifest}")
    return 0


def cmd_train(args) -> int:
    prepared, inputs = _prepare(args)
    _write_manifest(args, inputs)
    model_config, train_config = _model_train_configs(args)
    dataset = assemble(prepared, args.lookback, args.horizon,
                       lambda_max=model_config.lambda_max,
                       weight_transform=model_config.weight_transform)
    train_set, _ = split_train_test(dataset, args.train_days, args.total_days)
    _log(f"training on {len(train_set)} windows "
         f"(M={args.lookback}, N={args.horizon}, F={dataset.n_features})")
    params, history = train(train_set, model_config, train_config, log=_log)
    save_checkpoint(
        args.out_dir / "model.ckpt",
        params,
        model_config,
        n_nodes=prepared.n,
        n_features=dataset.n_features,
        lookback=args.lookback,
        horizon=args.horizon,
        kept_attributes=prepared.kept_names,
    )
    history.export(args.out_dir / "history.csv", zero_seconds=args.serial)
    write_pipeline_manifest(args.out_dir / "pipeline_manifest.txt", prepared)
    _log(f"checkpoint at {args.out_dir / 'model.ckpt'}")
    return 0


def _inference_setup(args):
    """Load a checkpoint, run the pipeline, validate feature compatibility,
    and write the run manifest."""
    params, model_config, meta = load_checkpoint(args.ckpt)
    prepared, inputs = _prepare(args)
    if prepared.n_features != meta["F"]:
        raise PipelineError(
            f"checkpoint expects {meta['F']} features but the pipeline produced "
            f"{prepared.n_features}; rerun with matching data and flags"
        )
    inputs.append(args.ckpt)
    _write_manifest(args, inputs)
    dataset = assemble(prepared, meta["m"], meta["N"],
                       lambda_max=model_config.lambda_max,
                       weight_transform=model_config.weight_transform)
    return params, meta, prepared, dataset


def _target_stats(prepared):
    mean12 = np.stack([s.mean[:12] for s in prepared.stats])
    std12 = np.stack([s.std[:12] for s in prepared.stats])
    return mean12, std12


def cmd_evaluate(args) -> int:
    params, meta, prepared, dataset = _inference_setup(args)
    train_set, test_set = split_train_test(dataset, args.train_days, args.total_days)
    mean12, std12 = _target_stats(prepared)
    reports = evaluate_model(params, test_set, train_set, mean12, std12,
                             horizon=meta["N"], lookback=meta["m"])
    rows = [reports["mgcnn_norm"], reports["mgcnn_raw"],
            reports["persistence_raw"], reports["historical_raw"]]
    write_reports(rows, args.out_dir / "report.txt", args.out_dir / "report.jsonl")
    _log((args.out_dir / "report.txt").read_text().rstrip())
    return 0


def cmd_predict(args) -> int:
    params, meta, prepared, dataset = _inference_setup(args)
    _, test_set = split_train_test(dataset, args.train_days, args.total_days)
    if args.at_minute is not None:
        ends = test_set.minutes[test_set.end_indices]
        hits = np.flatnonzero(ends == args.at_minute)
        if hits.size == 0:
            raise PipelineError(
                f"no test window ends at minute {args.at_minute} "
                f"(test windows end in [{ends.min()}, {ends.max()}])"
            )
        test_set = test_set.subset(hits)
    preds_norm = predict_batch(test_set, params)
    mean12, std12 = _target_stats(prepared)
    preds_raw = preds_norm * np.where(std12 == 0, 1.0, std12) + mean12
    lines = ["minute,node,movement,predicted,observed"]
    minutes = test_set.target_minutes()
    for w in range(len(test_set)):
        for ni, node in enumerate(prepared.topology.node_ids):
            for k, mv in enumerate(MOVEMENTS):
                lines.append(
                    f"{minutes[w]},{node},{mv},{preds_raw[w, ni, k]:.6g},"
                    f"{test_set.win_targets_raw[w, ni, k]:.6g}"
                )
    (args.out_dir / "predictions.csv").write_text("\n".join(lines) + "\n")
    _log(f"wrote {len(lines) - 1} predictions to {args.out_dir / 'predictions.csv'}")
    return 0


def _parse_int_list(text: str) -> list[int]:
    try:
        return [int(v) for v in str(text).split(",") if v != ""]
    except ValueError:
        raise PipelineError(f"bad integer list {text!r}") from None


def cmd_sweep_lookback(args) -> int:
    prepared, inputs = _prepare(args)
    _write_manifest(args, inputs)
    model_config, train_config = _model_train_configs(args)
    rows = sweep_lookback(
        prepared,
        lookbacks=_parse_int_list(args.lookbacks),
        horizon=args.horizon,
        model_config=model_config,
        train_config=train_config,
        train_days=args.train_days,
        total_days=args.total_days,
        log=_log,
    )
    write_reports(rows, args.out_dir / "sweep_lookback.txt",
                  args.out_dir / "sweep_lookback.jsonl")
    _log((args.out_dir / "sweep_lookback.txt").read_text().rstrip())
    return 0


def cmd_sweep_horizon(args) -> int:
    prepared, inputs = _prepare(args)
    _write_manifest(args, inputs)
    model_config, train_config = _model_train_configs(args)
    rows = sweep_horizon(
        prepared,
        horizons=_parse_int_list(args.horizons),
        lookback=args.lookback,
        model_config=model_config,
        train_config=train_config,
        train_days=args.train_days,
        total_days=args.total_days,
        log=_log,
    )
    write_reports(rows, args.out_dir / "sweep_horizon.txt",
                  args.out_dir / "sweep_horizon.jsonl")
    _log((args.out_dir / "sweep_horizon.txt").read_text().rstrip())
    return 0


def cmd_export_plot_data(args) -> int:
    params, meta, prepared, dataset = _inference_setup(args)
    node = args.node or prepared.topology.node_ids[0]
    if node not in prepared.topology.node_ids:
        raise PipelineError(f"unknown node {node!r}; corridor has {prepared.topology.node_ids}")
    if args.movement not in MOVEMENTS:
        raise PipelineError(f"unknown movement {args.movement!r}; use one of {MOVEMENTS}")
    ni = prepared.topology.node_ids.index(node)
    k = MOVEMENTS.index(args.movement)
    _, test_set = split_train_test(dataset, args.train_days, args.total_days)
    preds_norm = predict_batch(test_set, params)
    stats = prepared.stats[ni]
    std = stats.std[k] if stats.std[k] > 0 else 1.0
    preds_raw = preds_norm[:, ni, k] * std + stats.mean[k]
    truth = test_set.win_targets_raw[:, ni, k]
    out = args.out_dir / f"series_{node}_{args.movement}.txt"
    export_series(truth, preds_raw, out, minutes=test_set.target_minutes())
    _log(f"wrote {out}")
    return 0


_COMMANDS = {
    "synth": cmd_synth,
    "preprocess": cmd_preprocess,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "predict": cmd_predict,
    "sweep-lookback": cmd_sweep_lookback,
    "sweep-horizon": cmd_sweep_horizon,
    "export-plot-data": cmd_export_plot_data,
}


def main(argv=None) -> int:
    if argv is None:
        argv = sys.argv[1:]
    parser = build_parser()
    args = parser.parse_args(argv)
    args._argv = list(argv)
    try:
        _apply_config_file(args, argv)
        if args.threads is None:
            args.threads = os.environ.get("MGCNN_THREADS", "auto")
        return _COMMANDS[args.command](args)
    except (PipelineError, TopologyError, ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception:
        print("internal error:", file=sys.stderr)
        traceback.print_exc()
        return 70


if __name__ == "__main__":
    sys.exit(main())
