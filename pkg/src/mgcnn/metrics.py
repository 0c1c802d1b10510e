"""Error metrics, naive baselines, sweeps, and report export.

MSE, RMSE, MAE, and MAPE are pooled over every node, movement, and test
minute (one scalar per table cell).  MAPE excludes elements whose true value
is zero and reports how many were excluded, since minute-level turning
counts are frequently zero.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .model import ModelConfig, WindowDataset
from .topology import MultiGraphWindow
from .trainer import TrainConfig, predict_batch, train

MINUTES_PER_DAY = 1440


@dataclass
class MetricsReport:
    mse: float
    rmse: float
    mae: float
    mape: float | None
    unit_space: str
    sample_count: int
    excluded_zero_count: int
    horizon: int | None = None
    lookback: int | None = None
    label: str = "mgcnn"


def compute_metrics(
    pred,
    true,
    unit_space: str = "raw",
    horizon: int | None = None,
    lookback: int | None = None,
    label: str = "mgcnn",
) -> MetricsReport:
    """Pooled MSE/RMSE/MAE/MAPE over flattened prediction/truth arrays."""
    pred = np.asarray(pred, dtype=float).ravel()
    true = np.asarray(true, dtype=float).ravel()
    if pred.shape != true.shape or pred.size == 0:
        raise ValueError("pred and true must have equal, nonzero length")
    err = true - pred
    mse = float(np.mean(err**2))
    mae = float(np.mean(np.abs(err)))
    nonzero = true != 0
    excluded = int((~nonzero).sum())
    if nonzero.any():
        mape = float(100.0 * np.mean(np.abs(err[nonzero] / true[nonzero])))
    else:
        mape = None
    return MetricsReport(
        mse=mse,
        rmse=float(np.sqrt(mse)),
        mae=mae,
        mape=mape,
        unit_space=unit_space,
        sample_count=int(pred.size),
        excluded_zero_count=excluded,
        horizon=horizon,
        lookback=lookback,
        label=label,
    )


# ---------------------------------------------------------------------------
# Naive baselines


def persistence_baseline(window: MultiGraphWindow) -> np.ndarray:
    """Repeat the counts observed at the window's last minute."""
    counts = window.snapshots[-1].raw_counts
    if counts is None:
        raise ValueError("window snapshots carry no observed counts")
    return np.asarray(counts, dtype=float).copy()


def persistence_predictions(dataset: WindowDataset) -> np.ndarray:
    """Persistence forecasts for every window in a dataset: (W, n, s)."""
    return dataset.last_observed_counts(np.arange(len(dataset)))


class HistoricalAverage:
    """Training-set mean count per (minute-of-day, day-class, node, movement).

    Empty cells fall back to the class-wide mean for that node/movement (and
    to the global mean if a class never occurs in training).
    """

    def __init__(self, table: np.ndarray, seen: np.ndarray, class_mean: np.ndarray):
        self.table = table  # (1440, 2, n, s)
        self.seen = seen  # (1440, 2) bool
        self.class_mean = class_mean  # (2, n, s)
        self.fallback_cells = int((~seen).sum())

    @classmethod
    def fit(cls, train_set: WindowDataset) -> "HistoricalAverage":
        minutes = train_set.target_minutes() % MINUTES_PER_DAY
        classes = train_set.win_day_class
        targets = train_set.win_targets_raw
        _, n, s = targets.shape
        sums = np.zeros((MINUTES_PER_DAY, 2, n, s))
        counts = np.zeros((MINUTES_PER_DAY, 2))
        np.add.at(sums, (minutes, classes), targets)
        np.add.at(counts, (minutes, classes), 1.0)
        seen = counts > 0
        table = np.zeros_like(sums)
        table[seen] = sums[seen] / counts[seen][:, None, None]
        class_mean = np.empty((2, n, s))
        overall = targets.mean(axis=0)
        for cls_value in (0, 1):
            mask = classes == cls_value
            class_mean[cls_value] = targets[mask].mean(axis=0) if mask.any() else overall
        table[~seen] = class_mean[np.nonzero(~seen)[1]]
        return cls(table, seen, class_mean)

    def predict(self, minute_of_day: int, day_class: int) -> np.ndarray:
        return self.table[minute_of_day % MINUTES_PER_DAY, day_class].copy()

    def predict_dataset(self, dataset: WindowDataset) -> np.ndarray:
        minutes = dataset.target_minutes() % MINUTES_PER_DAY
        return self.table[minutes, dataset.win_day_class]


def historical_average_baseline(
    train_set: WindowDataset, minute_of_day: int, day_class: int
) -> np.ndarray:
    """One historical-average forecast; fit ``HistoricalAverage`` once when
    querying many minutes."""
    return HistoricalAverage.fit(train_set).predict(minute_of_day, day_class)


# ---------------------------------------------------------------------------
# Evaluation and sweeps


def denormalize_targets(values: np.ndarray, mean: np.ndarray, std: np.ndarray) -> np.ndarray:
    """Map normalized count predictions back to raw units; (W, n, s) arrays."""
    safe = np.where(std == 0, 1.0, std)
    return values * safe + mean


def evaluate_model(
    params,
    test_set: WindowDataset,
    train_set: WindowDataset,
    target_mean: np.ndarray,
    target_std: np.ndarray,
    horizon: int | None = None,
    lookback: int | None = None,
) -> dict[str, MetricsReport]:
    """Model metrics in both unit spaces plus the two naive baselines (raw)."""
    horizon = horizon if horizon is not None else test_set.horizon
    lookback = lookback if lookback is not None else test_set.lookback
    preds_norm = predict_batch(test_set, params)
    preds_raw = denormalize_targets(preds_norm, target_mean, target_std)
    truth_raw = test_set.win_targets_raw
    meta = dict(horizon=horizon, lookback=lookback)
    reports = {
        "mgcnn_norm": compute_metrics(
            preds_norm, test_set.win_targets, "normalized", label="mgcnn", **meta
        ),
        "mgcnn_raw": compute_metrics(preds_raw, truth_raw, "raw", label="mgcnn", **meta),
        "persistence_raw": compute_metrics(
            persistence_predictions(test_set), truth_raw, "raw", label="persistence", **meta
        ),
        "historical_raw": compute_metrics(
            HistoricalAverage.fit(train_set).predict_dataset(test_set),
            truth_raw,
            "raw",
            label="historical_average",
            **meta,
        ),
    }
    return reports


def _train_and_score(prepared, lookback, horizon, model_config, train_config,
                     train_days, total_days, log=None):
    from .pipeline import assemble
    from .trainer import split_train_test

    dataset = assemble(prepared, lookback, horizon, lambda_max=model_config.lambda_max,
                       weight_transform=model_config.weight_transform)
    train_set, test_set = split_train_test(dataset, train_days, total_days)
    params, history = train(train_set, model_config, train_config, log=log)
    mean12 = np.stack([s.mean[:12] for s in prepared.stats])
    std12 = np.stack([s.std[:12] for s in prepared.stats])
    reports = evaluate_model(
        params, test_set, train_set, mean12, std12, horizon=horizon, lookback=lookback
    )
    return params, history, reports


def sweep_lookback(
    prepared,
    lookbacks=(10, 20, 30, 40, 50, 60),
    horizon: int = 5,
    model_config: ModelConfig | None = None,
    train_config: TrainConfig | None = None,
    train_days: int = 19,
    total_days: int = 20,
    log=None,
) -> list[MetricsReport]:
    """Train one model per lookback with identical seeds; report per-M rows."""
    model_config = model_config or ModelConfig()
    train_config = train_config or TrainConfig()
    raw_rows: list[MetricsReport] = []
    norm_rows: list[MetricsReport] = []
    for m in lookbacks:
        if log is not None:
            log(f"sweep: lookback {m} min")
        _, _, reports = _train_and_score(
            prepared, m, horizon, model_config, train_config, train_days, total_days
        )
        raw_rows.append(reports["mgcnn_raw"])
        norm_rows.append(reports["mgcnn_norm"])
    return raw_rows + norm_rows


def sweep_horizon(
    prepared,
    horizons=(1, 2, 3, 4, 5),
    lookback: int = 10,
    model_config: ModelConfig | None = None,
    train_config: TrainConfig | None = None,
    train_days: int = 19,
    total_days: int = 20,
    log=None,
) -> list[MetricsReport]:
    """Train one model per horizon; warns (only) if errors shrink with N."""
    model_config = model_config or ModelConfig()
    train_config = train_config or TrainConfig()
    raw_rows: list[MetricsReport] = []
    norm_rows: list[MetricsReport] = []
    for horizon in horizons:
        if log is not None:
            log(f"sweep: horizon {horizon} min")
        _, _, reports = _train_and_score(
            prepared, lookback, horizon, model_config, train_config, train_days, total_days
        )
        raw_rows.append(reports["mgcnn_raw"])
        norm_rows.append(reports["mgcnn_norm"])
    rows = raw_rows + norm_rows
    raw = {r.horizon: r.mse for r in raw_rows}
    if raw and raw[max(raw)] < raw[min(raw)]:
        warnings.warn(
            f"horizon sweep: MSE at N={max(raw)} is below MSE at N={min(raw)}; "
            "errors usually grow with the horizon"
        )
    return rows


# ---------------------------------------------------------------------------
# Export


def format_report_table(rows: list[MetricsReport]) -> str:
    """Aligned text table, one row per report."""
    headers = ["label", "lookback", "horizon", "space", "MSE", "RMSE", "MAE",
               "MAPE", "samples", "zero_excluded"]
    cells = [headers]
    for r in rows:
        cells.append([
            r.label,
            "-" if r.lookback is None else str(r.lookback),
            "-" if r.horizon is None else str(r.horizon),
            r.unit_space,
            f"{r.mse:.6f}",
            f"{r.rmse:.6f}",
            f"{r.mae:.6f}",
            "n/a" if r.mape is None else f"{r.mape:.4f}%",
            str(r.sample_count),
            str(r.excluded_zero_count),
        ])
    widths = [max(len(row[i]) for row in cells) for i in range(len(headers))]
    lines = ["  ".join(cell.ljust(w) for cell, w in zip(row, widths)).rstrip()
             for row in cells]
    return "\n".join(lines) + "\n"


def write_reports(rows: list[MetricsReport], table_path, records_path) -> None:
    """Write the aligned table plus line-delimited JSON records."""
    Path(table_path).write_text(format_report_table(rows))
    with open(records_path, "w") as fh:
        for r in rows:
            fh.write(json.dumps(asdict(r), sort_keys=True) + "\n")


def export_series(truth, pred, path, minutes=None) -> None:
    """Minute-indexed truth/prediction series for external plotting."""
    truth = np.asarray(truth, dtype=float).ravel()
    pred = np.asarray(pred, dtype=float).ravel()
    if truth.shape != pred.shape:
        raise ValueError("truth and prediction must have equal length")
    if minutes is None:
        minutes = np.arange(truth.size)
    minutes = np.asarray(minutes)
    order = np.argsort(minutes, kind="stable")
    lines = ["minute,truth,prediction"]
    for i in order:
        lines.append(f"{int(minutes[i])},{truth[i]:.17g},{pred[i]:.17g}")
    Path(path).write_text("\n".join(lines) + "\n")


def read_series(path) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Inverse of export_series; returns (minutes, truth, prediction)."""
    lines = Path(path).read_text().splitlines()
    if not lines or lines[0] != "minute,truth,prediction":
        raise ValueError(f"{path}: not an exported series file")
    rows = [line.split(",") for line in lines[1:]]
    minutes = np.array([int(r[0]) for r in rows])
    truth = np.array([float(r[1]) for r in rows])
    pred = np.array([float(r[2]) for r in rows])
    return minutes, truth, pred
