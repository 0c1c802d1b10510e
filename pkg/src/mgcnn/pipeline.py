"""Ingestion and preprocessing.

Stages, in order: CSV ingestion with gap repair, occupancy-attribute drop
(133 -> 85 columns), per-intersection collinearity pruning merged by
majority vote into one global kept set, IQR outlier replacement by the
series median, z-score normalization fit on training rows only, and
assembly of per-minute graph snapshots into lookback windows.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd

from .model import WindowDataset, pack_windows
from .synth import MEASURES, MOVEMENTS, attribute_columns
from .topology import CorridorTopology, GraphSnapshot, stack_window

MINUTES_PER_DAY = 1440
RAW_ATTRIBUTES = attribute_columns()  # 133 names, canonical order
OCC_MEASURES = ("occ", "occ_green", "occ_red", "occ_yellow")
KEPT_MEASURES = tuple(m for m in MEASURES if m not in OCC_MEASURES)
POST_DROP_ATTRIBUTES = [f"{m}_{mv}" for m in KEPT_MEASURES for mv in MOVEMENTS] + ["class"]
N_TARGETS = 12  # the twelve turning-movement count attributes
CLASS_INDEX = len(POST_DROP_ATTRIBUTES) - 1


def annotation_id(index: int) -> str:
    """Annotation label for a post-drop attribute index (A1-based)."""
    return f"A{index + 1}"


class PipelineError(ValueError):
    pass


@dataclass
class RawIntersectionSeries:
    """Minute-by-minute attribute matrix for one intersection.

    ``attributes`` is (A, T) with rows in canonical order: 133 as ingested,
    85 after the occupancy drop.
    """

    intersection_id: str
    minutes: np.ndarray
    attributes: np.ndarray
    attribute_names: list[str]
    filled_minutes: list[int] = field(default_factory=list)

    @property
    def T(self) -> int:
        return self.attributes.shape[1]


@dataclass
class NormalizationStats:
    """Per-attribute mean/std, fit on the first ``train_rows`` columns only."""

    mean: np.ndarray
    std: np.ndarray
    constant_mask: np.ndarray
    train_rows: int


@dataclass
class CleanFeatureSeries:
    intersection_id: str
    attributes: np.ndarray  # (F, T)
    kept_attribute_ids: list[str]
    normalization_stats: NormalizationStats | None = None


def ingest_csv(paths, gap_limit: int = 60) -> list[RawIntersectionSeries]:
    """Read one CSV per intersection and validate the 133-attribute schema.

    Missing minutes up to ``gap_limit`` in a row are repaired: counts and
    arrivals become zero, everything else carries the last value forward; a
    warning reports the filled minutes.
    """
    series = []
    for path in paths:
        series.append(_ingest_one(Path(path), gap_limit))
    return series


def _ingest_one(path: Path, gap_limit: int) -> RawIntersectionSeries:
    try:
        frame = pd.read_csv(path)
    except Exception as exc:  # pandas reports the offending line itself
        raise PipelineError(f"{path}: malformed CSV: {exc}") from exc
    expected = ["minute", "intersection_id"] + RAW_ATTRIBUTES
    if list(frame.columns) != expected:
        raise PipelineError(
            f"{path}: header mismatch; expected minute,intersection_id,"
            f"<{len(RAW_ATTRIBUTES)} canonical attributes>"
        )
    ids = frame["intersection_id"].unique()
    if len(ids) != 1:
        raise PipelineError(f"{path}: multiple intersection ids {list(ids)[:3]}")
    numeric = frame[RAW_ATTRIBUTES + ["minute"]].apply(pd.to_numeric, errors="coerce")
    bad = numeric.isna().any(axis=1)
    if bad.any():
        row = int(np.flatnonzero(bad.to_numpy())[0])
        raise PipelineError(f"{path}: malformed row at line {row + 2}")
    neg = (numeric[RAW_ATTRIBUTES] < 0).any(axis=1)
    if neg.any():
        row = int(np.flatnonzero(neg.to_numpy())[0])
        raise PipelineError(f"{path}: negative measurement at line {row + 2}")
    cls = numeric["class"].to_numpy()
    if not np.isin(cls, (0, 1)).all():
        raise PipelineError(f"{path}: class column must be 0 or 1")
    minutes = numeric["minute"].to_numpy(dtype=np.int64)
    if len(minutes) == 0:
        raise PipelineError(f"{path}: empty file")
    if np.any(np.diff(minutes) <= 0):
        raise PipelineError(f"{path}: minutes must be strictly increasing")
    attrs = numeric[RAW_ATTRIBUTES].to_numpy(dtype=float).T  # (133, T)

    filled: list[int] = []
    gaps = np.diff(minutes)
    if np.any(gaps > 1):
        worst = int(gaps.max() - 1)
        if worst > gap_limit:
            raise PipelineError(
                f"{path}: gap of {worst} missing minutes exceeds the limit of {gap_limit}"
            )
        full = np.arange(minutes[0], minutes[-1] + 1)
        out = np.empty((attrs.shape[0], len(full)))
        present = np.isin(full, minutes)
        out[:, present] = attrs
        zero_fill = np.array(
            [n.startswith(("count_", "arr_")) for n in RAW_ATTRIBUTES]
        )
        missing_pos = np.flatnonzero(~present)
        for pos in missing_pos:  # carry forward scans left for the last real row
            out[zero_fill, pos] = 0.0
            out[~zero_fill, pos] = out[~zero_fill, pos - 1]
        filled = [int(m) for m in full[missing_pos]]
        preview = ", ".join(str(m) for m in filled[:10])
        more = "" if len(filled) <= 10 else f" (+{len(filled) - 10} more)"
        warnings.warn(f"{path}: filled {len(filled)} missing minutes: {preview}{more}")
        attrs, minutes = out, full
    return RawIntersectionSeries(
        intersection_id=str(ids[0]),
        minutes=minutes,
        attributes=attrs,
        attribute_names=list(RAW_ATTRIBUTES),
        filled_minutes=filled,
    )


def drop_occupancy(series: RawIntersectionSeries) -> RawIntersectionSeries:
    """Remove the four occupancy-duration measures (48 columns), keeping the
    85 canonical attributes."""
    if series.attributes.shape[0] != len(RAW_ATTRIBUTES):
        raise PipelineError(
            f"expected {len(RAW_ATTRIBUTES)} attributes, got {series.attributes.shape[0]}"
        )
    keep = [
        i
        for i, name in enumerate(series.attribute_names)
        if not name.startswith(tuple(f"{m}_" for m in OCC_MEASURES))
    ]
    return RawIntersectionSeries(
        intersection_id=series.intersection_id,
        minutes=series.minutes,
        attributes=series.attributes[keep],
        attribute_names=[series.attribute_names[i] for i in keep],
        filled_minutes=series.filled_minutes,
    )


def correlation_matrix(attributes: np.ndarray) -> np.ndarray:
    """Pearson correlations between attribute rows of an (F, T) matrix.

    Zero-variance attributes correlate 0 with everything (flagged with a
    warning) instead of producing NaN.
    """
    attributes = np.asarray(attributes, dtype=float)
    if attributes.shape[1] < 2:
        raise PipelineError("need at least 2 samples for correlations")
    centered = attributes - attributes.mean(axis=1, keepdims=True)
    norms = np.sqrt((centered**2).sum(axis=1))
    constant = norms == 0
    if constant.any():
        warnings.warn(
            f"{int(constant.sum())} zero-variance attribute(s); correlations set to 0"
        )
    safe = np.where(constant, 1.0, norms)
    unit = centered / safe[:, None]
    corr = unit @ unit.T
    corr[constant, :] = 0.0
    corr[:, constant] = 0.0
    np.fill_diagonal(corr, np.where(constant, 0.0, 1.0))
    return np.clip(corr, -1.0, 1.0)


def collinear_kept_mask(
    corr: np.ndarray, threshold: float = 0.8, n_targets: int = N_TARGETS
) -> np.ndarray:
    """Greedy kept/dropped decision over non-target pairs with |r| >= threshold.

    Pairs are visited in descending |r|; the member less correlated with any
    target attribute is dropped (ties drop the higher index).  Target
    attributes are never candidates.
    """
    F = corr.shape[0]
    target_link = np.abs(corr[:, :n_targets]).max(axis=1)
    alive = np.ones(F, dtype=bool)
    pairs = []
    for i in range(n_targets, F):
        for j in range(i + 1, F):
            r = abs(corr[i, j])
            if r >= threshold:
                pairs.append((-r, i, j))
    for _, i, j in sorted(pairs):
        if not (alive[i] and alive[j]):
            continue
        if target_link[i] > target_link[j]:
            alive[j] = False
        elif target_link[j] > target_link[i]:
            alive[i] = False
        else:
            alive[max(i, j)] = False
    return alive


def prune_collinear(series: RawIntersectionSeries, threshold: float = 0.8) -> CleanFeatureSeries:
    """Drop one member of every highly correlated non-target attribute pair."""
    corr = correlation_matrix(series.attributes)
    alive = collinear_kept_mask(corr, threshold)
    kept = np.flatnonzero(alive)
    return CleanFeatureSeries(
        intersection_id=series.intersection_id,
        attributes=series.attributes[kept],
        kept_attribute_ids=[annotation_id(i) for i in kept],
    )


def iqr_outlier_replace(series: np.ndarray) -> np.ndarray:
    """Replace values outside [Q1 - 1.5 IQR, Q3 + 1.5 IQR] with the median.

    Quartiles use linear interpolation between order statistics; a single
    pass, so the fences are those of the original series.
    """
    x = np.asarray(series, dtype=float)
    if x.ndim != 1 or x.size < 4:
        raise PipelineError("need a 1-D series of at least 4 values")
    q1, med, q3 = np.percentile(x, [25, 50, 75])
    iqr = q3 - q1
    lo, hi = q1 - 1.5 * iqr, q3 + 1.5 * iqr
    out = x.copy()
    out[(x < lo) | (x > hi)] = med
    return out


def fit_normalization(attributes: np.ndarray, train_rows: int) -> NormalizationStats:
    """Per-attribute mean/std over the first ``train_rows`` columns only."""
    attributes = np.asarray(attributes, dtype=float)
    if not 0 < train_rows <= attributes.shape[1]:
        raise PipelineError("train_rows must be in (0, T]")
    train = attributes[:, :train_rows]
    mean = train.mean(axis=1)
    std = train.std(axis=1)
    constant = std == 0
    return NormalizationStats(mean=mean, std=std, constant_mask=constant, train_rows=train_rows)


def check_no_leakage(stats: NormalizationStats, train_boundary: int) -> None:
    """Reject stats whose fitting window reaches into the test partition."""
    if stats.train_rows > train_boundary:
        raise PipelineError(
            f"normalization stats were fit on {stats.train_rows} rows, past the "
            f"training boundary of {train_boundary}: test-set leakage"
        )


def normalize(attributes: np.ndarray, stats: NormalizationStats) -> np.ndarray:
    """Z-score per attribute; constant attributes pass through unchanged."""
    attributes = np.asarray(attributes, dtype=float)
    safe = np.where(stats.constant_mask, 1.0, stats.std)
    shift = np.where(stats.constant_mask, 0.0, stats.mean)
    return (attributes - shift[:, None]) / safe[:, None]


def denormalize(values: np.ndarray, stats: NormalizationStats) -> np.ndarray:
    """Exact inverse of ``normalize``."""
    values = np.asarray(values, dtype=float)
    safe = np.where(stats.constant_mask, 1.0, stats.std)
    shift = np.where(stats.constant_mask, 0.0, stats.mean)
    return values * safe[:, None] + shift[:, None]


# ---------------------------------------------------------------------------
# Corridor-level preparation


@dataclass
class PreparedCorridor:
    """All per-minute arrays needed to assemble window datasets.

    Features are normalized; counts and speeds are kept in raw units as well
    for metric reporting and travel-time weights.
    """

    topology: CorridorTopology
    minutes: np.ndarray  # (T,)
    features: np.ndarray  # (T, n, F) normalized kept attributes
    counts_raw: np.ndarray  # (T, n, 12)
    counts_norm: np.ndarray  # (T, n, 12)
    edge_speeds: np.ndarray  # (T, n_edges) mph aligned with topology.edges
    day_class: np.ndarray  # (T,)
    kept_ids: list[str]
    kept_names: list[str]
    stats: list[NormalizationStats]
    clean_series: list[CleanFeatureSeries]
    collinearity_threshold: float
    train_end_minute: int

    @property
    def n(self) -> int:
        return self.topology.n

    @property
    def n_features(self) -> int:
        return self.features.shape[2]


def _speed_attr_index(bound: str) -> int:
    return POST_DROP_ATTRIBUTES.index(f"speed_{bound}_T")


def prepare_corridor(
    series_list: list[RawIntersectionSeries],
    topology: CorridorTopology,
    train_days: int = 19,
    collinearity_threshold: float = 0.8,
) -> PreparedCorridor:
    """Run the full preprocessing chain for one corridor.

    The global kept-attribute set is the majority vote of per-intersection
    pruning decisions (ties keep; targets always kept) so every node shares
    one feature dimension.  Normalization stats are fit per intersection on
    the training partition only.
    """
    topology.validate(min_nodes=1)
    by_id = {s.intersection_id: s for s in series_list}
    if set(by_id) != set(topology.node_ids):
        raise PipelineError(
            f"intersection ids {sorted(by_id)} do not match topology nodes "
            f"{topology.node_ids}"
        )
    ordered = [by_id[node] for node in topology.node_ids]
    base = ordered[0].minutes
    for s in ordered[1:]:
        if len(s.minutes) != len(base) or np.any(s.minutes != base):
            raise PipelineError(
                f"misaligned minute ranges: {s.intersection_id} differs from "
                f"{ordered[0].intersection_id}"
            )
    dropped = [drop_occupancy(s) if s.attributes.shape[0] == 133 else s for s in ordered]
    A = len(POST_DROP_ATTRIBUTES)
    for s in dropped:
        if s.attributes.shape[0] != A:
            raise PipelineError("inconsistent attribute widths after occupancy drop")

    # per-intersection pruning decisions, merged by majority vote (ties keep)
    votes = np.zeros(A)
    for s in dropped:
        votes += collinear_kept_mask(correlation_matrix(s.attributes), collinearity_threshold)
    kept_mask = votes >= len(dropped) / 2.0
    kept_mask[:N_TARGETS] = True
    kept = np.flatnonzero(kept_mask)
    kept_ids = [annotation_id(i) for i in kept]
    kept_names = [POST_DROP_ATTRIBUTES[i] for i in kept]

    T = len(base)
    train_end = min(train_days * MINUTES_PER_DAY, T)
    n = topology.n
    cleaned = np.empty((n, A, T))
    for ni, s in enumerate(dropped):
        mat = s.attributes.copy()
        for a in range(A):
            if a != CLASS_INDEX:  # the day-class flag is categorical
                mat[a] = iqr_outlier_replace(mat[a])
        cleaned[ni] = mat

    features = np.empty((T, n, len(kept)))
    counts_raw = np.empty((T, n, N_TARGETS))
    counts_norm = np.empty((T, n, N_TARGETS))
    stats_list: list[NormalizationStats] = []
    clean_series: list[CleanFeatureSeries] = []
    for ni, s in enumerate(dropped):
        kept_attrs = cleaned[ni][kept]
        stats = fit_normalization(kept_attrs, train_end)
        check_no_leakage(stats, train_end)
        normed = normalize(kept_attrs, stats)
        features[:, ni, :] = normed.T
        counts_raw[:, ni, :] = cleaned[ni][:N_TARGETS].T
        counts_norm[:, ni, :] = normed[:N_TARGETS].T
        stats_list.append(stats)
        clean_series.append(
            CleanFeatureSeries(
                intersection_id=s.intersection_id,
                attributes=normed,
                kept_attribute_ids=list(kept_ids),
                normalization_stats=stats,
            )
        )

    edge_speeds = np.empty((T, len(topology.edges)))
    for ei, (a, b) in enumerate(topology.edges):
        bound = "EB" if b > a else "WB"  # node order runs west to east
        edge_speeds[:, ei] = cleaned[a][_speed_attr_index(bound)]

    cls_rows = cleaned[:, CLASS_INDEX, :]
    if not np.all(cls_rows == cls_rows[0]):
        warnings.warn("day-class flags differ across intersections; using the first")
    return PreparedCorridor(
        topology=topology,
        minutes=base.copy(),
        features=features,
        counts_raw=counts_raw,
        counts_norm=counts_norm,
        edge_speeds=edge_speeds,
        day_class=cls_rows[0].astype(int),
        kept_ids=kept_ids,
        kept_names=kept_names,
        stats=stats_list,
        clean_series=clean_series,
        collinearity_threshold=collinearity_threshold,
        train_end_minute=train_end,
    )


def assemble(
    prepared: PreparedCorridor,
    lookback: int,
    horizon: int,
    lambda_max: float | None = None,
    speed_floor_mph: float = 1.0,
    weight_transform: str = "none",
) -> WindowDataset:
    """Build per-minute snapshots and slide them into a window dataset.

    Targets are the normalized counts at t + horizon (loss space), with raw
    counts carried alongside for metric reporting.
    """
    T = len(prepared.minutes)
    n = prepared.n
    weights_stack = np.zeros((T, n, n))
    if prepared.topology.edges:
        lengths = np.array([prepared.topology.link_length[e] for e in prepared.topology.edges])
        travel_time = 3600.0 * lengths / np.maximum(prepared.edge_speeds, speed_floor_mph)
        a_idx = np.array([a for a, _ in prepared.topology.edges])
        b_idx = np.array([b for _, b in prepared.topology.edges])
        weights_stack[:, a_idx, b_idx] = travel_time
    snapshots = [
        GraphSnapshot(
            timestep=int(prepared.minutes[t]),
            weights=weights_stack[t],
            node_features=prepared.features[t],
            raw_counts=prepared.counts_raw[t],
        )
        for t in range(T)
    ]
    windows = stack_window(
        snapshots,
        lookback,
        horizon,
        targets=prepared.counts_norm,
        target_raw=prepared.counts_raw,
        day_class=prepared.day_class,
    )
    if not windows:
        raise PipelineError(
            f"stream of {T} minutes is too short for lookback {lookback} + horizon {horizon}"
        )
    return pack_windows(windows, lambda_max=lambda_max,
                        node_ids=prepared.topology.node_ids,
                        weight_transform=weight_transform)


def write_pipeline_manifest(path: str | Path, prepared: PreparedCorridor) -> None:
    """Self-describing text record of every preprocessing decision."""
    lines = [
        "mgcnn-pipeline-v1",
        f"collinearity_threshold {prepared.collinearity_threshold:g}",
        "iqr_factor 1.5",
        f"train_end_minute {prepared.train_end_minute}",
        f"nodes {' '.join(prepared.topology.node_ids)}",
        f"kept {' '.join(prepared.kept_ids)}",
        f"kept_names {' '.join(prepared.kept_names)}",
    ]
    for node, stats in zip(prepared.topology.node_ids, prepared.stats):
        mean = " ".join(f"{v:.17g}" for v in stats.mean)
        std = " ".join(f"{v:.17g}" for v in stats.std)
        lines.append(f"stats {node} mean {mean}")
        lines.append(f"stats {node} std {std}")
    Path(path).write_text("\n".join(lines) + "\n")
