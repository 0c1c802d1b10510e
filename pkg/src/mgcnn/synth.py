"""Deterministic synthetic-corridor generator.

Produces schema-conformant per-intersection CSVs plus a topology file so the
whole stack can run without proprietary detector data.  The generated counts
follow a flat diurnal base with a morning (10:00-14:00) and evening
(17:00-21:00) peak, weekday/weekend day classes, a slowly-varying
corridor-wide demand factor, and downstream propagation of thru volumes, so
lookback windows genuinely carry predictive signal.  Identical configs
produce byte-identical files.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd

from .topology import CorridorTopology, write_topology

MINUTES_PER_DAY = 1440
BOUNDS = ["NB", "SB", "EB", "WB"]
TURNS = ["L", "T", "R"]
MOVEMENTS = [f"{b}_{t}" for b in BOUNDS for t in TURNS]
MEASURES = [
    "count",
    "speed",
    "arr_green",
    "arr_red",
    "arr_yellow",
    "green_time",
    "red_time",
    "occ",
    "occ_green",
    "occ_red",
    "occ_yellow",
]

DEFAULT_BASE_VOLUMES = {
    "NB_L": 2.5, "NB_T": 4.0, "NB_R": 2.0,
    "SB_L": 2.5, "SB_T": 4.0, "SB_R": 2.0,
    "EB_L": 2.5, "EB_T": 7.0, "EB_R": 2.0,
    "WB_L": 2.5, "WB_T": 8.0, "WB_R": 2.0,
}


def attribute_columns() -> list[str]:
    """The 133 attribute names in canonical order (11 measures x 12 movements,
    then the weekday/weekend class flag)."""
    cols = [f"{measure}_{mv}" for measure in MEASURES for mv in MOVEMENTS]
    cols.append("class")
    return cols


@dataclass
class SynthConfig:
    n_intersections: int = 10
    days: int = 20
    seed: int = 7
    base_volumes: dict[str, float] = field(default_factory=lambda: dict(DEFAULT_BASE_VOLUMES))
    morning_window: tuple[int, int] = (600, 840)  # 10:00-14:00
    morning_multiplier: float = 2.0
    evening_window: tuple[int, int] = (1020, 1260)  # 17:00-21:00
    evening_multiplier: float = 1.8
    weekend_factor: float = 0.6
    count_dispersion: float = 0.08  # per-minute lognormal sigma
    demand_sigma: float = 0.40  # corridor-wide slow demand factor sigma
    demand_phi: float = 0.985
    coupling: float = 0.7  # downstream share of lagged upstream thru volume
    capacity_headroom: float | None = 1.05  # discharge cap vs weekday peak mean
    platoon_amplitude: float = 0.35  # minute-level swing from the 120 s cycle
    free_flow_mph: float = 32.0
    congestion_factor: float = 0.5
    outlier_rate: float = 0.002
    link_length_range: tuple[float, float] = (0.10, 0.16)

    def validate(self) -> None:
        for lo, hi in (self.morning_window, self.evening_window):
            if not (0 <= lo < hi <= MINUTES_PER_DAY):
                raise ValueError("peak windows must lie within [0, 1440)")
        if self.morning_multiplier < 1 or self.evening_multiplier < 1:
            raise ValueError("peak multipliers must be >= 1")
        if self.n_intersections < 2:
            raise ValueError("need at least 2 intersections")
        if self.days < 1:
            raise ValueError("days must be >= 1")
        if not 0 <= self.coupling < 1:
            raise ValueError("coupling must be in [0, 1)")
        if not 0 <= self.platoon_amplitude < 1:
            raise ValueError("platoon_amplitude must be in [0, 1)")
        if not 0 <= self.outlier_rate < 0.2:
            raise ValueError("outlier_rate must be small (< 0.2)")
        if set(self.base_volumes) != set(MOVEMENTS):
            raise ValueError("base_volumes must cover exactly the 12 movements")


def day_class(day_index: int) -> int:
    """1 for weekdays, 0 for weekends (7-day cycle starting on a Monday)."""
    return 1 if day_index % 7 < 5 else 0


def ground_truth_profile(
    config: SynthConfig, minute_of_day: int, movement: str, day_cls: int = 1
) -> float:
    """Noiseless, cycle-averaged generator mean for one movement and minute.

    Signal platooning alternates individual minutes around this value; the
    two-minute cycle average equals it.
    """
    if not 0 <= minute_of_day < MINUTES_PER_DAY:
        raise ValueError("minute_of_day must be in [0, 1440)")
    base = config.base_volumes[movement]
    lo, hi = config.morning_window
    if lo <= minute_of_day < hi:
        base *= config.morning_multiplier
    else:
        lo, hi = config.evening_window
        if lo <= minute_of_day < hi:
            base *= config.evening_multiplier
    if day_cls == 0:
        base *= config.weekend_factor
    return base


def _profile_vector(config: SynthConfig, movement: str, day_cls: int) -> np.ndarray:
    minutes = np.arange(MINUTES_PER_DAY)
    out = np.full(MINUTES_PER_DAY, config.base_volumes[movement])
    lo, hi = config.morning_window
    out[(minutes >= lo) & (minutes < hi)] *= config.morning_multiplier
    lo, hi = config.evening_window
    out[(minutes >= lo) & (minutes < hi)] *= config.evening_multiplier
    if day_cls == 0:
        out *= config.weekend_factor
    return out


def make_topology(config: SynthConfig) -> CorridorTopology:
    """Chain corridor with seeded link lengths (west-to-east node order)."""
    n = config.n_intersections
    rng = np.random.default_rng([config.seed, 11])
    lo, hi = config.link_length_range
    lengths = np.round(rng.uniform(lo, hi, n - 1), 3)
    node_ids = [f"I{i + 1:02d}" for i in range(n)]
    edges: list[tuple[int, int]] = []
    link_length: dict[tuple[int, int], float] = {}
    for i in range(n - 1):
        edges.extend([(i, i + 1), (i + 1, i)])
        link_length[(i, i + 1)] = float(lengths[i])
        link_length[(i + 1, i)] = float(lengths[i])
    topo = CorridorTopology(node_ids=node_ids, edges=edges, link_length=link_length)
    topo.validate()
    return topo


def _lognormal_noise(rng: np.random.Generator, sigma: float, shape) -> np.ndarray:
    """Mean-one multiplicative noise; exactly 1.0 when sigma is 0."""
    if sigma == 0:
        return np.ones(shape)
    return np.exp(rng.standard_normal(shape) * sigma - sigma**2 / 2.0)


def _demand_factor(config: SynthConfig, day: int) -> np.ndarray:
    """Corridor-wide AR(1) demand factor for one day (mean-one, slow)."""
    if config.demand_sigma == 0:
        return np.ones(MINUTES_PER_DAY)
    rng = np.random.default_rng([config.seed, 23, day])
    phi, sigma = config.demand_phi, config.demand_sigma
    innov = rng.standard_normal(MINUTES_PER_DAY) * sigma * np.sqrt(1 - phi**2)
    g = np.empty(MINUTES_PER_DAY)
    g[0] = rng.standard_normal() * sigma
    for t in range(1, MINUTES_PER_DAY):
        g[t] = phi * g[t - 1] + innov[t]
    return np.exp(g - sigma**2 / 2.0)


def _lagged(series: np.ndarray, lag: int) -> np.ndarray:
    if lag <= 0:
        return series
    return np.concatenate([np.full(lag, series[0]), series[:-lag]])


def movement_capacity(config: SynthConfig, movement: str) -> float:
    """Saturation-flow cap per movement: headroom times the weekday peak mean.

    Demand above this value queues and discharges at the cap, so observed
    counts clip here; the noiseless profile never exceeds it.
    """
    if config.capacity_headroom is None:
        return np.inf
    peak = config.base_volumes[movement] * max(
        config.morning_multiplier, config.evening_multiplier
    )
    return config.capacity_headroom * peak


def generate(config: SynthConfig, out_dir: str | Path) -> tuple[Path, list[Path]]:
    """Write topology.txt and one CSV per intersection; returns the paths."""
    config.validate()
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    topo = make_topology(config)
    topo_path = out_dir / "topology.txt"
    write_topology(topo, topo_path)

    n = config.n_intersections
    days = config.days
    T = days * MINUTES_PER_DAY
    # thru volumes reach the next intersection after the link travel time
    # plus one 120 s signal cycle of queueing, rounded to whole minutes
    lags = [
        max(1, round(60.0 * topo.link_length[(i, i + 1)] / config.free_flow_mph + 2.0))
        for i in range(n - 1)
    ]

    counts = np.zeros((n, T, len(MOVEMENTS)))
    mv_idx = {mv: k for k, mv in enumerate(MOVEMENTS)}
    for day in range(days):
        cls = day_class(day)
        f = _demand_factor(config, day)
        sl = slice(day * MINUTES_PER_DAY, (day + 1) * MINUTES_PER_DAY)
        rngs = [np.random.default_rng([config.seed, 31, day, i]) for i in range(n)]
        # coordinated fixed-time signals: arrivals alternate with the 120 s
        # cycle, offset by one minute at every other intersection
        minutes = np.arange(MINUTES_PER_DAY)
        platoon = np.stack(
            [
                1.0
                + config.platoon_amplitude * np.where((minutes + i) % 2 == 0, 1.0, -1.0)
                for i in range(n)
            ]
        )  # (n, 1440)
        locals_ = np.stack(
            [
                np.stack(
                    [
                        _profile_vector(config, mv, cls)
                        * f
                        * platoon[i]
                        * _lognormal_noise(rngs[i], config.count_dispersion, MINUTES_PER_DAY)
                        for mv in MOVEMENTS
                    ],
                    axis=1,
                )
                for i in range(n)
            ]
        )  # (n, 1440, 12)
        caps = np.array([movement_capacity(config, mv) for mv in MOVEMENTS])
        day_counts = np.round(np.minimum(locals_, caps))
        # thru volumes advect down the corridor with the link lag; each
        # approach discharges at most its saturation cap
        rho = config.coupling
        if rho > 0:
            eb = mv_idx["EB_T"]
            for i in range(1, n):
                upstream = _lagged(day_counts[i - 1, :, eb], lags[i - 1])
                flow = rho * upstream + (1 - rho) * locals_[i, :, eb]
                day_counts[i, :, eb] = np.round(np.minimum(flow, caps[eb]))
            wb = mv_idx["WB_T"]
            for i in range(n - 2, -1, -1):
                upstream = _lagged(day_counts[i + 1, :, wb], lags[i])
                flow = rho * upstream + (1 - rho) * locals_[i, :, wb]
                day_counts[i, :, wb] = np.round(np.minimum(flow, caps[wb]))
        counts[:, sl, :] = np.maximum(day_counts, 0.0)

    csv_paths = []
    columns = attribute_columns()
    for i, node_id in enumerate(topo.node_ids):
        frame = _intersection_frame(config, i, node_id, counts[i], columns)
        path = out_dir / f"{node_id}.csv"
        frame.to_csv(path, index=False, float_format="%.2f", lineterminator="\n")
        csv_paths.append(path)
    return topo_path, csv_paths


def _intersection_frame(
    config: SynthConfig, node_index: int, node_id: str, node_counts: np.ndarray, columns
) -> pd.DataFrame:
    """Assemble the full 133-attribute table for one intersection."""
    T = node_counts.shape[0]
    days = T // MINUTES_PER_DAY
    rng = np.random.default_rng([config.seed, 47, node_index])
    data: dict[str, np.ndarray] = {}
    data["minute"] = np.arange(T)
    data["intersection_id"] = np.full(T, node_id)

    cnt = node_counts.astype(np.int64)
    for k, mv in enumerate(MOVEMENTS):
        data[f"count_{mv}"] = cnt[:, k]

    # speeds drop with directional thru demand; free flow on an empty road
    ff = config.free_flow_mph
    for bound in BOUNDS:
        thru = cnt[:, MOVEMENTS.index(f"{bound}_T")].astype(float)
        ref = max(4.0 * config.base_volumes[f"{bound}_T"], 1.0)
        v_dir = ff * (1.0 - config.congestion_factor * np.minimum(1.0, thru / ref))
        v_dir = np.maximum(v_dir, 5.0)
        for turn in TURNS:
            jitter = 1.0 - 0.05 * rng.random(T)
            data[f"speed_{bound}_{turn}"] = np.round(np.minimum(v_dir * jitter, ff), 2)

    # signal timing: 120 s cycle, 4 s yellow
    for mv in MOVEMENTS:
        green_base = 16 if mv.endswith("_L") else 52
        green = np.clip(
            np.round(green_base + rng.normal(0.0, 3.0, T)), 6, 110
        ).astype(np.int64)
        data[f"green_time_{mv}"] = green
        data[f"red_time_{mv}"] = 120 - 4 - green

    # arrivals split the counts by signal-state shares
    for mv in MOVEMENTS:
        c = cnt[:, MOVEMENTS.index(mv)]
        p_green = np.clip(data[f"green_time_{mv}"] / 120.0, 0.05, 0.95)
        arr_green = rng.binomial(c, p_green)
        rest = c - arr_green
        arr_yellow = rng.binomial(rest, 4.0 / 120.0)
        data[f"arr_green_{mv}"] = arr_green
        data[f"arr_yellow_{mv}"] = arr_yellow
        data[f"arr_red_{mv}"] = rest - arr_yellow

    # occupancy durations: mostly zero, as in the source system
    for mv in MOVEMENTS:
        c = cnt[:, MOVEMENTS.index(mv)]
        red = data[f"red_time_{mv}"]
        occ_red = np.where(
            rng.random(T) < 0.6, np.minimum(red, np.round(2.5 * c)).astype(np.int64), 0
        )
        occ_green = np.where(rng.random(T) < 0.15, rng.integers(0, 5, T), 0)
        occ_yellow = np.where(rng.random(T) < 0.05, rng.integers(0, 3, T), 0)
        data[f"occ_red_{mv}"] = occ_red
        data[f"occ_green_{mv}"] = occ_green
        data[f"occ_yellow_{mv}"] = occ_yellow
        data[f"occ_{mv}"] = occ_red + occ_green + occ_yellow

    data["class"] = np.repeat([day_class(d) for d in range(days)], MINUTES_PER_DAY)

    # inject extreme count outliers (guaranteed above any plausible IQR fence)
    if config.outlier_rate > 0:
        rng_out = np.random.default_rng([config.seed, 59, node_index])
        for mv in MOVEMENTS:
            col = data[f"count_{mv}"]
            hits = np.flatnonzero(rng_out.random(T) < config.outlier_rate)
            if hits.size:
                col = col.copy()
                col[hits] = 5 * int(col.max()) + 100
                data[f"count_{mv}"] = col

    ordered = {"minute": data["minute"], "intersection_id": data["intersection_id"]}
    for name in columns:
        ordered[name] = data[name]
    return pd.DataFrame(ordered)
