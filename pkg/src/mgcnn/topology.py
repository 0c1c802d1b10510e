"""Corridor topology, per-minute graph snapshots, and lookback windowing.

The corridor is a fixed set of intersections (nodes) joined by road links
(edges, both directions of every physical link).  Edge weights are travel
times in seconds and change every minute with the observed speeds, so the
corridor at minute t is one weighted graph and a lookback window is an
ordered stack of such graphs.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np


class TopologyError(ValueError):
    """Raised for malformed topology files or invariant violations."""


@dataclass
class CorridorTopology:
    """Static node/edge structure of a corridor with link lengths in miles.

    ``edges`` holds ordered (i, j) node-index pairs, one per direction of
    each physical link.  ``link_length`` is keyed by the same pairs and is
    symmetric.
    """

    node_ids: list[str]
    edges: list[tuple[int, int]]
    link_length: dict[tuple[int, int], float]
    bidirectional: bool = True

    @property
    def n(self) -> int:
        return len(self.node_ids)

    def validate(self, min_nodes: int = 2) -> None:
        """Check structural invariants; raises TopologyError on violation.

        ``min_nodes=1`` admits the degenerate single-intersection corridor
        used by downstream dataset assembly.
        """
        if self.n < min_nodes:
            raise TopologyError(f"need at least {min_nodes} nodes, got {self.n}")
        if len(set(self.node_ids)) != self.n:
            raise TopologyError("duplicate node ids")
        edge_set = set(self.edges)
        if len(edge_set) != len(self.edges):
            raise TopologyError("duplicate edges")
        for i, j in self.edges:
            if i == j:
                raise TopologyError(f"self-loop on node {self.node_ids[i]}")
            if not (0 <= i < self.n and 0 <= j < self.n):
                raise TopologyError(f"edge ({i},{j}) references unknown node index")
            if (j, i) not in edge_set:
                raise TopologyError(
                    f"missing reverse edge ({self.node_ids[j]},{self.node_ids[i]})"
                )
            length = self.link_length.get((i, j))
            if length is None:
                raise TopologyError(f"no length for edge ({self.node_ids[i]},{self.node_ids[j]})")
            if not (length > 0) or not np.isfinite(length):
                raise TopologyError(
                    f"non-positive length on edge ({self.node_ids[i]},{self.node_ids[j]})"
                )
            if self.link_length[(i, j)] != self.link_length[(j, i)]:
                raise TopologyError(
                    f"asymmetric length on link ({self.node_ids[i]},{self.node_ids[j]})"
                )

    def index_of(self, node_id: str) -> int:
        try:
            return self.node_ids.index(node_id)
        except ValueError:
            raise TopologyError(f"unknown node id {node_id!r}") from None


@dataclass
class GraphSnapshot:
    """Weighted corridor graph at one minute.

    ``weights[i, j]`` is the travel time in seconds along edge (i, j) and is
    zero exactly where no edge exists; ``node_features`` is the n-by-F
    per-intersection feature matrix for the same minute.
    """

    timestep: int
    weights: np.ndarray
    node_features: np.ndarray
    raw_counts: np.ndarray | None = None  # n x 12 observed counts, for baselines

    def validate(self, topology: CorridorTopology | None = None) -> None:
        n = self.weights.shape[0]
        if self.weights.shape != (n, n):
            raise ValueError("weights must be square")
        if self.node_features.shape[0] != n:
            raise ValueError("node_features row count must match node count")
        if not np.all(np.isfinite(self.node_features)):
            raise ValueError("node_features contains NaN/Inf")
        if np.any(np.diag(self.weights) != 0):
            raise ValueError("weights diagonal must be zero")
        nz = self.weights != 0
        if not np.all(np.isfinite(self.weights[nz])) or np.any(self.weights[nz] <= 0):
            raise ValueError("nonzero weights must be finite and positive")
        if topology is not None:
            expected = np.zeros((n, n), dtype=bool)
            for i, j in topology.edges:
                expected[i, j] = True
            if not np.array_equal(nz, expected):
                raise ValueError("weight sparsity pattern does not match topology edges")


@dataclass
class MultiGraphWindow:
    """Ordered stack of m consecutive snapshots plus the prediction target.

    ``target`` is the n-by-s matrix of turning-movement counts ``horizon``
    minutes after the last snapshot; it is in normalized units when produced
    by the preprocessing pipeline, with the raw counts kept in
    ``target_raw`` for metric reporting.
    """

    snapshots: list[GraphSnapshot]
    target: np.ndarray
    horizon: int
    lookback: int
    target_raw: np.ndarray | None = None
    day_class: int | None = None

    @property
    def m(self) -> int:
        return len(self.snapshots)

    @property
    def target_minute(self) -> int:
        return self.snapshots[-1].timestep + self.horizon


def load_topology(path: str | Path) -> CorridorTopology:
    """Parse a corridor topology file.

    Format: a ``nodes: <id> <id> ...`` header, then one ``link <id_i> <id_j>
    <miles>`` line per physical link (both directions implied).  Blank lines
    and ``#`` comments are ignored.
    """
    path = Path(path)
    node_ids: list[str] | None = None
    edges: list[tuple[int, int]] = []
    link_length: dict[tuple[int, int], float] = {}
    for lineno, raw in enumerate(path.read_text().splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if line.startswith("nodes:"):
            if node_ids is not None:
                raise TopologyError(f"{path}:{lineno}: duplicate nodes header")
            node_ids = line[len("nodes:"):].split()
            if len(set(node_ids)) != len(node_ids):
                raise TopologyError(f"{path}:{lineno}: duplicate node ids")
            continue
        parts = line.split()
        if parts[0] != "link" or len(parts) != 4:
            raise TopologyError(f"{path}:{lineno}: expected 'link <id> <id> <miles>'")
        if node_ids is None:
            raise TopologyError(f"{path}:{lineno}: link before nodes header")
        ida, idb, miles_s = parts[1], parts[2], parts[3]
        for node in (ida, idb):
            if node not in node_ids:
                raise TopologyError(f"{path}:{lineno}: unknown node id {node!r}")
        try:
            miles = float(miles_s)
        except ValueError:
            raise TopologyError(f"{path}:{lineno}: bad length {miles_s!r}") from None
        if not miles > 0:
            raise TopologyError(f"{path}:{lineno}: link length must be positive")
        i, j = node_ids.index(ida), node_ids.index(idb)
        if (i, j) in link_length:
            raise TopologyError(f"{path}:{lineno}: duplicate link {ida}-{idb}")
        edges.extend([(i, j), (j, i)])
        link_length[(i, j)] = miles
        link_length[(j, i)] = miles
    if node_ids is None:
        raise TopologyError(f"{path}: missing nodes header")
    topo = CorridorTopology(node_ids=node_ids, edges=edges, link_length=link_length)
    topo.validate()
    return topo


def write_topology(topology: CorridorTopology, path: str | Path) -> None:
    """Write a topology in the format accepted by load_topology."""
    lines = ["nodes: " + " ".join(topology.node_ids)]
    seen = set()
    for i, j in topology.edges:
        key = (min(i, j), max(i, j))
        if key in seen:
            continue
        seen.add(key)
        lines.append(
            f"link {topology.node_ids[key[0]]} {topology.node_ids[key[1]]} "
            f"{topology.link_length[key]:g}"
        )
    Path(path).write_text("\n".join(lines) + "\n")


def edge_weight(length_miles: float, speed_mph: float, speed_floor_mph: float = 1.0) -> float:
    """Travel time in seconds over a link: 3600 * miles / mph.

    Speed is floored at ``speed_floor_mph`` so stopped traffic yields a large
    but finite weight.
    """
    if not length_miles > 0:
        raise ValueError("length_miles must be positive")
    if not speed_floor_mph > 0:
        raise ValueError("speed_floor_mph must be positive")
    return 3600.0 * length_miles / max(speed_mph, speed_floor_mph)


def build_snapshot(
    topology: CorridorTopology,
    speeds: dict[tuple[int, int], float],
    features: np.ndarray,
    timestep: int = 0,
    speed_floor_mph: float = 1.0,
) -> GraphSnapshot:
    """Assemble the weighted graph for one minute from per-edge speeds.

    ``speeds`` maps each directed edge (i, j) to the mph observed in that
    direction; weights may be asymmetric.
    """
    n = topology.n
    features = np.asarray(features, dtype=float)
    if features.ndim != 2 or features.shape[0] != n:
        raise ValueError(f"features must have {n} rows, got shape {features.shape}")
    weights = np.zeros((n, n))
    for i, j in topology.edges:
        if (i, j) not in speeds:
            raise ValueError(
                f"missing speed for edge ({topology.node_ids[i]},{topology.node_ids[j]})"
            )
        weights[i, j] = edge_weight(
            topology.link_length[(i, j)], speeds[(i, j)], speed_floor_mph
        )
    return GraphSnapshot(timestep=timestep, weights=weights, node_features=features)


def stack_window(
    snapshots: list[GraphSnapshot],
    lookback: int,
    horizon: int,
    targets: np.ndarray | list[np.ndarray],
    target_raw: np.ndarray | list[np.ndarray] | None = None,
    day_class: np.ndarray | list[int] | None = None,
) -> list[MultiGraphWindow]:
    """Slide a lookback window over a snapshot stream (stride 1 minute).

    ``targets[i]`` are the counts observed at the minute of ``snapshots[i]``;
    the window ending at stream position t takes its target from position
    t + horizon.  Emits T - lookback - horizon + 1 windows, or none (with a
    warning) when the stream is too short.
    """
    if lookback < 1 or horizon < 1:
        raise ValueError("lookback and horizon must be >= 1")
    T = len(snapshots)
    if len(targets) != T:
        raise ValueError("targets must align with snapshots")
    if T < lookback + horizon:
        warnings.warn(
            f"stream of {T} snapshots is shorter than lookback+horizon="
            f"{lookback + horizon}; no windows produced"
        )
        return []
    steps = np.array([s.timestep for s in snapshots])
    if np.any(np.diff(steps) != 1):
        raise ValueError("snapshots must cover consecutive, strictly increasing minutes")
    windows = []
    for end in range(lookback - 1, T - horizon):
        tgt_idx = end + horizon
        windows.append(
            MultiGraphWindow(
                snapshots=snapshots[end - lookback + 1 : end + 1],
                target=np.asarray(targets[tgt_idx]),
                horizon=horizon,
                lookback=lookback,
                target_raw=(None if target_raw is None else np.asarray(target_raw[tgt_idx])),
                day_class=(None if day_class is None else int(day_class[tgt_idx])),
            )
        )
    return windows
