"""Forward network and analytic gradients.

Architecture, per lookback window: every snapshot passes through two
Chebyshev graph-convolution layers (shared filters across timesteps, ReLU
after each), the per-timestep outputs are fused by a learned weighted sum
over the lookback axis, dropout is applied, and a node-wise shared dense
layer emits the 12 turning-movement predictions per intersection.

Gradients are hand-derived reverse-mode for this fixed architecture; there
is no general autodiff here.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .spectral import (
    apply_weight_transform,
    chebyshev_basis_batch,
    chebyshev_weighted_sum_batch,
    largest_eigenvalues_batch,
    normalized_laplacian_batch,
)
from .topology import MultiGraphWindow

CKPT_VERSION = "mgcnn-ckpt-v1"
N_MOVEMENTS = 12


@dataclass
class ModelConfig:
    """Architecture hyperparameters (channel widths and filter order are
    config defaults, not fixed by the problem)."""

    cheb_order: int = 3
    channels1: int = 32
    channels2: int = 32
    out_movements: int = N_MOVEMENTS
    dropout_rate: float = 0.35
    lambda_max: float | None = None  # None: power iteration per snapshot
    weight_transform: str = "none"  # 'inverse' converts travel times to affinities


@dataclass
class LayerParams:
    """Chebyshev filter coefficients for one graph-convolution layer.

    ``theta[k, i, o]`` weights the k-th Chebyshev term of input channel i
    toward output channel o.
    """

    theta: np.ndarray

    @property
    def K(self) -> int:
        return self.theta.shape[0]

    @property
    def c_in(self) -> int:
        return self.theta.shape[1]

    @property
    def c_out(self) -> int:
        return self.theta.shape[2]


@dataclass
class ModelParams:
    layer1: LayerParams
    layer2: LayerParams
    temporal_weights: np.ndarray  # (channels, lookback)
    dense_W: np.ndarray  # (channels, movements)
    dense_b: np.ndarray  # (movements,)
    dropout_rate: float = 0.35

    def tensors(self) -> dict[str, np.ndarray]:
        return {
            "layer1.theta": self.layer1.theta,
            "layer2.theta": self.layer2.theta,
            "temporal_weights": self.temporal_weights,
            "dense_W": self.dense_W,
            "dense_b": self.dense_b,
        }

    def copy(self) -> "ModelParams":
        return ModelParams(
            layer1=LayerParams(self.layer1.theta.copy()),
            layer2=LayerParams(self.layer2.theta.copy()),
            temporal_weights=self.temporal_weights.copy(),
            dense_W=self.dense_W.copy(),
            dense_b=self.dense_b.copy(),
            dropout_rate=self.dropout_rate,
        )


@dataclass
class ModelGrads:
    layer1_theta: np.ndarray
    layer2_theta: np.ndarray
    temporal_weights: np.ndarray
    dense_W: np.ndarray
    dense_b: np.ndarray

    def tensors(self) -> dict[str, np.ndarray]:
        return {
            "layer1.theta": self.layer1_theta,
            "layer2.theta": self.layer2_theta,
            "temporal_weights": self.temporal_weights,
            "dense_W": self.dense_W,
            "dense_b": self.dense_b,
        }


@dataclass
class ForwardTrace:
    """Intermediate activations cached by a training-mode forward pass."""

    laplacians: np.ndarray  # (B*m, n, n) scaled
    basis1: np.ndarray  # (B*m, K, n, F)
    relu1_gate: np.ndarray  # (B*m, n, c1) bool
    hidden1: np.ndarray  # (B*m, n, c1)
    basis2: np.ndarray  # (B*m, K, n, c1)
    relu2_gate: np.ndarray  # (B*m, n, c2) bool
    stacked: np.ndarray  # (B, m, n, c2)
    dropout_scale: np.ndarray  # (B, n, c2) multiplier incl. 1/(1-rate)
    dropped: np.ndarray  # (B, n, c2)
    predictions: np.ndarray  # (B, n, s)
    params: ModelParams


def init_params(
    n_features: int, lookback: int, config: ModelConfig, seed=0
) -> ModelParams:
    """Seeded Glorot initialization per Chebyshev term; temporal fusion
    starts near a window mean and the output bias at zero."""
    rng = np.random.default_rng(seed)
    K, c1, c2 = config.cheb_order, config.channels1, config.channels2
    s = config.out_movements
    theta1 = rng.normal(0.0, np.sqrt(2.0 / (n_features + c1)), size=(K, n_features, c1))
    theta2 = rng.normal(0.0, np.sqrt(2.0 / (c1 + c2)), size=(K, c1, c2))
    temporal = np.full((c2, lookback), 1.0 / lookback) + rng.normal(
        0.0, 0.01, size=(c2, lookback)
    )
    dense_W = rng.normal(0.0, np.sqrt(2.0 / (c2 + s)), size=(c2, s))
    dense_b = np.zeros(s)
    return ModelParams(
        layer1=LayerParams(theta1),
        layer2=LayerParams(theta2),
        temporal_weights=temporal,
        dense_W=dense_W,
        dense_b=dense_b,
        dropout_rate=config.dropout_rate,
    )


# ---------------------------------------------------------------------------
# Single-window operations


def cheb_conv(Ltilde, X: np.ndarray, params: LayerParams, apply_relu: bool = True) -> np.ndarray:
    """One Chebyshev graph convolution: sum_k basis_k(X) theta_k, then ReLU."""
    from .spectral import chebyshev_basis

    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[1] != params.c_in:
        raise ValueError(f"X must be n x {params.c_in}, got {X.shape}")
    basis = chebyshev_basis(Ltilde, X, params.K)
    out = np.einsum("knf,kfo->no", np.stack(basis), params.theta)
    return np.maximum(out, 0.0) if apply_relu else out


def temporal_fuse(stack: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """Learned weighted sum over the lookback axis of an (m, n, c) stack.

    ``weights`` is (c, m) for per-channel kernels, or a length-m vector
    shared by all channels.
    """
    stack = np.asarray(stack, dtype=float)
    if stack.ndim != 3 or stack.shape[0] == 0:
        raise ValueError("stack must be a nonempty (m, n, c) tensor")
    m, _, c = stack.shape
    weights = np.asarray(weights, dtype=float)
    if weights.ndim == 1:
        weights = np.broadcast_to(weights, (c, m))
    if weights.shape != (c, m):
        raise ValueError(f"weights must have {m} entries per channel, got {weights.shape}")
    return np.einsum("mnc,cm->nc", stack, weights)


def dropout(
    X: np.ndarray, rate: float, rng_seed: int | None = None, training: bool = True
) -> tuple[np.ndarray, np.ndarray]:
    """Inverted dropout: zero entries w.p. ``rate``, scale survivors by
    1/(1-rate).  Returns (output, multiplier mask); eval mode is identity."""
    if not 0.0 <= rate < 1.0:
        raise ValueError("rate must be in [0, 1)")
    X = np.asarray(X, dtype=float)
    if not training or rate == 0.0:
        return X.copy(), np.ones_like(X)
    rng = np.random.default_rng(rng_seed)
    mask = (rng.random(X.shape) >= rate) / (1.0 - rate)
    return X * mask, mask


def dense(X: np.ndarray, W: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Node-wise shared affine map: X W + b broadcast per row."""
    X, W, b = np.asarray(X, dtype=float), np.asarray(W, dtype=float), np.asarray(b, dtype=float)
    if X.shape[1] != W.shape[0] or W.shape[1] != b.shape[0]:
        raise ValueError(f"shape mismatch: X{X.shape} W{W.shape} b{b.shape}")
    return X @ W + b


# ---------------------------------------------------------------------------
# Batched forward / backward (the training hot path)


def scaled_laplacians(
    weights_stack: np.ndarray,
    lambda_max: float | None = None,
    tol: float = 1e-8,
    max_iter: int = 5000,
    weight_transform: str = "none",
) -> np.ndarray:
    """Scaled Laplacians 2 L_t / lambda_max - I for a (T, n, n) weight stack."""
    L = normalized_laplacian_batch(apply_weight_transform(weights_stack, weight_transform))
    n = L.shape[-1]
    if lambda_max is None:
        lam = largest_eigenvalues_batch(L, tol=tol, max_iter=max_iter)
    else:
        if lambda_max <= 0:
            raise ValueError("lambda_max must be positive")
        lam = np.full(L.shape[0], float(lambda_max))
    Lt = (2.0 / lam)[:, None, None] * L
    Lt[:, np.arange(n), np.arange(n)] -= 1.0
    return Lt


def forward_batch(
    features: np.ndarray,
    laplacians: np.ndarray,
    params: ModelParams,
    training: bool = False,
    dropout_seed: int | None = None,
) -> tuple[np.ndarray, ForwardTrace | None]:
    """Run the network on a batch.

    ``features`` is (B, m, n, F) and ``laplacians`` (B, m, n, n) holds the
    scaled Laplacian of each snapshot.  Returns (B, n, s) predictions and,
    in training mode, the trace needed by ``backward_batch``.
    """
    B, m, n, F = features.shape
    K = params.layer1.K
    c1, c2 = params.layer1.c_out, params.layer2.c_out
    s = params.dense_b.shape[0]
    Lt = laplacians.reshape(B * m, n, n)
    X = features.reshape(B * m, n, F)

    basis1 = chebyshev_basis_batch(Lt, X, K)
    Z1 = (basis1.transpose(0, 2, 1, 3).reshape(B * m * n, K * F)
          @ params.layer1.theta.reshape(K * F, c1)).reshape(B * m, n, c1)
    gate1 = Z1 > 0
    H1 = np.where(gate1, Z1, 0.0)

    basis2 = chebyshev_basis_batch(Lt, H1, K)
    Z2 = (basis2.transpose(0, 2, 1, 3).reshape(B * m * n, K * c1)
          @ params.layer2.theta.reshape(K * c1, c2)).reshape(B * m, n, c2)
    gate2 = Z2 > 0
    H2 = np.where(gate2, Z2, 0.0)

    stacked = H2.reshape(B, m, n, c2)
    fused = np.einsum("bmnc,cm->bnc", stacked, params.temporal_weights)

    if training and params.dropout_rate > 0.0:
        rng = np.random.default_rng(dropout_seed)
        scale = (rng.random((B, n, c2)) >= params.dropout_rate) / (1.0 - params.dropout_rate)
    else:
        scale = np.ones((B, n, c2))
    dropped = fused * scale

    preds = (dropped.reshape(B * n, c2) @ params.dense_W).reshape(B, n, s) + params.dense_b

    if not training:
        return preds, None
    trace = ForwardTrace(
        laplacians=Lt,
        basis1=basis1,
        relu1_gate=gate1,
        hidden1=H1,
        basis2=basis2,
        relu2_gate=gate2,
        stacked=stacked,
        dropout_scale=scale,
        dropped=dropped,
        predictions=preds,
        params=params,
    )
    return preds, trace


def backward_batch(trace: ForwardTrace, targets: np.ndarray) -> ModelGrads:
    """Gradients of the mean-squared-error loss over every batch element."""
    params = trace.params
    B, n, s = trace.predictions.shape
    m = trace.stacked.shape[1]
    K = params.layer1.K
    F, c1, c2 = params.layer1.c_in, params.layer1.c_out, params.layer2.c_out

    G = (2.0 / (B * n * s)) * (trace.predictions - targets)  # (B, n, s)
    dW = trace.dropped.reshape(B * n, c2).T @ G.reshape(B * n, s)
    db = G.sum(axis=(0, 1))
    d_dropped = (G.reshape(B * n, s) @ params.dense_W.T).reshape(B, n, c2)
    d_fused = d_dropped * trace.dropout_scale

    d_tw = np.einsum("bnc,bmnc->cm", d_fused, trace.stacked)
    dS = np.einsum("bnc,cm->bmnc", d_fused, params.temporal_weights).reshape(B * m, n, c2)

    dZ2 = np.where(trace.relu2_gate, dS, 0.0)
    flat_b2 = trace.basis2.transpose(0, 2, 1, 3).reshape(B * m * n, K * c1)
    d_theta2 = (flat_b2.T @ dZ2.reshape(B * m * n, c2)).reshape(K, c1, c2)
    dB2 = (dZ2.reshape(B * m * n, c2) @ params.layer2.theta.reshape(K * c1, c2).T)
    dB2 = dB2.reshape(B * m, n, K, c1).transpose(0, 2, 1, 3)
    dH1 = chebyshev_weighted_sum_batch(trace.laplacians, np.ascontiguousarray(dB2))

    dZ1 = np.where(trace.relu1_gate, dH1, 0.0)
    flat_b1 = trace.basis1.transpose(0, 2, 1, 3).reshape(B * m * n, K * F)
    d_theta1 = (flat_b1.T @ dZ1.reshape(B * m * n, c1)).reshape(K, F, c1)

    return ModelGrads(
        layer1_theta=d_theta1,
        layer2_theta=d_theta2,
        temporal_weights=d_tw,
        dense_W=dW,
        dense_b=db,
    )


def _window_arrays(window: MultiGraphWindow) -> tuple[np.ndarray, np.ndarray]:
    feats = np.stack([s.node_features for s in window.snapshots])[None, ...]
    weights = np.stack([s.weights for s in window.snapshots])
    return feats, weights


def forward(
    window: MultiGraphWindow,
    params: ModelParams,
    mode: str = "eval",
    seed: int | None = None,
    lambda_max: float | None = None,
    laplacians: np.ndarray | None = None,
    weight_transform: str = "none",
) -> tuple[np.ndarray, ForwardTrace | None]:
    """Predict the n x s turning movements for one lookback window.

    ``laplacians`` may carry precomputed scaled Laplacians (m, n, n) to skip
    the per-snapshot eigenvalue estimation.
    """
    if mode not in ("train", "eval"):
        raise ValueError("mode must be 'train' or 'eval'")
    feats, weights = _window_arrays(window)
    if laplacians is None:
        laplacians = scaled_laplacians(weights, lambda_max=lambda_max,
                                       weight_transform=weight_transform)
    preds, trace = forward_batch(
        feats, laplacians[None, ...], params, training=(mode == "train"), dropout_seed=seed
    )
    return preds[0], trace


def gradients(
    window: MultiGraphWindow,
    params: ModelParams,
    target: np.ndarray,
    trace: ForwardTrace | None,
) -> ModelGrads:
    """MSE-loss gradients for one window, reusing the training-mode trace."""
    if trace is None:
        raise ValueError("missing trace: run forward in train mode first")
    if trace.params is not params:
        raise ValueError("stale trace: it was produced with different parameters")
    return backward_batch(trace, np.asarray(target, dtype=float)[None, ...])


# ---------------------------------------------------------------------------
# Packed window datasets


@dataclass
class WindowDataset:
    """Windows packed into shared per-minute arrays for fast batched access.

    Snapshot-level arrays (features, Laplacians, observed counts) are shared
    across overlapping windows, never copied per window; per-window arrays
    hold the targets.  ``end_indices[w]`` is the stream position of window
    w's last snapshot.
    """

    features: np.ndarray  # (T, n, F) model inputs (normalized space)
    laplacians: np.ndarray  # (T, n, n) scaled Laplacians
    counts_raw: np.ndarray  # (T, n, s) observed counts per minute (raw units)
    minutes: np.ndarray  # (T,) absolute minute index of each stream position
    end_indices: np.ndarray  # (W,) positions of window ends
    win_targets: np.ndarray  # (W, n, s) targets in model (loss) space
    win_targets_raw: np.ndarray  # (W, n, s) targets in raw count units
    win_day_class: np.ndarray  # (W,) 0 weekend / 1 weekday of the target minute
    lookback: int
    horizon: int
    node_ids: list[str] = field(default_factory=list)
    windows: list[MultiGraphWindow] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.end_indices)

    @property
    def n_features(self) -> int:
        return self.features.shape[2]

    def gather(self, which: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Batch arrays (features, laplacians, targets) for window indices."""
        ends = self.end_indices[which]
        offsets = np.arange(-(self.lookback - 1), 1)
        idx = ends[:, None] + offsets[None, :]
        return self.features[idx], self.laplacians[idx], self.win_targets[which]

    def target_minutes(self) -> np.ndarray:
        return self.minutes[self.end_indices] + self.horizon

    def last_observed_counts(self, which: np.ndarray) -> np.ndarray:
        """Raw counts at each window's final snapshot minute (persistence input)."""
        return self.counts_raw[self.end_indices[which]]

    def subset(self, which: np.ndarray) -> "WindowDataset":
        which = np.atleast_1d(which)
        return WindowDataset(
            features=self.features,
            laplacians=self.laplacians,
            counts_raw=self.counts_raw,
            minutes=self.minutes,
            end_indices=self.end_indices[which],
            win_targets=self.win_targets[which],
            win_targets_raw=self.win_targets_raw[which],
            win_day_class=self.win_day_class[which],
            lookback=self.lookback,
            horizon=self.horizon,
            node_ids=self.node_ids,
            windows=[self.windows[i] for i in which] if self.windows else [],
        )


def pack_windows(
    windows: list[MultiGraphWindow],
    lambda_max: float | None = None,
    node_ids: list[str] | None = None,
    weight_transform: str = "none",
) -> WindowDataset:
    """Build a WindowDataset from window objects sharing a snapshot stream.

    Snapshots are deduplicated by timestep, so overlapping windows cost no
    extra memory; Laplacians are computed once per distinct minute.
    """
    if not windows:
        raise ValueError("no windows to pack")
    lookback, horizon = windows[0].lookback, windows[0].horizon
    by_step: dict[int, object] = {}
    for w in windows:
        if w.lookback != lookback or w.horizon != horizon:
            raise ValueError("windows must share lookback and horizon")
        for snap in w.snapshots:
            by_step.setdefault(snap.timestep, snap)
    steps = sorted(by_step)
    if np.any(np.diff(steps) != 1):
        raise ValueError("window snapshots must form one consecutive minute stream")
    step_pos = {t: i for i, t in enumerate(steps)}
    snaps = [by_step[t] for t in steps]
    n, _ = snaps[0].node_features.shape
    s = windows[0].target.shape[1]

    features = np.stack([s_.node_features for s_ in snaps])
    weights = np.stack([s_.weights for s_ in snaps])
    laplacians = scaled_laplacians(weights, lambda_max=lambda_max,
                                   weight_transform=weight_transform)
    counts_raw = np.zeros((len(steps), n, s))
    for i, snap in enumerate(snaps):
        if snap.raw_counts is not None:
            counts_raw[i] = snap.raw_counts
    end_indices = np.array([step_pos[w.snapshots[-1].timestep] for w in windows])
    win_targets = np.stack([np.asarray(w.target, dtype=float) for w in windows])
    win_targets_raw = np.stack(
        [
            np.asarray(w.target_raw if w.target_raw is not None else w.target, dtype=float)
            for w in windows
        ]
    )
    win_day_class = np.array(
        [w.day_class if w.day_class is not None else 1 for w in windows], dtype=int
    )
    return WindowDataset(
        features=features,
        laplacians=laplacians,
        counts_raw=counts_raw,
        minutes=np.array(steps),
        end_indices=end_indices,
        win_targets=win_targets,
        win_targets_raw=win_targets_raw,
        win_day_class=win_day_class,
        lookback=lookback,
        horizon=horizon,
        node_ids=node_ids or [],
        windows=list(windows),
    )


# ---------------------------------------------------------------------------
# Checkpoints


def save_checkpoint(
    path: str | Path,
    params: ModelParams,
    config: ModelConfig,
    n_nodes: int,
    n_features: int,
    lookback: int,
    horizon: int = 5,
    kept_attributes: list[str] | None = None,
) -> None:
    """Write a self-describing text checkpoint (format mgcnn-ckpt-v1).

    Tensors are emitted row-major with explicit shape headers; values use
    %.17g so float64 round-trips exactly.
    """
    lines = [CKPT_VERSION]
    lam = "power" if config.lambda_max is None else f"fixed:{config.lambda_max:g}"
    lines.append(
        f"config n={n_nodes} F={n_features} m={lookback} N={horizon} K={config.cheb_order} "
        f"c1={config.channels1} c2={config.channels2} s={config.out_movements} "
        f"dropout={config.dropout_rate:g} lambda_max={lam} "
        f"weight_transform={config.weight_transform}"
    )
    if kept_attributes:
        lines.append("kept " + " ".join(kept_attributes))
    for name, tensor in params.tensors().items():
        shape = " ".join(str(d) for d in tensor.shape)
        lines.append(f"tensor {name} {shape}")
        flat = tensor.reshape(-1)
        for start in range(0, flat.size, 8):
            lines.append(" ".join(f"{v:.17g}" for v in flat[start : start + 8]))
    Path(path).write_text("\n".join(lines) + "\n")


def load_checkpoint(path: str | Path) -> tuple[ModelParams, ModelConfig, dict]:
    """Read an mgcnn-ckpt-v1 checkpoint; returns (params, config, metadata)."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    lines = path.read_text().splitlines()
    if not lines or lines[0] != CKPT_VERSION:
        raise ValueError(f"{path}: not a {CKPT_VERSION} checkpoint")
    if len(lines) < 2 or not lines[1].startswith("config "):
        raise ValueError(f"{path}: missing config line")
    meta: dict = {}
    for item in lines[1][len("config "):].split():
        key, val = item.split("=", 1)
        meta[key] = val
    pos = 2
    if pos < len(lines) and lines[pos].startswith("kept "):
        meta["kept"] = lines[pos][len("kept "):].split()
        pos += 1
    tensors: dict[str, np.ndarray] = {}
    while pos < len(lines):
        header = lines[pos].split()
        if header[0] != "tensor":
            raise ValueError(f"{path}: expected tensor header at line {pos + 1}")
        name = header[1]
        shape = tuple(int(d) for d in header[2:])
        count = int(np.prod(shape)) if shape else 1
        pos += 1
        vals: list[float] = []
        while len(vals) < count:
            vals.extend(float(v) for v in lines[pos].split())
            pos += 1
        tensors[name] = np.array(vals).reshape(shape)
    lam_s = meta.get("lambda_max", "power")
    config = ModelConfig(
        cheb_order=int(meta["K"]),
        channels1=int(meta["c1"]),
        channels2=int(meta["c2"]),
        out_movements=int(meta["s"]),
        dropout_rate=float(meta["dropout"]),
        lambda_max=None if lam_s == "power" else float(lam_s.split(":", 1)[1]),
        weight_transform=meta.get("weight_transform", "none"),
    )
    params = ModelParams(
        layer1=LayerParams(tensors["layer1.theta"]),
        layer2=LayerParams(tensors["layer2.theta"]),
        temporal_weights=tensors["temporal_weights"],
        dense_W=tensors["dense_W"],
        dense_b=tensors["dense_b"],
        dropout_rate=config.dropout_rate,
    )
    meta["n"] = int(meta["n"])
    meta["F"] = int(meta["F"])
    meta["m"] = int(meta["m"])
    meta["N"] = int(meta.get("N", 5))
    return params, config, meta
