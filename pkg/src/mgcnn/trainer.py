"""Training loop: MSE loss, Adam with stepped learning-rate decay, batching.

Defaults follow the reference operating point: learning rate 0.0007 decayed
by 0.1 every 10 epochs, Adam, batch size 16, dropout 0.35.  With a fixed
seed the shuffle order, dropout masks, and therefore the whole loss
sequence are reproducible bit-for-bit in serial mode.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .model import (
    ModelConfig,
    ModelGrads,
    ModelParams,
    WindowDataset,
    backward_batch,
    forward_batch,
    init_params,
    pack_windows,
)

MINUTES_PER_DAY = 1440


class TrainingDiverged(RuntimeError):
    def __init__(self, epoch: int, batch: int):
        super().__init__(f"loss became NaN at epoch {epoch}, batch {batch}")
        self.epoch = epoch
        self.batch = batch


@dataclass
class TrainConfig:
    learning_rate: float = 0.0007
    lr_decay_factor: float = 0.1
    lr_decay_every: int = 10
    batch_size: int = 16
    epochs: int = 50
    dropout_rate: float = 0.35
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0
    # stride-1 windows overlap by lookback-1 minutes, so consecutive samples
    # are ~90% redundant; training on every train_stride-th window keeps the
    # dataset intact while an epoch covers distinct traffic situations
    train_stride: int = 5
    early_stop_patience: int = 10  # epochs without >0.1% improvement; 0 disables
    early_stop_rel_tol: float = 1e-3

    def validate(self) -> None:
        if self.learning_rate <= 0 or self.lr_decay_factor <= 0:
            raise ValueError("rates must be positive")
        if self.lr_decay_every <= 0 or self.batch_size < 1 or self.epochs < 0:
            raise ValueError("bad schedule/batch/epoch settings")
        if self.train_stride < 1:
            raise ValueError("train_stride must be >= 1")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError("dropout_rate must be in [0, 1)")


@dataclass
class AdamState:
    """First/second-moment accumulators per parameter tensor plus step count."""

    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    step: int = 0

    @classmethod
    def for_params(cls, params: ModelParams) -> "AdamState":
        zeros = {name: np.zeros_like(t) for name, t in params.tensors().items()}
        return cls(m=zeros, v={name: np.zeros_like(t) for name, t in params.tensors().items()})


@dataclass
class TrainHistory:
    epoch_loss: list[float] = field(default_factory=list)
    epoch_lr: list[float] = field(default_factory=list)
    epoch_seconds: list[float] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.epoch_loss)

    def export(self, path: str | Path, zero_seconds: bool = False) -> None:
        """Write line-delimited records ``epoch,loss,lr,seconds``.

        ``zero_seconds`` replaces wall-clock values with 0.000 so serial-mode
        artifacts are bit-reproducible across runs.
        """
        lines = ["epoch,loss,lr,seconds"]
        for i, (loss, lr, secs) in enumerate(
            zip(self.epoch_loss, self.epoch_lr, self.epoch_seconds)
        ):
            out_secs = 0.0 if zero_seconds else secs
            lines.append(f"{i},{loss:.17g},{lr:.17g},{out_secs:.3f}")
        Path(path).write_text("\n".join(lines) + "\n")


def mse_loss(pred: np.ndarray, target: np.ndarray) -> float:
    """Mean of squared elementwise differences over every element."""
    pred = np.asarray(pred, dtype=float)
    target = np.asarray(target, dtype=float)
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {target.shape}")
    return float(np.mean((pred - target) ** 2))


def lr_schedule(epoch: int, config: TrainConfig) -> float:
    """Stepped decay: base rate times decay_factor^floor(epoch / decay_every)."""
    if epoch < 0:
        raise ValueError("epoch must be >= 0")
    return config.learning_rate * config.lr_decay_factor ** (epoch // config.lr_decay_every)


def adam_step(
    params: ModelParams, grads: ModelGrads, state: AdamState, lr: float, config: TrainConfig
) -> tuple[ModelParams, AdamState]:
    """One bias-corrected Adam update; returns new params and state."""
    if lr <= 0:
        raise ValueError("lr must be positive")
    g = grads.tensors()
    for name, tensor in g.items():
        if not np.all(np.isfinite(tensor)):
            raise ValueError(f"non-finite gradient in {name}")
    t = state.step + 1
    b1, b2, eps = config.adam_beta1, config.adam_beta2, config.adam_eps
    new_m, new_v, updated = {}, {}, {}
    for name, p in params.tensors().items():
        new_m[name] = b1 * state.m[name] + (1 - b1) * g[name]
        new_v[name] = b2 * state.v[name] + (1 - b2) * g[name] ** 2
        m_hat = new_m[name] / (1 - b1**t)
        v_hat = new_v[name] / (1 - b2**t)
        updated[name] = p - lr * m_hat / (np.sqrt(v_hat) + eps)
    from .model import LayerParams

    new_params = ModelParams(
        layer1=LayerParams(updated["layer1.theta"]),
        layer2=LayerParams(updated["layer2.theta"]),
        temporal_weights=updated["temporal_weights"],
        dense_W=updated["dense_W"],
        dense_b=updated["dense_b"],
        dropout_rate=params.dropout_rate,
    )
    return new_params, AdamState(m=new_m, v=new_v, step=t)


def split_train_test(dataset, train_days: int = 19, total_days: int = 20):
    """Split windows by target minute: days 1..train_days train, the rest test.

    Every window lands in exactly one partition; none straddles the boundary
    because only the target minute decides membership.  Accepts a packed
    WindowDataset or a plain window list (returning the same type).
    """
    if train_days < 1 or train_days >= total_days:
        raise ValueError("need 1 <= train_days < total_days")
    if isinstance(dataset, WindowDataset):
        target_minutes = dataset.target_minutes()
        last_minute = int(dataset.minutes.max()) + dataset.horizon
    else:
        target_minutes = np.array([w.target_minute for w in dataset])
        last_minute = int(target_minutes.max()) if len(dataset) else 0
    span_days = last_minute // MINUTES_PER_DAY + 1
    if span_days < total_days:
        raise ValueError(
            f"dataset spans only {span_days} days, fewer than the requested {total_days}"
        )
    boundary = train_days * MINUTES_PER_DAY
    train_mask = target_minutes < boundary
    if not train_mask.any():
        raise ValueError("train partition empty")
    if train_mask.all():
        raise ValueError("test partition empty")
    if isinstance(dataset, WindowDataset):
        order = np.arange(len(dataset))
        return dataset.subset(order[train_mask]), dataset.subset(order[~train_mask])
    return (
        [w for w, keep in zip(dataset, train_mask) if keep],
        [w for w, keep in zip(dataset, train_mask) if not keep],
    )


def _epoch_batches(order: np.ndarray, batch_size: int):
    for start in range(0, len(order), batch_size):
        yield order[start : start + batch_size]


def train(
    dataset: WindowDataset | list,
    model_config: ModelConfig,
    config: TrainConfig,
    log=None,
) -> tuple[ModelParams, TrainHistory]:
    """Train on every window in ``dataset``; returns final params and history.

    Windows are reshuffled each epoch with the seeded RNG and consumed in
    minibatches (the last partial batch is used).  Early stopping ends
    training after ``early_stop_patience`` epochs without a relative
    improvement of ``early_stop_rel_tol`` over the best loss seen.
    """
    config.validate()
    if not isinstance(dataset, WindowDataset):
        dataset = pack_windows(dataset, lambda_max=model_config.lambda_max)
    if len(dataset) == 0:
        raise ValueError("empty training set")
    if config.train_stride > 1:
        dataset = dataset.subset(np.arange(0, len(dataset), config.train_stride))
    root = np.random.SeedSequence(config.seed)
    init_seq, loop_seq = root.spawn(2)
    params = init_params(
        dataset.n_features, dataset.lookback, model_config, seed=init_seq
    )
    params.dropout_rate = config.dropout_rate
    state = AdamState.for_params(params)
    rng = np.random.default_rng(loop_seq)
    history = TrainHistory()
    best = np.inf
    stale_epochs = 0
    for epoch in range(config.epochs):
        started = time.perf_counter()
        lr = lr_schedule(epoch, config)
        order = rng.permutation(len(dataset))
        loss_sum = 0.0
        for batch_no, batch_idx in enumerate(_epoch_batches(order, config.batch_size)):
            feats, laps, targets = dataset.gather(batch_idx)
            seed = int(rng.integers(0, 2**63 - 1))
            preds, trace = forward_batch(feats, laps, params, training=True, dropout_seed=seed)
            batch_loss = mse_loss(preds, targets)
            if not np.isfinite(batch_loss):
                raise TrainingDiverged(epoch, batch_no)
            grads = backward_batch(trace, targets)
            params, state = adam_step(params, grads, state, lr, config)
            loss_sum += batch_loss * len(batch_idx)
        epoch_loss = loss_sum / len(dataset)
        history.epoch_loss.append(epoch_loss)
        history.epoch_lr.append(lr)
        history.epoch_seconds.append(time.perf_counter() - started)
        if log is not None:
            log(f"epoch {epoch}: loss {epoch_loss:.6f} lr {lr:g} "
                f"({history.epoch_seconds[-1]:.1f}s)")
        if epoch_loss < best * (1.0 - config.early_stop_rel_tol):
            best = epoch_loss
            stale_epochs = 0
        else:
            stale_epochs += 1
            if config.early_stop_patience and stale_epochs >= config.early_stop_patience:
                if log is not None:
                    log(f"early stop at epoch {epoch}: no improvement for "
                        f"{stale_epochs} epochs")
                break
    return params, history


def predict_batch(
    dataset: WindowDataset, params: ModelParams, batch_size: int = 256
) -> np.ndarray:
    """Eval-mode predictions for every window; returns (W, n, s)."""
    outputs = []
    for batch_idx in _epoch_batches(np.arange(len(dataset)), batch_size):
        feats, laps, _ = dataset.gather(batch_idx)
        preds, _ = forward_batch(feats, laps, params, training=False)
        outputs.append(preds)
    return np.concatenate(outputs, axis=0)
