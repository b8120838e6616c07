"""Time normalization, the joint loss, and the optimization loop.

Timestamps are min-max scaled to [0, 1] before regression; the scale is
computed from the training split only and travels with every checkpoint
so inference can re-project predictions to hours. The objective is
alpha * cross-entropy + beta * mean-squared-error, both weights 1 by
default.
"""

from __future__ import annotations

import copy
import warnings
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .config import TrainConfig
from .errors import ConfigError, DataError, InputError


@dataclass(frozen=True)
class TimeScale:
    """Stored (t_min, t_max) pair defining the normalization."""

    t_min: float
    t_max: float

    def __post_init__(self) -> None:
        if not self.t_max > self.t_min:
            raise ConfigError(f"degenerate time scale: t_min={self.t_min}, t_max={self.t_max}")

    @classmethod
    def from_hours(cls, hours) -> "TimeScale":
        arr = np.asarray(hours, dtype=np.float64)
        if arr.size == 0:
            raise DataError("cannot derive a time scale from zero timestamps")
        return cls(float(arr.min()), float(arr.max()))


def normalize_time(t, scale: TimeScale):
    """Linear map [t_min, t_max] -> [0, 1]; out-of-range inputs clamp.

    Accepts scalars or arrays; returns the matching type.
    """
    arr = np.asarray(t, dtype=np.float64)
    out = (arr - scale.t_min) / (scale.t_max - scale.t_min)
    if np.any(out < 0.0) or np.any(out > 1.0):
        warnings.warn(
            f"timestamp(s) outside [{scale.t_min}, {scale.t_max}] clamped during normalization",
            stacklevel=2,
        )
        out = np.clip(out, 0.0, 1.0)
    return float(out) if np.isscalar(t) else out


def denormalize_time(t_hat, scale: TimeScale):
    """Inverse of normalize_time: t_hat * (t_max - t_min) + t_min."""
    arr = np.asarray(t_hat, dtype=np.float64)
    if np.any(arr < 0.0) or np.any(arr > 1.0):
        raise InputError("normalized time must lie in [0, 1]")
    out = arr * (scale.t_max - scale.t_min) + scale.t_min
    return float(out) if np.isscalar(t_hat) else out


# ── Losses ───────────────────────────────────────────────────────────────

@dataclass(frozen=True)
class LossBreakdown:
    """Per-step or per-epoch loss record."""

    l_class: float
    l_time: float
    l_total: float


def classification_loss(logits: torch.Tensor, labels: torch.Tensor) -> torch.Tensor:
    """Mean negative log-softmax probability of the true class."""
    if logits.dim() != 2:
        raise InputError(f"expected (B, C) logits, got shape {tuple(logits.shape)}")
    if labels.dim() != 1 or labels.shape[0] != logits.shape[0]:
        raise InputError(
            f"labels shape {tuple(labels.shape)} does not match logits {tuple(logits.shape)}"
        )
    n_classes = logits.shape[1]
    if labels.numel() and (labels.min() < 0 or labels.max() >= n_classes):
        raise InputError(f"labels must lie in [0, {n_classes})")
    return F.cross_entropy(logits, labels)


def time_loss(t_hat: torch.Tensor, t: torch.Tensor) -> torch.Tensor:
    """Mean squared error between normalized predictions and targets."""
    if t_hat.shape != t.shape:
        raise InputError(f"length mismatch: {tuple(t_hat.shape)} vs {tuple(t.shape)}")
    return F.mse_loss(t_hat, t)


def total_loss(l_class: float, l_time: float, alpha: float = 1.0, beta: float = 1.0) -> LossBreakdown:
    """Weighted sum of the two components as a loss record."""
    if alpha < 0 or beta < 0:
        raise ConfigError(f"loss weights must be nonnegative, got alpha={alpha}, beta={beta}")
    if l_class < 0 or l_time < 0:
        raise InputError("loss components must be nonnegative")
    return LossBreakdown(l_class=l_class, l_time=l_time, l_total=alpha * l_class + beta * l_time)


# ── Training loop ────────────────────────────────────────────────────────

@dataclass
class EpochRecord:
    epoch: int
    train: LossBreakdown
    val: LossBreakdown


@dataclass
class FitResult:
    history: list[EpochRecord]
    best_state: dict
    final_state: dict
    best_epoch: int


class TensorDataset:
    """Preloaded training arrays: images, token ids, labels, norm. times."""

    def __init__(self, images: torch.Tensor, token_ids: torch.Tensor,
                 labels: torch.Tensor, t_norm: torch.Tensor):
        n = images.shape[0]
        if not (token_ids.shape[0] == labels.shape[0] == t_norm.shape[0] == n):
            raise DataError("dataset arrays must share their first dimension")
        if n == 0:
            raise DataError("empty split")
        self.images = images
        self.token_ids = token_ids
        self.labels = labels
        self.t_norm = t_norm

    def __len__(self) -> int:
        return self.images.shape[0]

    def batches(self, batch_size: int, order: np.ndarray | None = None):
        idx = np.arange(len(self)) if order is None else order
        for start in range(0, len(idx), batch_size):
            sel = torch.as_tensor(idx[start:start + batch_size], dtype=torch.long)
            yield (
                self.images[sel],
                self.token_ids[sel],
                self.labels[sel],
                self.t_norm[sel],
            )


def _make_optimizer(net: nn.Module, cfg: TrainConfig) -> torch.optim.Optimizer:
    if cfg.optimizer == "adam":
        return torch.optim.Adam(net.parameters(), lr=cfg.learning_rate)
    if cfg.optimizer == "sgd":
        return torch.optim.SGD(net.parameters(), lr=cfg.learning_rate)
    raise ConfigError(f"unknown optimizer {cfg.optimizer!r}")


def _run_split(net: nn.Module, data: TensorDataset, cfg: TrainConfig,
               optimizer: torch.optim.Optimizer | None, epoch: int) -> LossBreakdown:
    """One pass over a split; optimizes when an optimizer is given."""
    training = optimizer is not None
    net.train(training)
    if training:
        order_rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([cfg.seed, epoch])))
        order = order_rng.permutation(len(data))
    else:
        order = None

    sum_class = sum_time = 0.0
    n_seen = 0
    with torch.enable_grad() if training else torch.no_grad():
        for batch_idx, (images, tokens, labels, t_norm) in enumerate(data.batches(cfg.batch_size, order)):
            logits, t_hat = net(images, tokens)
            l_class = classification_loss(logits, labels)
            l_time = time_loss(t_hat, t_norm)
            objective = cfg.alpha * l_class + cfg.beta * l_time
            if not torch.isfinite(objective):
                raise FloatingPointError(
                    f"non-finite loss at epoch {epoch}, batch {batch_idx}: "
                    f"l_class={l_class.item()}, l_time={l_time.item()}"
                )
            if training:
                optimizer.zero_grad()
                objective.backward()
                optimizer.step()
            bs = images.shape[0]
            sum_class += l_class.item() * bs
            sum_time += l_time.item() * bs
            n_seen += bs
    return total_loss(sum_class / n_seen, sum_time / n_seen, cfg.alpha, cfg.beta)


def fit(net: nn.Module, train_data: TensorDataset, val_data: TensorDataset,
        cfg: TrainConfig, log=None) -> FitResult:
    """Optimize the joint objective; track per-epoch train/val losses.

    Keeps the state with the best validation total loss alongside the
    final state. Fully seeded: shuffling order and any dropout derive
    from cfg.seed, so repeated runs are bit-identical on one platform.
    """
    cfg.validate()
    torch.manual_seed(cfg.seed)
    optimizer = _make_optimizer(net, cfg)

    history: list[EpochRecord] = []
    best_state: dict = {}
    best_val = float("inf")
    best_epoch = -1
    for epoch in range(cfg.epochs):
        train_losses = _run_split(net, train_data, cfg, optimizer, epoch)
        val_losses = _run_split(net, val_data, cfg, None, epoch)
        history.append(EpochRecord(epoch=epoch, train=train_losses, val=val_losses))
        if val_losses.l_total < best_val:
            best_val = val_losses.l_total
            best_epoch = epoch
            best_state = copy.deepcopy(net.state_dict())
        if log is not None:
            log(
                f"epoch {epoch + 1}/{cfg.epochs}  "
                f"train l_total={train_losses.l_total:.4f}  val l_total={val_losses.l_total:.4f}"
            )

    final_state = copy.deepcopy(net.state_dict())
    return FitResult(history=history, best_state=best_state,
                     final_state=final_state, best_epoch=best_epoch)


# ── History serialization ────────────────────────────────────────────────

HISTORY_HEADER = "#epoch\tsplit\tl_class\tl_time\tl_total"


def write_history(history: list[EpochRecord], path) -> None:
    lines = [HISTORY_HEADER]
    for rec in history:
        for split, losses in (("train", rec.train), ("val", rec.val)):
            lines.append(
                f"{rec.epoch}\t{split}\t{losses.l_class:.10g}\t{losses.l_time:.10g}\t{losses.l_total:.10g}"
            )
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_history(path) -> list[EpochRecord]:
    rows: dict[int, dict[str, LossBreakdown]] = {}
    for line in path.read_text(encoding="utf-8").splitlines():
        if not line or line.startswith("#"):
            continue
        epoch_s, split, lc, lt, ltot = line.split("\t")
        rows.setdefault(int(epoch_s), {})[split] = LossBreakdown(float(lc), float(lt), float(ltot))
    return [
        EpochRecord(epoch=e, train=parts["train"], val=parts["val"])
        for e, parts in sorted(rows.items())
    ]
