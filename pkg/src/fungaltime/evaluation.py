"""Evaluation metrics, report assembly and figure rendering.

The report mirrors the training diagnostics end to end: a confusion
matrix with overall accuracy, per-stage mean absolute error in hours
(with population standard deviation), true-vs-predicted scatter data,
loss curves and a qualitative grid of annotated test samples. Every
figure is backed by a sibling plain-text data file so the plots can be
regenerated by any other tooling.

MAE is grouped by TRUE stage and computed over all evaluated samples
(not just correctly classified ones); both choices are recorded in the
report itself.
"""

from __future__ import annotations

import json
import math
import shutil
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from .checkpoint import Checkpoint
from .config import STAGE_NAMES
from .encoders import NEUTRAL_PROMPT
from .errors import DataError, InputError
from .model import images_to_tensor, load_image_array, net_from_checkpoint, texts_to_tensor
from .synthgen import Sample
from .training import EpochRecord, TimeScale, denormalize_time

GRID_SAMPLES = 8
GRID_SEED = 1234


@dataclass
class MAEStat:
    """Mean absolute error statistics for one stage (hours)."""

    mean: float   # NaN when count == 0
    std: float    # population standard deviation; NaN when count == 0
    count: int


@dataclass
class EvalReport:
    confusion: np.ndarray                     # (C, C) ints, rows = true
    accuracy: float
    per_stage_mae: dict[int, MAEStat]
    scatter: list[tuple]                      # (path, true_h, pred_h, true_stage, pred_stage)
    n_samples: int
    n_excluded: int
    excluded: list[str]
    time_scale: TimeScale
    split: str
    prompt: str

    def check_invariants(self) -> None:
        c = self.confusion
        if int(c.sum()) != self.n_samples:
            raise DataError(f"confusion entries sum to {int(c.sum())}, expected {self.n_samples}")
        if self.n_samples > 0 and self.accuracy != int(np.trace(c)) / self.n_samples:
            raise DataError("accuracy does not equal trace(confusion) / n_samples")
        count_total = sum(stat.count for stat in self.per_stage_mae.values())
        if count_total != self.n_samples:
            raise DataError(f"per-stage counts sum to {count_total}, expected {self.n_samples}")
        if len(self.scatter) != self.n_samples:
            raise DataError("scatter row count does not match n_samples")


# ── Metrics ──────────────────────────────────────────────────────────────

def confusion_matrix(pred: np.ndarray, true: np.ndarray, n_classes: int) -> np.ndarray:
    """Count matrix with entry (i, j) = #samples of true class i predicted j."""
    pred = np.asarray(pred)
    true = np.asarray(true)
    if pred.shape != true.shape or pred.ndim != 1:
        raise InputError(f"prediction/label shapes differ: {pred.shape} vs {true.shape}")
    if pred.size == 0:
        raise InputError("cannot compute a confusion matrix from zero samples")
    for name, arr in (("pred", pred), ("true", true)):
        if arr.min() < 0 or arr.max() >= n_classes:
            raise InputError(f"{name} indices must lie in [0, {n_classes})")
    matrix = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(matrix, (true, pred), 1)
    return matrix


def per_stage_mae(pred_hours: np.ndarray, true_hours: np.ndarray,
                  true_stage: np.ndarray, n_classes: int = 3) -> dict[int, MAEStat]:
    """Absolute-error mean and population std in hours, per true stage.

    A stage with zero samples is reported with count 0 and NaN moments
    rather than a silent zero.
    """
    pred_hours = np.asarray(pred_hours, dtype=np.float64)
    true_hours = np.asarray(true_hours, dtype=np.float64)
    true_stage = np.asarray(true_stage)
    if not (pred_hours.shape == true_hours.shape == true_stage.shape):
        raise InputError("pred_hours, true_hours and true_stage must share one length")
    if pred_hours.size and not (np.isfinite(pred_hours).all() and np.isfinite(true_hours).all()):
        raise InputError("hours must be finite")

    stats = {}
    errors = np.abs(pred_hours - true_hours)
    for stage in range(n_classes):
        sel = errors[true_stage == stage]
        if sel.size == 0:
            stats[stage] = MAEStat(mean=math.nan, std=math.nan, count=0)
        else:
            stats[stage] = MAEStat(mean=float(sel.mean()), std=float(sel.std()), count=int(sel.size))
    return stats


# ── Inference over a split ───────────────────────────────────────────────

def evaluate(ckpt: Checkpoint, samples: list[Sample], root: str | Path,
             split: str = "test", prompt: str | None = None,
             batch_size: int = 64) -> EvalReport:
    """Run inference over one split and assemble the full report.

    Samples whose image file is missing are excluded and counted. The
    prompt defaults to the neutral one so no label leaks through text.
    """
    root = Path(root)
    selected = [s for s in samples if s.split == split]
    if not selected:
        raise DataError(f"split {split!r} is empty")
    prompt_text = prompt if prompt is not None else NEUTRAL_PROMPT

    net, vocab = net_from_checkpoint(ckpt)
    usable: list[Sample] = []
    excluded: list[str] = []
    for s in selected:
        if (root / s.image_path).exists():
            usable.append(s)
        else:
            excluded.append(s.image_path)
    if not usable:
        raise DataError(f"all {len(selected)} samples in split {split!r} lack image files")

    max_tokens = ckpt.encoder_config.max_tokens
    pred_stage = np.zeros(len(usable), dtype=np.int64)
    t_hat_all = np.zeros(len(usable), dtype=np.float64)
    with torch.no_grad():
        for start in range(0, len(usable), batch_size):
            chunk = usable[start:start + batch_size]
            images = images_to_tensor([load_image_array(root / s.image_path) for s in chunk])
            tokens = texts_to_tensor([prompt_text] * len(chunk), vocab, max_tokens)
            logits, t_hat = net(images, tokens)
            pred_stage[start:start + len(chunk)] = logits.argmax(dim=1).numpy()
            t_hat_all[start:start + len(chunk)] = t_hat.numpy().astype(np.float64)

    true_stage = np.array([s.label for s in usable], dtype=np.int64)
    true_hours = np.array([s.timestamp_hours for s in usable], dtype=np.float64)
    pred_hours = denormalize_time(np.clip(t_hat_all, 0.0, 1.0), ckpt.time_scale)

    n_classes = ckpt.model_config.n_classes
    confusion = confusion_matrix(pred_stage, true_stage, n_classes)
    accuracy = int(np.trace(confusion)) / len(usable)
    mae = per_stage_mae(pred_hours, true_hours, true_stage, n_classes)
    scatter = [
        (s.image_path, float(th), float(ph), int(ts), int(ps))
        for s, th, ph, ts, ps in zip(usable, true_hours, pred_hours, true_stage, pred_stage)
    ]

    report = EvalReport(
        confusion=confusion,
        accuracy=accuracy,
        per_stage_mae=mae,
        scatter=scatter,
        n_samples=len(usable),
        n_excluded=len(excluded),
        excluded=excluded,
        time_scale=ckpt.time_scale,
        split=split,
        prompt=prompt_text,
    )
    report.check_invariants()
    return report


# ── Report serialization ─────────────────────────────────────────────────

def _nan_to_none(x: float):
    return None if math.isnan(x) else x


def write_report(report: EvalReport, out_dir: str | Path,
                 history: list[EpochRecord] | None = None,
                 history_path: Path | None = None) -> None:
    """Write report.json and the tab-separated data files."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    doc = {
        "split": report.split,
        "prompt": report.prompt,
        "n_samples": report.n_samples,
        "n_excluded": report.n_excluded,
        "excluded": report.excluded,
        "accuracy": report.accuracy,
        "confusion_rows_are_true_class": True,
        "stage_names": list(STAGE_NAMES),
        "confusion": report.confusion.tolist(),
        "per_stage_mae_hours": {
            STAGE_NAMES[stage]: {
                "mean": _nan_to_none(stat.mean),
                "std": _nan_to_none(stat.std),
                "count": stat.count,
            }
            for stage, stat in report.per_stage_mae.items()
        },
        "time_scale": {"t_min": report.time_scale.t_min, "t_max": report.time_scale.t_max},
        "notes": [
            "MAE grouped by true stage, computed over all evaluated samples",
            "std is the population standard deviation of absolute errors",
        ],
    }
    (out_dir / "report.json").write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")

    c_lines = ["#true\\pred\t" + "\t".join(STAGE_NAMES)]
    for i, row in enumerate(report.confusion):
        c_lines.append(STAGE_NAMES[i] + "\t" + "\t".join(str(int(v)) for v in row))
    (out_dir / "confusion.tsv").write_text("\n".join(c_lines) + "\n", encoding="utf-8")

    s_lines = ["#image_path\ttrue_hours\tpred_hours\ttrue_stage\tpred_stage"]
    for path, th, ph, ts, ps in report.scatter:
        s_lines.append(f"{path}\t{th:.6f}\t{ph:.6f}\t{ts}\t{ps}")
    (out_dir / "scatter.tsv").write_text("\n".join(s_lines) + "\n", encoding="utf-8")

    m_lines = ["#stage\tmae_hours\tstd_hours\tcount"]
    for stage, stat in report.per_stage_mae.items():
        m_lines.append(f"{STAGE_NAMES[stage]}\t{stat.mean:.6f}\t{stat.std:.6f}\t{stat.count}")
    (out_dir / "mae.tsv").write_text("\n".join(m_lines) + "\n", encoding="utf-8")

    if history is not None:
        from .training import write_history

        write_history(history, out_dir / "history.tsv")
    elif history_path is not None and Path(history_path).exists():
        shutil.copyfile(history_path, out_dir / "history.tsv")


# ── Figures ──────────────────────────────────────────────────────────────

def _matplotlib():
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    return plt


def confusion_figure(report: EvalReport):
    plt = _matplotlib()
    fig, ax = plt.subplots(figsize=(4.5, 4))
    c = report.confusion
    ax.imshow(c, cmap="Blues")
    for i in range(c.shape[0]):
        for j in range(c.shape[1]):
            ax.text(j, i, str(int(c[i, j])), ha="center", va="center",
                    color="black" if c[i, j] < c.max() * 0.6 else "white")
    ax.set_xticks(range(len(STAGE_NAMES)), STAGE_NAMES)
    ax.set_yticks(range(len(STAGE_NAMES)), STAGE_NAMES)
    ax.set_xlabel("predicted stage")
    ax.set_ylabel("true stage")
    ax.set_title(f"accuracy {report.accuracy:.4f} ({report.split})")
    fig.tight_layout()
    return fig


def scatter_figure(report: EvalReport):
    """Per-stage true-vs-predicted hours; the dashed identity diagonal
    spans exactly [t_min, t_max] on both axes."""
    plt = _matplotlib()
    t_lo, t_hi = report.time_scale.t_min, report.time_scale.t_max
    fig, axes = plt.subplots(1, len(STAGE_NAMES), figsize=(12, 4), sharex=True, sharey=True)
    for stage, ax in enumerate(axes):
        pts = [(th, ph) for _, th, ph, ts, _ in report.scatter if ts == stage]
        if pts:
            xs, ys = zip(*pts)
            ax.scatter(xs, ys, s=8, alpha=0.6)
        ax.plot([t_lo, t_hi], [t_lo, t_hi], "k--", linewidth=1)
        ax.set_xlim(t_lo, t_hi)
        ax.set_ylim(t_lo, t_hi)
        ax.set_title(STAGE_NAMES[stage])
        ax.set_xlabel("true hours")
    axes[0].set_ylabel("predicted hours")
    fig.tight_layout()
    return fig


def mae_figure(report: EvalReport):
    plt = _matplotlib()
    fig, ax = plt.subplots(figsize=(5, 4))
    means = [report.per_stage_mae[s].mean for s in range(len(STAGE_NAMES))]
    stds = [report.per_stage_mae[s].std for s in range(len(STAGE_NAMES))]
    ax.bar(STAGE_NAMES, means, yerr=stds, capsize=4, color="#6699cc")
    ax.set_ylabel("MAE (hours)")
    ax.set_title("time prediction error per stage (bars: one std)")
    fig.tight_layout()
    return fig


def loss_curves_figure(history: list[EpochRecord]):
    plt = _matplotlib()
    fig, ax = plt.subplots(figsize=(6, 4))
    epochs = [r.epoch + 1 for r in history]
    ax.plot(epochs, [r.train.l_total for r in history], label="train")
    ax.plot(epochs, [r.val.l_total for r in history], label="val")
    ax.set_xlabel("epoch")
    ax.set_ylabel("total loss")
    ax.legend()
    ax.set_title("training and validation loss")
    fig.tight_layout()
    return fig


def qualitative_grid_figure(report: EvalReport, images_root: str | Path,
                            n: int = GRID_SAMPLES, seed: int = GRID_SEED):
    """Seeded random subset of evaluated samples with their predictions.

    Returns (figure, rows); rows back the sibling grid.tsv data file.
    """
    plt = _matplotlib()
    rng = np.random.Generator(np.random.PCG64(seed))
    k = min(n, len(report.scatter))
    picks = sorted(rng.choice(len(report.scatter), size=k, replace=False).tolist())
    rows = [report.scatter[i] for i in picks]

    cols = 4
    n_rows = max(1, math.ceil(k / cols))
    fig, axes = plt.subplots(n_rows, cols, figsize=(3 * cols, 3.2 * n_rows))
    axes = np.atleast_1d(axes).ravel()
    for ax in axes[k:]:
        ax.axis("off")
    for ax, (path, th, ph, ts, ps) in zip(axes, rows):
        ax.imshow(load_image_array(Path(images_root) / path))
        ax.set_title(
            f"true: {STAGE_NAMES[ts]} @ {th:.0f}h\npred: {STAGE_NAMES[ps]} @ {ph:.0f}h",
            fontsize=9,
        )
        ax.axis("off")
    fig.tight_layout()
    return fig, rows


def render_report(report: EvalReport, out_dir: str | Path, images_root: str | Path,
                  history: list[EpochRecord] | None = None) -> dict[str, str]:
    """Render one figure per report facet; figures sit beside their data.

    Figure -> data-file pairing: confusion_matrix.png / confusion.tsv,
    scatter.png / scatter.tsv, mae_per_stage.png / mae.tsv,
    loss_curves.png / history.tsv, qualitative_grid.png / grid.tsv.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = {}

    fig = confusion_figure(report)
    fig.savefig(out_dir / "confusion_matrix.png", dpi=110)
    written["confusion_matrix.png"] = "confusion.tsv"

    fig = scatter_figure(report)
    fig.savefig(out_dir / "scatter.png", dpi=110)
    written["scatter.png"] = "scatter.tsv"

    fig = mae_figure(report)
    fig.savefig(out_dir / "mae_per_stage.png", dpi=110)
    written["mae_per_stage.png"] = "mae.tsv"

    if history is not None:
        fig = loss_curves_figure(history)
        fig.savefig(out_dir / "loss_curves.png", dpi=110)
        written["loss_curves.png"] = "history.tsv"

    fig, rows = qualitative_grid_figure(report, images_root)
    fig.savefig(out_dir / "qualitative_grid.png", dpi=110)
    g_lines = ["#image_path\ttrue_hours\tpred_hours\ttrue_stage\tpred_stage"]
    for path, th, ph, ts, ps in rows:
        g_lines.append(f"{path}\t{th:.6f}\t{ph:.6f}\t{ts}\t{ps}")
    (out_dir / "grid.tsv").write_text("\n".join(g_lines) + "\n", encoding="utf-8")
    written["qualitative_grid.png"] = "grid.tsv"

    import matplotlib.pyplot as plt

    plt.close("all")
    return written
