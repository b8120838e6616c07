"""Command-line entry point: generate / train / evaluate / predict.

Exit codes: 0 success, 1 usage or config error, 2 data error (missing
dataset, unreadable files, refusal to overwrite), 3 runtime/numerical
error.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

import numpy as np

from . import evaluation, training
from .config import STAGE_NAMES, load_pipeline_config
from .checkpoint import load_checkpoint
from .encoders import NEUTRAL_PROMPT, Vocabulary, tokenize
from .errors import ConfigError, DataError
from .model import StageTimeEstimator, images_to_tensor, load_image_array, net_from_checkpoint
from .synthgen import MANIFEST_NAME, generate_dataset, read_manifest
from .training import denormalize_time

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_RUNTIME = 3


class _Parser(argparse.ArgumentParser):
    """argparse defaults to exit code 2 on usage errors; we reserve 2
    for data errors, so remap to 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _build_parser() -> _Parser:
    parser = _Parser(prog="fungaltime", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p_gen = sub.add_parser("generate", help="render the synthetic dataset")
    p_gen.add_argument("--config", required=True, help="pipeline config file (YAML)")
    p_gen.add_argument("--force", action="store_true", help="regenerate over existing data")
    p_gen.add_argument("--seed", type=int, default=None, help="override gen.seed")

    p_train = sub.add_parser("train", help="train on the generated dataset")
    p_train.add_argument("--config", required=True)
    p_train.add_argument("--seed", type=int, default=None, help="override train.seed")

    p_eval = sub.add_parser("evaluate", help="evaluate a checkpoint on one split")
    p_eval.add_argument("--config", required=True)
    p_eval.add_argument("--checkpoint", default=None, help="default: <run_dir>/checkpoints/best.ckpt")
    p_eval.add_argument("--split", choices=["train", "val", "test"], default="test")
    p_eval.add_argument("--prompt", default=None, help="override the neutral inference prompt")
    p_eval.add_argument("--out", default=None, help="default: <run_dir>/eval-<split>")

    p_pred = sub.add_parser("predict", help="predict stage and hours for one image")
    p_pred.add_argument("image", help="path to an RGB image")
    p_pred.add_argument("--checkpoint", required=True)
    p_pred.add_argument("--prompt", default=None, help="override the neutral inference prompt")

    return parser


# ── Commands ─────────────────────────────────────────────────────────────

def cmd_generate(args) -> int:
    cfg = load_pipeline_config(args.config)
    if args.seed is not None:
        cfg.gen = dataclasses.replace(cfg.gen, seed=args.seed)
    samples = generate_dataset(cfg.gen, cfg.paths.data_dir, force=args.force)
    for stage, name in enumerate(STAGE_NAMES):
        count = sum(1 for s in samples if s.label == stage)
        print(f"{name}: {count} samples")
    print(f"wrote {len(samples)} samples under {cfg.paths.data_dir}")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = load_pipeline_config(args.config)
    if args.seed is not None:
        cfg.train = dataclasses.replace(cfg.train, seed=args.seed)
    data_dir = Path(cfg.paths.data_dir)
    manifest = data_dir / MANIFEST_NAME
    if not manifest.exists():
        raise DataError(
            f"no dataset at {manifest}; run `fungaltime generate --config {args.config}` first"
        )
    samples = read_manifest(manifest)

    est = StageTimeEstimator(
        d=cfg.model.d,
        n_encoder_layers=cfg.model.n_encoder_layers,
        ffn_hidden=cfg.model.ffn_hidden,
        n_attention_heads=cfg.model.n_attention_heads,
        dropout=cfg.model.dropout,
        vision_arch=cfg.encoder.vision_arch,
        max_tokens=cfg.encoder.max_tokens,
        normalize_embeddings=cfg.encoder.normalize_embeddings,
        epochs=cfg.train.epochs,
        batch_size=cfg.train.batch_size,
        learning_rate=cfg.train.learning_rate,
        alpha=cfg.train.alpha,
        beta=cfg.train.beta,
        optimizer=cfg.train.optimizer,
        seed=cfg.train.seed,
    )
    est.fit(samples, root=data_dir, log=print)

    run_dir = Path(cfg.paths.run_dir)
    ckpt_dir = run_dir / "checkpoints"
    est.save(ckpt_dir / "final.ckpt", which="final")
    est.save(ckpt_dir / "best.ckpt", which="best")
    run_dir.mkdir(parents=True, exist_ok=True)
    training.write_history(est.history_, run_dir / "history.tsv")
    print(f"best epoch: {est.best_epoch_ + 1}")
    print(f"checkpoints and history written under {run_dir}")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    cfg = load_pipeline_config(args.config)
    run_dir = Path(cfg.paths.run_dir)
    ckpt_path = Path(args.checkpoint) if args.checkpoint else run_dir / "checkpoints" / "best.ckpt"
    if not ckpt_path.exists():
        raise DataError(f"checkpoint not found: {ckpt_path}")
    ckpt = load_checkpoint(ckpt_path)

    data_dir = Path(cfg.paths.data_dir)
    samples = read_manifest(data_dir / MANIFEST_NAME)
    report = evaluation.evaluate(ckpt, samples, data_dir, split=args.split, prompt=args.prompt)

    out_dir = Path(args.out) if args.out else run_dir / f"eval-{args.split}"
    history_path = run_dir / "history.tsv"
    history = training.read_history(history_path) if history_path.exists() else None
    evaluation.write_report(report, out_dir, history=history)
    evaluation.render_report(report, out_dir, images_root=data_dir, history=history)

    print(f"split: {args.split}  samples: {report.n_samples}  excluded: {report.n_excluded}")
    print(f"accuracy: {report.accuracy:.4f}")
    for stage, stat in report.per_stage_mae.items():
        mean = "n/a" if stat.count == 0 else f"{stat.mean:.1f}h"
        print(f"mae[{STAGE_NAMES[stage]}]: {mean} (n={stat.count})")
    print(f"report written to {out_dir}")
    return EXIT_OK


def cmd_predict(args) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    net, vocab = net_from_checkpoint(ckpt)
    image = images_to_tensor([load_image_array(args.image)])
    prompt = args.prompt if args.prompt is not None else NEUTRAL_PROMPT
    tokens = [tokenize(prompt, vocab, ckpt.encoder_config.max_tokens)]

    import torch

    with torch.no_grad():
        logits, t_hat = net(image, torch.tensor(tokens, dtype=torch.long))
    z = logits[0].numpy().astype(np.float64)
    z -= z.max()
    probs = np.exp(z) / np.exp(z).sum()
    stage = int(probs.argmax())
    hours = denormalize_time(float(np.clip(t_hat[0].item(), 0.0, 1.0)), ckpt.time_scale)

    record = {
        "image": args.image,
        "prompt": prompt,
        "stage": STAGE_NAMES[stage],
        "stage_index": stage,
        "probabilities": {STAGE_NAMES[i]: float(probs[i]) for i in range(len(STAGE_NAMES))},
        "predicted_hours": hours,
    }
    print(json.dumps(record, indent=2))
    return EXIT_OK


_COMMANDS = {
    "generate": cmd_generate,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "predict": cmd_predict,
}


def main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except Exception as exc:  # numerical/runtime failures
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
