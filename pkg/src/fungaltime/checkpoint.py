"""Versioned checkpoint container.

A checkpoint is a single zip archive with three entries:

    meta.json    format name/version, encoder + model hyperparameters,
                 the stored time scale, and named array shapes/dtypes
    params.npz   all parameter arrays, keyed by module path
    vocab.txt    tokenizer vocabulary, one token per line (line = id)

Everything inside is a documented open format (JSON, NPY, UTF-8 text),
so a checkpoint can be read without this codebase. Writes are atomic:
the archive is assembled in a temp file and renamed into place.
"""

from __future__ import annotations

import dataclasses
import io
import json
import os
import tempfile
import zipfile
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .config import EncoderConfig, ModelConfig
from .errors import DataError
from .training import TimeScale

FORMAT_NAME = "fungaltime-checkpoint"
FORMAT_VERSION = 1

META_ENTRY = "meta.json"
PARAMS_ENTRY = "params.npz"
VOCAB_ENTRY = "vocab.txt"


@dataclass
class Checkpoint:
    """In-memory view of a stored model."""

    params: dict[str, np.ndarray]
    encoder_config: EncoderConfig
    model_config: ModelConfig
    time_scale: TimeScale
    vocab_tokens: list[str]
    meta: dict


def save_checkpoint(
    path: str | Path,
    *,
    params: dict[str, np.ndarray],
    encoder_config: EncoderConfig,
    model_config: ModelConfig,
    time_scale: TimeScale,
    vocab_tokens: list[str],
    extra_meta: dict | None = None,
) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)

    meta = {
        "format": FORMAT_NAME,
        "version": FORMAT_VERSION,
        "encoder_config": dataclasses.asdict(encoder_config),
        "model_config": dataclasses.asdict(model_config),
        "time_scale": {"t_min": time_scale.t_min, "t_max": time_scale.t_max},
        "vocab_file": VOCAB_ENTRY,
        "arrays": {
            name: {"shape": list(arr.shape), "dtype": str(arr.dtype)}
            for name, arr in params.items()
        },
    }
    if extra_meta:
        meta["extra"] = extra_meta

    npz_buf = io.BytesIO()
    np.savez(npz_buf, **params)

    fd, tmp_name = tempfile.mkstemp(dir=path.parent, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            with zipfile.ZipFile(fh, "w", compression=zipfile.ZIP_DEFLATED) as zf:
                zf.writestr(META_ENTRY, json.dumps(meta, indent=2, sort_keys=True))
                zf.writestr(PARAMS_ENTRY, npz_buf.getvalue())
                zf.writestr(VOCAB_ENTRY, "\n".join(vocab_tokens) + "\n")
        os.replace(tmp_name, path)
    except BaseException:
        if os.path.exists(tmp_name):
            os.unlink(tmp_name)
        raise


def load_checkpoint(path: str | Path) -> Checkpoint:
    path = Path(path)
    if not path.exists():
        raise DataError(f"checkpoint not found: {path}")
    try:
        with zipfile.ZipFile(path, "r") as zf:
            meta = json.loads(zf.read(META_ENTRY).decode("utf-8"))
            if meta.get("format") != FORMAT_NAME:
                raise DataError(f"{path} is not a {FORMAT_NAME} archive")
            if meta.get("version") != FORMAT_VERSION:
                raise DataError(
                    f"unsupported checkpoint version {meta.get('version')} (expected {FORMAT_VERSION})"
                )
            with zf.open(PARAMS_ENTRY) as raw:
                npz = np.load(io.BytesIO(raw.read()))
                params = {name: npz[name] for name in npz.files}
            vocab_tokens = zf.read(VOCAB_ENTRY).decode("utf-8").splitlines()
    except zipfile.BadZipFile as exc:
        raise DataError(f"corrupt checkpoint archive: {path}") from exc

    enc_cfg = EncoderConfig(**meta["encoder_config"])
    model_cfg = ModelConfig(**meta["model_config"])
    scale = TimeScale(**meta["time_scale"])
    return Checkpoint(
        params=params,
        encoder_config=enc_cfg,
        model_config=model_cfg,
        time_scale=scale,
        vocab_tokens=vocab_tokens,
        meta=meta,
    )
