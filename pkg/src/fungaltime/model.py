"""The joint stage/time network and its sklearn-style estimator wrapper.

StageTimeNet is the torch module: encode image, encode text, fuse, then
run the classification head and the time regression head on the shared
embedding. StageTimeEstimator wraps it with the scikit-learn estimator
conventions (hyperparameters in __init__, fitted attributes with a
trailing underscore, get_params/set_params/clone support) so the model
composes with the wider ecosystem.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
import torch
from PIL import Image
from sklearn.base import BaseEstimator

from . import encoders, heads, training
from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .config import STAGE_NAMES, EncoderConfig, ModelConfig, TrainConfig
from .encoders import NEUTRAL_PROMPT, Vocabulary, fuse, make_image_encoder, tokenize
from .errors import DataError, InputError, ShapeError
from .synthgen import Sample
from .training import TensorDataset, TimeScale, denormalize_time, normalize_time


class StageTimeNet(torch.nn.Module):
    """Fused image+text embedding feeding a classifier and a time head.

    Custom encoder modules can be passed in to replace the built-in
    compact ones (e.g. adapters around external pretrained backbones);
    they only need to map their input to (B, d) embeddings.
    """

    def __init__(
        self,
        encoder_cfg: EncoderConfig,
        model_cfg: ModelConfig,
        vocab_size: int,
        image_encoder: torch.nn.Module | None = None,
        text_encoder: torch.nn.Module | None = None,
    ):
        super().__init__()
        encoder_cfg.validate()
        model_cfg.validate()
        if encoder_cfg.d != model_cfg.d:
            raise ShapeError(f"encoder d={encoder_cfg.d} != model d={model_cfg.d}")
        self.encoder_cfg = encoder_cfg
        self.model_cfg = model_cfg
        self.image_encoder = image_encoder if image_encoder is not None else make_image_encoder(encoder_cfg)
        self.text_encoder = (
            text_encoder if text_encoder is not None else encoders.TextEncoder(vocab_size, encoder_cfg.d)
        )
        self.classifier = heads.ClassificationHead(model_cfg.d, model_cfg.n_classes)
        self.time_head = heads.TimeRegressionHead(model_cfg)

    def fused(self, images: torch.Tensor, token_ids: torch.Tensor) -> torch.Tensor:
        img = self.image_encoder(images)
        txt = self.text_encoder(token_ids)
        return fuse(img, txt, normalize=self.encoder_cfg.normalize_embeddings)

    def forward(self, images: torch.Tensor, token_ids: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        shared = self.fused(images, token_ids)
        return self.classifier(shared), self.time_head(shared)


# ── Input conversion helpers ─────────────────────────────────────────────

def load_image_array(path: str | Path) -> np.ndarray:
    """Read an image file into an (H, W, 3) uint8 array."""
    path = Path(path)
    if not path.exists():
        raise DataError(f"image not found: {path}")
    with Image.open(path) as img:
        return np.asarray(img.convert("RGB"), dtype=np.uint8)


def images_to_tensor(images, dtype: torch.dtype = torch.float32) -> torch.Tensor:
    """Convert a batch of images into a (B, 3, H, W) float tensor in [0, 1].

    Accepts a list of file paths, PIL images or HWC uint8/float arrays,
    or a single (B, H, W, 3) array. All images must share one size.
    """
    if isinstance(images, np.ndarray) and images.ndim == 4:
        arrays = list(images)
    elif isinstance(images, (list, tuple)):
        arrays = []
        for item in images:
            if isinstance(item, (str, Path)):
                arrays.append(load_image_array(item))
            elif isinstance(item, Image.Image):
                arrays.append(np.asarray(item.convert("RGB"), dtype=np.uint8))
            elif isinstance(item, np.ndarray):
                arrays.append(item)
            else:
                raise InputError(f"unsupported image input type: {type(item).__name__}")
    else:
        raise InputError("expected a list of images/paths or a (B, H, W, 3) array")
    if not arrays:
        raise InputError("empty image batch")

    shape = arrays[0].shape
    tensors = []
    for arr in arrays:
        if arr.ndim != 3 or arr.shape[2] != 3:
            raise ShapeError(f"expected (H, W, 3) image arrays, got {arr.shape}")
        if arr.shape != shape:
            raise ShapeError(f"images in a batch must share one size, got {arr.shape} vs {shape}")
        a = arr.astype(np.float32) / 255.0 if arr.dtype == np.uint8 else arr.astype(np.float32)
        tensors.append(torch.from_numpy(np.ascontiguousarray(a.transpose(2, 0, 1))))
    return torch.stack(tensors).to(dtype)


def texts_to_tensor(texts: list[str], vocab: Vocabulary, max_tokens: int) -> torch.Tensor:
    return torch.tensor([tokenize(t, vocab, max_tokens) for t in texts], dtype=torch.long)


def net_from_checkpoint(ckpt: Checkpoint) -> tuple[StageTimeNet, Vocabulary]:
    """Rebuild a network (eval mode) and vocabulary from a checkpoint."""
    vocab = Vocabulary(ckpt.vocab_tokens)
    net = StageTimeNet(ckpt.encoder_config, ckpt.model_config, vocab_size=len(vocab))
    state = {name: torch.from_numpy(arr) for name, arr in ckpt.params.items()}
    net.load_state_dict(state)
    net.eval()
    return net, vocab


# ── Estimator ────────────────────────────────────────────────────────────

class StageTimeEstimator(BaseEstimator):
    """Joint growth-stage classifier and growth-time regressor.

    Hyperparameters mirror the config sections; fit consumes a list of
    dataset Sample records (images referenced relative to `root`) and
    trains end to end. Prediction methods accept images plus optional
    prompts; without prompts the neutral prompt is fused so no label
    information leaks through the text branch.

    Fitted attributes: net_, vocab_, time_scale_, history_, best_epoch_,
    best_state_, classes_.
    """

    def __init__(
        self,
        d: int = 64,
        n_encoder_layers: int = 2,
        ffn_hidden: int = 256,
        n_attention_heads: int = 4,
        dropout: float = 0.0,
        vision_arch: str = "compact-conv",
        max_tokens: int = 16,
        normalize_embeddings: bool = True,
        epochs: int = 30,
        batch_size: int = 32,
        learning_rate: float = 1e-4,
        alpha: float = 1.0,
        beta: float = 1.0,
        optimizer: str = "adam",
        seed: int = 7,
    ):
        self.d = d
        self.n_encoder_layers = n_encoder_layers
        self.ffn_hidden = ffn_hidden
        self.n_attention_heads = n_attention_heads
        self.dropout = dropout
        self.vision_arch = vision_arch
        self.max_tokens = max_tokens
        self.normalize_embeddings = normalize_embeddings
        self.epochs = epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.alpha = alpha
        self.beta = beta
        self.optimizer = optimizer
        self.seed = seed

    # -- config assembly --

    def _encoder_config(self, vocab_size: int) -> EncoderConfig:
        return EncoderConfig(
            d=self.d,
            vocab_size=vocab_size,
            max_tokens=self.max_tokens,
            vision_arch=self.vision_arch,
            normalize_embeddings=self.normalize_embeddings,
        )

    def _model_config(self) -> ModelConfig:
        return ModelConfig(
            d=self.d,
            n_encoder_layers=self.n_encoder_layers,
            ffn_hidden=self.ffn_hidden,
            n_attention_heads=self.n_attention_heads,
            n_classes=len(STAGE_NAMES),
            dropout=self.dropout,
        )

    def _train_config(self) -> TrainConfig:
        return TrainConfig(
            epochs=self.epochs,
            batch_size=self.batch_size,
            learning_rate=self.learning_rate,
            alpha=self.alpha,
            beta=self.beta,
            seed=self.seed,
            optimizer=self.optimizer,
        )

    def _dataset(self, samples: list[Sample], root: Path, vocab: Vocabulary,
                 scale: TimeScale) -> TensorDataset:
        images = images_to_tensor([root / s.image_path for s in samples])
        tokens = texts_to_tensor([s.description for s in samples], vocab, self.max_tokens)
        labels = torch.tensor([s.label for s in samples], dtype=torch.long)
        t_norm = torch.tensor(
            normalize_time(np.array([s.timestamp_hours for s in samples]), scale),
            dtype=torch.float32,
        )
        return TensorDataset(images, tokens, labels, t_norm)

    # -- estimator API --

    def fit(self, X, y=None, *, val_samples: list[Sample] | None = None,
            root: str | Path = ".", log=None) -> "StageTimeEstimator":
        """Train on Sample records.

        X may be a full manifest sample list (train/val picked out by
        their split fields) or a training-only list combined with an
        explicit val_samples. y is unused; targets live in the samples.
        """
        samples = list(X)
        if val_samples is None:
            train_samples = [s for s in samples if s.split == "train"]
            val_list = [s for s in samples if s.split == "val"]
        else:
            train_samples = samples
            val_list = list(val_samples)
        if not train_samples:
            raise DataError("no training samples (empty train split)")
        if not val_list:
            raise DataError("no validation samples (empty val split)")
        root = Path(root)

        # Scale is derived from the training split only to avoid leakage.
        self.time_scale_ = TimeScale.from_hours([s.timestamp_hours for s in train_samples])
        self.vocab_ = Vocabulary.default()
        self.classes_ = np.arange(len(STAGE_NAMES))

        torch.manual_seed(self.seed)
        self.net_ = StageTimeNet(
            self._encoder_config(len(self.vocab_)), self._model_config(), vocab_size=len(self.vocab_)
        )
        train_data = self._dataset(train_samples, root, self.vocab_, self.time_scale_)
        val_data = self._dataset(val_list, root, self.vocab_, self.time_scale_)

        result = training.fit(self.net_, train_data, val_data, self._train_config(), log=log)
        self.history_ = result.history
        self.best_state_ = result.best_state
        self.best_epoch_ = result.best_epoch
        return self

    def _forward(self, images, prompts: list[str] | str | None) -> tuple[np.ndarray, np.ndarray]:
        if not hasattr(self, "net_"):
            raise InputError("estimator is not fitted; call fit() or load() first")
        image_tensor = images_to_tensor(images)
        n = image_tensor.shape[0]
        if prompts is None:
            prompts = [NEUTRAL_PROMPT] * n
        elif isinstance(prompts, str):
            prompts = [prompts] * n
        elif len(prompts) != n:
            raise InputError(f"got {len(prompts)} prompts for {n} images")
        tokens = texts_to_tensor(prompts, self.vocab_, self.max_tokens)
        self.net_.eval()
        with torch.no_grad():
            logits, t_hat = self.net_(image_tensor, tokens)
        return logits.numpy(), t_hat.numpy()

    def predict_proba(self, X, prompts=None) -> np.ndarray:
        logits, _ = self._forward(X, prompts)
        z = logits - logits.max(axis=1, keepdims=True)
        e = np.exp(z)
        return e / e.sum(axis=1, keepdims=True)

    def predict(self, X, prompts=None) -> np.ndarray:
        logits, _ = self._forward(X, prompts)
        return logits.argmax(axis=1)

    def predict_hours(self, X, prompts=None) -> np.ndarray:
        _, t_hat = self._forward(X, prompts)
        return denormalize_time(np.clip(t_hat.astype(np.float64), 0.0, 1.0), self.time_scale_)

    def score(self, X, y=None, *, root: str | Path = ".", prompts=None) -> float:
        """Stage classification accuracy on Sample records."""
        samples = list(X)
        root = Path(root)
        pred = self.predict([root / s.image_path for s in samples], prompts)
        true = np.array([s.label for s in samples])
        return float((pred == true).mean())

    # -- persistence --

    def _state_arrays(self, state: dict) -> dict[str, np.ndarray]:
        return {name: tensor.detach().cpu().numpy() for name, tensor in state.items()}

    def save(self, path: str | Path, which: str = "final") -> None:
        """Write a checkpoint archive ('final' or 'best' weights)."""
        if which not in ("final", "best"):
            raise InputError(f"which must be 'final' or 'best', got {which!r}")
        if not hasattr(self, "net_"):
            raise InputError("cannot save an unfitted estimator")
        state = self.net_.state_dict() if which == "final" else self.best_state_
        save_checkpoint(
            path,
            params=self._state_arrays(state),
            encoder_config=self.net_.encoder_cfg,
            model_config=self.net_.model_cfg,
            time_scale=self.time_scale_,
            vocab_tokens=self.vocab_.tokens,
            extra_meta={"best_epoch": getattr(self, "best_epoch_", None)},
        )

    @classmethod
    def load(cls, path: str | Path) -> "StageTimeEstimator":
        """Rebuild a ready-to-predict estimator from a checkpoint."""
        ckpt = load_checkpoint(path)
        net, vocab = net_from_checkpoint(ckpt)
        est = cls(
            d=ckpt.model_config.d,
            n_encoder_layers=ckpt.model_config.n_encoder_layers,
            ffn_hidden=ckpt.model_config.ffn_hidden,
            n_attention_heads=ckpt.model_config.n_attention_heads,
            dropout=ckpt.model_config.dropout,
            vision_arch=ckpt.encoder_config.vision_arch,
            max_tokens=ckpt.encoder_config.max_tokens,
            normalize_embeddings=ckpt.encoder_config.normalize_embeddings,
        )
        est.net_ = net
        est.vocab_ = vocab
        est.time_scale_ = ckpt.time_scale
        est.classes_ = np.arange(ckpt.model_config.n_classes)
        return est
