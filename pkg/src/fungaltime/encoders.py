"""Image and text encoders plus embedding fusion.

Both encoders map their input to a d-dimensional embedding; the shared
representation fed to the prediction heads is the element-wise sum of
the two (optionally L2-normalizing each side first). The closed-world
tokenizer builds its vocabulary from the generator's description
templates, so tokenization is deterministic and portable.

The constructors of StageTimeNet (see model.py) accept replacement
encoder modules, which is the hook for plugging in external pretrained
vision-language backbones; anything swapped in only has to return
dimension-d embeddings.
"""

from __future__ import annotations

import re

import torch
import torch.nn.functional as F
from torch import nn

from . import synthgen
from .config import STAGE_NAMES, EncoderConfig
from .errors import InputError, ShapeError

PAD_TOKEN = "<pad>"
UNK_TOKEN = "<unk>"
PAD_ID = 0
UNK_ID = 1

_TOKEN_SPLIT = re.compile(r"[^a-z0-9]+")

# Class-agnostic prompt used when no text is supplied at inference time.
NEUTRAL_PROMPT = "an image of fungal growth"


def text_to_words(text: str) -> list[str]:
    """Lowercase, strip punctuation, split on whitespace."""
    return [w for w in _TOKEN_SPLIT.split(text.lower()) if w]


def build_vocabulary(extra_texts: tuple[str, ...] = ()) -> list[str]:
    """Closed-world vocabulary: every word the description templates and
    the neutral inference prompt can produce, in a fixed sorted order.
    Ids are list positions; 0 and 1 are reserved for pad/unknown.
    """
    words: set[str] = set()
    for stage, templates in synthgen.DESCRIPTION_TEMPLATES.items():
        for template in templates:
            for phrase in synthgen.TIME_PHRASES:
                words.update(text_to_words(template.format(phrase=phrase)))
    words.update(STAGE_NAMES)
    words.update(text_to_words(NEUTRAL_PROMPT))
    for text in extra_texts:
        words.update(text_to_words(text))
    return [PAD_TOKEN, UNK_TOKEN] + sorted(words)


class Vocabulary:
    """Token list with line-number ids, serialized one token per line."""

    def __init__(self, tokens: list[str]):
        if tokens[:2] != [PAD_TOKEN, UNK_TOKEN]:
            raise InputError(f"vocabulary must start with {PAD_TOKEN!r}, {UNK_TOKEN!r}")
        self.tokens = list(tokens)
        self.index = {tok: i for i, tok in enumerate(self.tokens)}

    def __len__(self) -> int:
        return len(self.tokens)

    @classmethod
    def default(cls) -> "Vocabulary":
        return cls(build_vocabulary())

    def to_lines(self) -> str:
        return "\n".join(self.tokens) + "\n"

    @classmethod
    def from_lines(cls, text: str) -> "Vocabulary":
        return cls(text.splitlines())


def tokenize(text: str, vocab: Vocabulary, max_tokens: int) -> list[int]:
    """Map text to a fixed-length id sequence (truncate / pad-right)."""
    if not text or not text.strip():
        raise InputError("cannot tokenize empty text")
    ids = [vocab.index.get(w, UNK_ID) for w in text_to_words(text)]
    ids = ids[:max_tokens]
    ids += [PAD_ID] * (max_tokens - len(ids))
    return ids


def _init_affine(module: nn.Module) -> None:
    """Xavier-uniform weights and zero biases for all linear maps."""
    for m in module.modules():
        if isinstance(m, nn.Linear):
            nn.init.xavier_uniform_(m.weight)
            if m.bias is not None:
                nn.init.zeros_(m.bias)


def _check_image_batch(images: torch.Tensor) -> None:
    if images.dim() != 4:
        raise ShapeError(f"expected 4-D image batch (B, 3, H, W), got shape {tuple(images.shape)}")
    if images.shape[1] != 3:
        raise ShapeError(f"expected 3 channels, got {images.shape[1]}")
    if images.shape[2] < 32 or images.shape[3] < 32:
        raise ShapeError(f"image side must be >= 32, got {tuple(images.shape[2:])}")


class CompactConvEncoder(nn.Module):
    """Four stride-2 conv blocks, global average pool, linear projection.

    GroupNorm keeps the forward pass independent of batch composition.
    """

    def __init__(self, d: int):
        super().__init__()
        chans = (16, 32, 64, 64)
        layers: list[nn.Module] = []
        c_in = 3
        for c_out in chans:
            layers += [
                nn.Conv2d(c_in, c_out, kernel_size=3, stride=2, padding=1),
                nn.GroupNorm(min(8, c_out), c_out),
                nn.ReLU(inplace=True),
            ]
            c_in = c_out
        self.features = nn.Sequential(*layers)
        self.project = nn.Linear(chans[-1], d)
        _init_affine(self)

    def forward(self, images: torch.Tensor) -> torch.Tensor:
        _check_image_batch(images)
        x = self.features(images)
        x = x.mean(dim=(2, 3))
        return self.project(x)


class PatchMLPEncoder(nn.Module):
    """Non-overlapping patches -> shared MLP -> mean over patches."""

    def __init__(self, d: int, patch_size: int = 8, hidden: int = 64):
        super().__init__()
        self.patch_size = patch_size
        self.embed = nn.Sequential(
            nn.Linear(3 * patch_size * patch_size, hidden),
            nn.ReLU(inplace=True),
        )
        self.project = nn.Linear(hidden, d)
        _init_affine(self)

    def forward(self, images: torch.Tensor) -> torch.Tensor:
        _check_image_batch(images)
        p = self.patch_size
        patches = F.unfold(images, kernel_size=p, stride=p)  # (B, 3*p*p, N)
        patches = patches.transpose(1, 2)
        x = self.embed(patches).mean(dim=1)
        return self.project(x)


def make_image_encoder(cfg: EncoderConfig) -> nn.Module:
    if cfg.vision_arch == "compact-conv":
        return CompactConvEncoder(cfg.d)
    if cfg.vision_arch == "patch-mlp":
        return PatchMLPEncoder(cfg.d)
    raise InputError(f"unknown vision_arch {cfg.vision_arch!r}")


class TextEncoder(nn.Module):
    """Learned token embeddings, pad-masked mean pooling, small MLP.

    Mean pooling makes the embedding invariant to token order; an
    all-padding sequence pools to the zero vector.
    """

    def __init__(self, vocab_size: int, d: int):
        super().__init__()
        self.vocab_size = vocab_size
        self.embedding = nn.Embedding(vocab_size, d, padding_idx=PAD_ID)
        self.mlp = nn.Sequential(
            nn.Linear(d, d),
            nn.ReLU(inplace=True),
            nn.Linear(d, d),
        )
        _init_affine(self)

    def forward(self, token_ids: torch.Tensor) -> torch.Tensor:
        if token_ids.dim() != 2:
            raise ShapeError(f"expected 2-D token batch (B, L), got shape {tuple(token_ids.shape)}")
        if token_ids.numel() and (token_ids.min() < 0 or token_ids.max() >= self.vocab_size):
            raise InputError(
                f"token ids must lie in [0, {self.vocab_size}), got range "
                f"[{int(token_ids.min())}, {int(token_ids.max())}]"
            )
        emb = self.embedding(token_ids)  # (B, L, d)
        mask = (token_ids != PAD_ID).unsqueeze(-1).to(emb.dtype)
        total = (emb * mask).sum(dim=1)
        count = mask.sum(dim=1).clamp(min=1.0)
        mean = total / count  # zero vector when everything is padding
        return self.mlp(mean)


def fuse(img: torch.Tensor, txt: torch.Tensor, normalize: bool = True) -> torch.Tensor:
    """Element-wise sum of the two embeddings.

    With normalize set, each side is L2-normalized first (zero vectors
    pass through unchanged).
    """
    if img.shape != txt.shape:
        raise ShapeError(f"embedding shapes differ: {tuple(img.shape)} vs {tuple(txt.shape)}")
    if normalize:
        img = F.normalize(img, p=2, dim=-1, eps=1e-12)
        txt = F.normalize(txt, p=2, dim=-1, eps=1e-12)
    return img + txt
