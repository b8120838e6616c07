"""Prediction heads operating on the fused embedding.

Classification is a single affine map to raw logits. Time regression
reshapes the embedding into a length-1 sequence, runs it through
stacked post-norm transformer encoder layers (residual addition first,
LayerNorm after), average-pools over the sequence axis (the identity
for length 1) and maps the pooled vector through an affine scalar map
plus sigmoid, so predictions always land in (0, 1).
"""

from __future__ import annotations

import torch
import torch.nn.functional as F
from torch import nn

from .config import ModelConfig
from .errors import ShapeError


def _init_affine(module: nn.Module) -> None:
    for m in module.modules():
        if isinstance(m, nn.Linear):
            nn.init.xavier_uniform_(m.weight)
            if m.bias is not None:
                nn.init.zeros_(m.bias)


class ClassificationHead(nn.Module):
    """Affine map from the fused embedding to per-class logits."""

    def __init__(self, d: int, n_classes: int):
        super().__init__()
        self.linear = nn.Linear(d, n_classes)
        _init_affine(self)

    def forward(self, fused: torch.Tensor) -> torch.Tensor:
        if fused.dim() != 2 or fused.shape[1] != self.linear.in_features:
            raise ShapeError(
                f"expected (B, {self.linear.in_features}) fused batch, got {tuple(fused.shape)}"
            )
        return self.linear(fused)


def reshape_to_sequence(batch: torch.Tensor) -> torch.Tensor:
    """View a (B, d) batch as a (B, 1, d) sequence of single tokens.

    Value-preserving; no positional encoding is involved since the
    sequence length is fixed at one.
    """
    if batch.dim() != 2:
        raise ShapeError(f"expected 2-D (B, d) input, got shape {tuple(batch.shape)}")
    return batch.unsqueeze(1)


class MultiHeadSelfAttention(nn.Module):
    """Standard scaled dot-product self-attention with h heads.

    Over a length-1 sequence the softmax runs over a single key, so the
    attention weights are identically 1 and the module reduces to the
    value/output projections.
    """

    def __init__(self, d: int, n_heads: int):
        super().__init__()
        if d % n_heads != 0:
            raise ShapeError(f"n_heads ({n_heads}) must divide d ({d})")
        self.d = d
        self.n_heads = n_heads
        self.head_dim = d // n_heads
        self.qkv = nn.Linear(d, 3 * d)
        self.out = nn.Linear(d, d)
        _init_affine(self)

    def forward(
        self, x: torch.Tensor, return_weights: bool = False
    ) -> torch.Tensor | tuple[torch.Tensor, torch.Tensor]:
        if x.dim() != 3 or x.shape[-1] != self.d:
            raise ShapeError(f"expected (B, L, {self.d}) input, got {tuple(x.shape)}")
        b, length, _ = x.shape
        q, k, v = self.qkv(x).chunk(3, dim=-1)

        def split(t: torch.Tensor) -> torch.Tensor:
            return t.view(b, length, self.n_heads, self.head_dim).transpose(1, 2)

        q, k, v = split(q), split(k), split(v)
        scores = q @ k.transpose(-2, -1) / (self.head_dim ** 0.5)
        weights = F.softmax(scores, dim=-1)  # (B, h, L, L)
        ctx = weights @ v
        ctx = ctx.transpose(1, 2).reshape(b, length, self.d)
        out = self.out(ctx)
        if return_weights:
            return out, weights
        return out


class EncoderLayer(nn.Module):
    """Post-norm residual transformer encoder layer.

    Z1 = LayerNorm(X + MHSA(X)); output = LayerNorm(Z1 + FFN(Z1)), where
    FFN is d -> ffn_hidden -> d with a ReLU in between.
    """

    def __init__(self, d: int, n_heads: int, ffn_hidden: int, dropout: float = 0.0):
        super().__init__()
        self.attn = MultiHeadSelfAttention(d, n_heads)
        self.norm1 = nn.LayerNorm(d)
        self.norm2 = nn.LayerNorm(d)
        self.ffn = nn.Sequential(
            nn.Linear(d, ffn_hidden),
            nn.ReLU(inplace=True),
            nn.Linear(ffn_hidden, d),
        )
        self.drop = nn.Dropout(dropout)
        _init_affine(self.ffn)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        z1 = self.norm1(x + self.drop(self.attn(x)))
        return self.norm2(z1 + self.drop(self.ffn(z1)))


class TimeRegressionHead(nn.Module):
    """Transformer stack over the single fused token, sigmoid scalar out."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.d = cfg.d
        self.layers = nn.ModuleList(
            EncoderLayer(cfg.d, cfg.n_attention_heads, cfg.ffn_hidden, cfg.dropout)
            for _ in range(cfg.n_encoder_layers)
        )
        self.regressor = nn.Linear(cfg.d, 1)
        _init_affine(self)

    def encode(self, batch: torch.Tensor) -> torch.Tensor:
        """Run the encoder stack; returns the (B, 1, d) final sequence."""
        x = reshape_to_sequence(batch)
        for layer in self.layers:
            x = layer(x)
        return x

    @staticmethod
    def pool(z_final: torch.Tensor) -> torch.Tensor:
        """Average over the sequence axis; identity at length 1."""
        return z_final[:, 0, :]

    def forward(self, batch: torch.Tensor) -> torch.Tensor:
        if batch.dim() != 2 or batch.shape[1] != self.d:
            raise ShapeError(f"expected (B, {self.d}) fused batch, got {tuple(batch.shape)}")
        pooled = self.pool(self.encode(batch))
        return torch.sigmoid(self.regressor(pooled)).squeeze(-1)
