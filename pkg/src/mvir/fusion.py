"""Cross-modal fusion of view summaries with text tokens.

Each fusion layer runs multi-head attention with queries from the image
views (or the previous layer's output) and keys/values from the text
tokens, then a two-layer feed-forward net. Both sublayers sit inside a
residual connection followed by layer normalization; the raw text tokens
feed keys and values at every layer.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigurationError, DimensionError


@dataclass
class CoAttentionLayer:
    """Parameters of one attention + feed-forward fusion layer."""

    wq: Tensor
    wk: Tensor
    wv: Tensor
    wo: Tensor
    ffn_w1: Tensor
    ffn_b1: Tensor
    ffn_w2: Tensor
    ffn_b2: Tensor
    attn_gain: Tensor
    attn_shift: Tensor
    ffn_gain: Tensor
    ffn_shift: Tensor
    heads: int

    def __post_init__(self):
        d = self.wq.shape[0]
        if self.heads < 1 or d % self.heads != 0:
            raise ConfigurationError(
                f"model width {d} not divisible into {self.heads} heads")

    @property
    def head_width(self) -> int:
        return self.wq.shape[0] // self.heads


def scaled_dot_attention(q: Tensor, k: Tensor, v: Tensor) -> Tensor:
    """softmax(q kᵀ / sqrt(width), over keys) v."""
    if q.shape[1] != k.shape[1] or k.shape[0] != v.shape[0]:
        raise DimensionError(
            f"attention shapes q={q.shape} k={k.shape} v={v.shape} do not align")
    logits = ad.scale(ad.matmul(q, ad.transpose(k)), 1.0 / math.sqrt(q.shape[1]))
    return ad.matmul(ad.softmax_axis(logits, 1), v)


def co_attention(queries_in: Tensor, text: Tensor, layer: CoAttentionLayer) -> Tensor:
    """Multi-head attention from the query stream onto the text tokens.

    The residual adds the query-side input (the attended output has the
    query row count, so that is the only shape-consistent residual), then
    layer norm.
    """
    d = layer.wq.shape[0]
    if queries_in.shape[1] != d or text.shape[1] != d:
        raise DimensionError(
            f"co-attention width mismatch: queries {queries_in.shape}, "
            f"text {text.shape}, layer width {d}")
    dh = layer.head_width
    heads = []
    for h in range(layer.heads):
        lo, hi = h * dh, (h + 1) * dh
        q = ad.matmul(queries_in, ad.slice_cols(layer.wq, lo, hi))
        k = ad.matmul(text, ad.slice_cols(layer.wk, lo, hi))
        v = ad.matmul(text, ad.slice_cols(layer.wv, lo, hi))
        heads.append(scaled_dot_attention(q, k, v))
    attended = ad.matmul(ad.concat_axis(heads, axis=1), layer.wo)
    return ad.layer_norm(ad.add(attended, queries_in), layer.attn_gain, layer.attn_shift)


def fusion_layer(queries_in: Tensor, text: Tensor, layer: CoAttentionLayer,
                 dropout_rate: float = 0.0,
                 rng: np.random.Generator | None = None,
                 training: bool = False) -> Tensor:
    """One co-attention sublayer followed by a relu MLP sublayer.

    Dropout is applied to the attention output and to the feed-forward
    output in training mode; eval mode is deterministic.
    """
    attended = co_attention(queries_in, text, layer)
    dropped = ad.dropout(attended, dropout_rate, rng, training)
    hidden = ad.relu(ad.add(ad.matmul(dropped, layer.ffn_w1), layer.ffn_b1))
    ffn_out = ad.add(ad.matmul(hidden, layer.ffn_w2), layer.ffn_b2)
    ffn_out = ad.dropout(ffn_out, dropout_rate, rng, training)
    return ad.layer_norm(ad.add(ffn_out, attended), layer.ffn_gain, layer.ffn_shift)


def fuse(view_summary: Tensor, text: Tensor, stack: list[CoAttentionLayer],
         dropout_rate: float = 0.0,
         rng: np.random.Generator | None = None,
         training: bool = False) -> Tensor:
    """Apply the fusion layers in order, text feeding keys/values at every layer."""
    if not stack:
        raise ConfigurationError("fusion stack must have at least one layer")
    fused = view_summary
    for layer in stack:
        fused = fusion_layer(fused, text, layer, dropout_rate, rng, training)
    return fused
