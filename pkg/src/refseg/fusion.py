"""Detail/semantic feature fusion.

Fuses a high-resolution detail map with a half-resolution semantic map:
detail tokens attend over semantic tokens, the semantic map is upsampled
2x through learned sampling offsets, and the three branches (detail,
upsampled semantic, attended context) are channel-concatenated and
compressed back to the shared width. The attention map comes back as a
first-class output for heatmap export.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .nn import (
    AttentionParams,
    LinearParams,
    cross_attention,
    dynamic_upsample,
    grid_to_tokens,
    init_attention,
    init_linear,
    linear_forward,
    tokens_to_grid,
)
from .rng import Rng
from .tensor import ShapeError, Tensor, concat_channels

OFFSET_SCOPE = 0.25  # fixed factor keeping sampling offsets from aliasing


@dataclass
class FusionParams:
    attn: AttentionParams  # detail tokens as queries, semantic tokens as keys/values
    offset_proj: LinearParams  # c -> 8, zero-initialized
    compress: LinearParams  # 3c -> c
    alpha: float = OFFSET_SCOPE


def init_fusion(rng: Rng, c: int, alpha: float = OFFSET_SCOPE) -> FusionParams:
    return FusionParams(
        attn=init_attention(rng, c),
        offset_proj=init_linear(rng, c, 8, zero=True),
        compress=init_linear(rng, 3 * c, c),
        alpha=alpha,
    )


def fuse_detail_semantic(
    detail: Tensor, semantic: Tensor, p: FusionParams
) -> tuple[Tensor, Tensor]:
    """Fuse (C, 2H, 2W) detail with (C, H, W) semantic features.

    Returns the fused (C, 2H, 2W) map and the (4HW, HW) attention map of
    detail positions over semantic positions.
    """
    c1, h1, w1 = detail.dims
    c2, h2, w2 = semantic.dims
    if c1 != c2:
        raise ShapeError(f"channel mismatch: detail {detail.dims} vs semantic {semantic.dims}")
    if h1 != 2 * h2 or w1 != 2 * w2:
        raise ShapeError(
            f"detail grid must be exactly 2x the semantic grid: {detail.dims} vs {semantic.dims}"
        )

    context, attn = cross_attention(grid_to_tokens(detail), grid_to_tokens(semantic), p.attn)
    upsampled = dynamic_upsample(semantic, p.offset_proj, p.alpha)
    stacked = concat_channels([detail, upsampled, tokens_to_grid(context, h1, w1)])
    fused = tokens_to_grid(linear_forward(grid_to_tokens(stacked), p.compress), h1, w1)
    return fused, attn


def attention_heatmap(attn_map: Tensor, query_index: int, key_hw: tuple[int, int]) -> np.ndarray:
    """One attention row as a uint8 grayscale image over the key grid.

    Min-max normalized to [0, 255]; a constant row maps to mid-gray (128).
    """
    n_q, n_k = attn_map.dims
    if not 0 <= query_index < n_q:
        raise IndexError(f"query index {query_index} out of range for {n_q} queries")
    h, w = key_hw
    if h * w != n_k:
        raise ShapeError(f"key grid {h}x{w} does not hold {n_k} attention entries")
    row = attn_map.data[query_index]
    lo, hi = row.min(), row.max()
    if hi > lo:
        img = np.round((row - lo) / (hi - lo) * 255.0)
    else:
        img = np.full_like(row, 128.0)
    return img.astype(np.uint8).reshape(h, w)
