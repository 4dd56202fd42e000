"""The lightweight mask decoder.

Pipeline: compress LLM-width tokens to the working width, fuse detail and
semantic features (per variant), inject each seg token into the fused map
by cross attention with a residual path, then decode masks with a conv ->
pixel shuffle -> conv head followed by a bilinear resize to the output
resolution. Rejected tokens always contribute empty masks to the merge.

Variants mirror the feature-fusion ablation: "detail" uses only the
vision-encoder tokens, "semantic" only the (plain-upsampled) compressed
LLM tokens, "concat" both without attention or learned offsets, "dsff"
the full fusion module.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .fusion import FusionParams, fuse_detail_semantic, init_fusion
from .nn import (
    AttentionParams,
    Conv2dParams,
    LinearParams,
    base_grid,
    bilinear_sample,
    conv2d_same,
    cross_attention,
    grid_to_tokens,
    init_attention,
    init_conv2d,
    init_linear,
    linear_forward,
    pixel_shuffle,
    tokens_to_grid,
    upsample2x_bilinear,
)
from .rng import Rng
from .tensor import ShapeError, Tensor, add, concat_channels, reshape, sigmoid, slice_rows

VARIANTS = ("detail", "semantic", "concat", "dsff")


@dataclass
class DecoderConfig:
    c_llm: int = 64  # LLM hidden width
    c: int = 32  # shared working width of the decoder
    grid_detail: int = 8  # detail token grid (square)
    grid_semantic: int = 4  # semantic token grid, half the detail grid
    head_mid_channels: int = 32
    head_shuffle_r: int = 2
    final_mask_hw: int = 64
    variant: str = "dsff"

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}; expected one of {VARIANTS}")
        if self.grid_detail != 2 * self.grid_semantic:
            raise ValueError(
                f"detail grid {self.grid_detail} must be twice the semantic grid "
                f"{self.grid_semantic}"
            )
        r2 = self.head_shuffle_r**2
        if self.head_mid_channels % r2:
            raise ValueError(
                f"head_mid_channels={self.head_mid_channels} not divisible by r^2={r2}"
            )
        head_out = self.grid_detail * self.head_shuffle_r
        if self.final_mask_hw % head_out:
            raise ValueError(
                f"final mask size {self.final_mask_hw} must be an integer multiple of the "
                f"head output size {head_out}"
            )


@dataclass
class DecoderParams:
    phi2: LinearParams  # seg-token compression, c_llm -> c
    seg_attn: AttentionParams
    head_k3: Conv2dParams
    head_k5: Conv2dParams
    phi1: LinearParams | None = None  # semantic-token compression, absent in "detail"
    fusion: FusionParams | None = None  # "dsff" only
    concat_compress: LinearParams | None = None  # "concat" only, 2c -> c


@dataclass
class SegTokenSet:
    """Hidden states at seg-token positions plus their reject flags."""

    tokens: Tensor  # (S, c_llm)
    rej_flags: list[bool]

    def __post_init__(self):
        s = self.tokens.dims[0]
        if s < 1:
            raise ValueError("a sample carries at least one seg token")
        if len(self.rej_flags) != s:
            raise ValueError(f"{len(self.rej_flags)} flags for {s} tokens")

    @property
    def count(self) -> int:
        return self.tokens.dims[0]


@dataclass
class MaskPrediction:
    per_token_logits: list[Tensor]  # each (final, final)
    per_token_probs: list[Tensor]
    merged_binary: np.ndarray  # bool (final, final); union of non-rejected masks
    fusion_attn: Tensor | None = None  # (N_detail, N_semantic), dsff variant only


BINARIZE_THRESHOLD = 0.5  # probability > threshold counts as foreground


def compress(t2_tokens: Tensor | None, seg: SegTokenSet, p: DecoderParams):
    """Project LLM-width tokens to the working width: (t3, seg_feats)."""
    seg_feats = linear_forward(seg.tokens, p.phi2)
    t3 = None
    if p.phi1 is not None:
        if t2_tokens is None:
            raise ShapeError("this variant needs semantic tokens but none were given")
        t3 = linear_forward(t2_tokens, p.phi1)
    return t3, seg_feats


def inject_seg(fused: Tensor, seg_feats: Tensor, attn: AttentionParams) -> list[Tensor]:
    """One conditioned map per seg token.

    Every fused position queries the single token (softmax over one key is
    identically 1, so the attended value is a per-token bias); the fused
    map is added back residually, otherwise a single key would collapse
    all spatial information.
    """
    s = seg_feats.dims[0]
    if s < 1:
        raise ShapeError("inject_seg needs at least one seg token")
    c, h, w = fused.dims
    queries = grid_to_tokens(fused)
    maps = []
    for i in range(s):
        token = slice_rows(seg_feats, i, i + 1)
        context, _ = cross_attention(queries, token, attn)
        maps.append(add(tokens_to_grid(context, h, w), fused))
    return maps


def mask_head(x: Tensor, p: DecoderParams, config: DecoderConfig) -> Tensor:
    """Conv 3x3 -> pixel shuffle -> conv 5x5 -> bilinear resize to output."""
    mid = conv2d_same(x, p.head_k3)
    up = pixel_shuffle(mid, config.head_shuffle_r)
    logits = conv2d_same(up, p.head_k5)
    _, h, w = logits.dims
    final = config.final_mask_hw
    if (h, w) != (final, final):
        logits = bilinear_sample(logits, base_grid(h, w, final, final))
    return reshape(logits, (final, final))


def _fused_map(t1_tokens, t2_tokens, p, config):
    g1, g2 = config.grid_detail, config.grid_semantic
    variant = config.variant
    attn = None
    if variant == "detail":
        fused = tokens_to_grid(t1_tokens, g1, g1)
    else:
        semantic = tokens_to_grid(linear_forward(t2_tokens, p.phi1), g2, g2)
        if variant == "semantic":
            fused = upsample2x_bilinear(semantic)
        elif variant == "concat":
            detail = tokens_to_grid(t1_tokens, g1, g1)
            stacked = concat_channels([detail, upsample2x_bilinear(semantic)])
            fused = tokens_to_grid(
                linear_forward(grid_to_tokens(stacked), p.concat_compress), g1, g1
            )
        else:  # dsff
            detail = tokens_to_grid(t1_tokens, g1, g1)
            fused, attn = fuse_detail_semantic(detail, semantic, p.fusion)
    return fused, attn


def decoder_forward(
    t1_tokens: Tensor,
    t2_tokens: Tensor | None,
    seg: SegTokenSet,
    p: DecoderParams,
    config: DecoderConfig,
) -> MaskPrediction:
    """Full decoder pass; one logits map per seg token.

    ``t1_tokens`` are (N1, c) detail tokens, ``t2_tokens`` (N2, c_llm)
    semantic tokens (ignored by the "detail" variant). Tokens whose rej
    flag is set produce empty masks in the merge regardless of logits.
    """
    n1 = config.grid_detail**2
    if config.variant != "semantic" and t1_tokens.dims != (n1, config.c):
        raise ShapeError(
            f"detail tokens {t1_tokens.dims}, expected ({n1}, {config.c}) for this config"
        )
    if config.variant != "detail":
        n2 = config.grid_semantic**2
        if t2_tokens is None or t2_tokens.dims != (n2, config.c_llm):
            got = None if t2_tokens is None else t2_tokens.dims
            raise ShapeError(f"semantic tokens {got}, expected ({n2}, {config.c_llm})")
    if seg.tokens.dims[1] != config.c_llm:
        raise ShapeError(f"seg tokens {seg.tokens.dims}, expected width {config.c_llm}")

    _, seg_feats = compress(t2_tokens if config.variant != "detail" else None, seg, p)
    fused, attn = _fused_map(t1_tokens, t2_tokens, p, config)

    maps = inject_seg(fused, seg_feats, p.seg_attn)
    logits = [mask_head(m, p, config) for m in maps]
    probs = [sigmoid(l) for l in logits]

    final = config.final_mask_hw
    merged = np.zeros((final, final), dtype=bool)
    for prob, rej in zip(probs, seg.rej_flags):
        if not rej:
            merged |= prob.data > BINARIZE_THRESHOLD
    return MaskPrediction(logits, probs, merged, attn)


def build_variant(config: DecoderConfig, rng: Rng) -> DecoderParams:
    """Instantiate the parameter set for the configured variant.

    Draw order is fixed (phi1, phi2, fusion, concat compress, seg
    attention, head convs) so a seed pins the init bit-for-bit.
    """
    c_llm, c = config.c_llm, config.c
    phi1 = init_linear(rng, c_llm, c) if config.variant != "detail" else None
    phi2 = init_linear(rng, c_llm, c)
    fusion = init_fusion(rng, c) if config.variant == "dsff" else None
    concat_compress = init_linear(rng, 2 * c, c) if config.variant == "concat" else None
    seg_attn = init_attention(rng, c)
    head_k3 = init_conv2d(rng, c, config.head_mid_channels, 3)
    head_k5 = init_conv2d(rng, config.head_mid_channels // config.head_shuffle_r**2, 1, 5)
    return DecoderParams(
        phi2=phi2,
        seg_attn=seg_attn,
        head_k3=head_k3,
        head_k5=head_k5,
        phi1=phi1,
        fusion=fusion,
        concat_compress=concat_compress,
    )


def _linear_entries(prefix: str, p: LinearParams):
    return [(f"{prefix}.weight", p.weight), (f"{prefix}.bias", p.bias)]


def _attention_entries(prefix: str, p: AttentionParams):
    out = []
    for name, lin in (("wq", p.wq), ("wk", p.wk), ("wv", p.wv), ("wout", p.wout)):
        out += _linear_entries(f"{prefix}.{name}", lin)
    return out


def named_params(p: DecoderParams) -> dict[str, Tensor]:
    """Learnable tensors in a fixed order, keyed by dotted path."""
    entries = []
    if p.phi1 is not None:
        entries += _linear_entries("phi1", p.phi1)
    entries += _linear_entries("phi2", p.phi2)
    if p.fusion is not None:
        entries += _attention_entries("fusion.attn", p.fusion.attn)
        entries += _linear_entries("fusion.offset_proj", p.fusion.offset_proj)
        entries += _linear_entries("fusion.compress", p.fusion.compress)
    if p.concat_compress is not None:
        entries += _linear_entries("concat_compress", p.concat_compress)
    entries += _attention_entries("seg_attn", p.seg_attn)
    entries += [
        ("head_k3.weight", p.head_k3.weight),
        ("head_k3.bias", p.head_k3.bias),
        ("head_k5.weight", p.head_k5.weight),
        ("head_k5.bias", p.head_k5.bias),
    ]
    return dict(entries)


def param_count(p: DecoderParams) -> int:
    """Exact number of learnable scalars."""
    return sum(t.numel() for t in named_params(p).values())
