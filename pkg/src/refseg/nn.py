"""Neural primitives of the decoder.

Linear projection, same-padded 2-d convolution, single-head cross
attention, pixel shuffle, and offset-driven bilinear grid sampling. Shape
conventions: feature maps are (channels, height, width); token sequences
are (tokens, channels) with token index = row * width + col over the grid.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .rng import Rng
from .tensor import (
    ShapeError,
    Tensor,
    accumulate_grad,
    add,
    add_rowvec,
    matmul,
    record_op,
    reshape,
    scale,
    softmax_rows,
    transpose,
)


@dataclass
class LinearParams:
    weight: Tensor  # (out, in)
    bias: Tensor  # (out,)

    @property
    def in_features(self) -> int:
        return self.weight.dims[1]

    @property
    def out_features(self) -> int:
        return self.weight.dims[0]


@dataclass
class Conv2dParams:
    weight: Tensor  # (out, in, k, k)
    bias: Tensor  # (out,)

    def __post_init__(self):
        k = self.weight.dims[2]
        if self.weight.dims[3] != k:
            raise ShapeError(f"conv kernel must be square, got {self.weight.dims}")
        if k % 2 == 0:
            raise ShapeError(f"conv kernel must be odd for same padding, got {k}")

    @property
    def kernel(self) -> int:
        return self.weight.dims[2]


@dataclass
class AttentionParams:
    wq: LinearParams
    wk: LinearParams
    wv: LinearParams
    wout: LinearParams
    key_dim: int

    def __post_init__(self):
        if self.wq.out_features != self.key_dim or self.wk.out_features != self.key_dim:
            raise ShapeError(
                f"query/key projections must map to key_dim={self.key_dim}, "
                f"got {self.wq.out_features} and {self.wk.out_features}"
            )


@dataclass
class SampleGrid:
    """Continuous source coordinates, in source-pixel units.

    ``coords`` is (2, H_out, W_out): coords[0] holds row positions,
    coords[1] column positions. Integer coordinate c samples source pixel
    c exactly (pixel-center alignment).
    """

    coords: Tensor


# ---------------------------------------------------------------------------
# Parameter init (uniform +-sqrt(1/fan_in) weights, zero bias)


def init_linear(rng: Rng, n_in: int, n_out: int, zero: bool = False) -> LinearParams:
    if zero:
        w = np.zeros((n_out, n_in))
    else:
        bound = math.sqrt(1.0 / n_in)
        w = rng.uniform_array((n_out, n_in), -bound, bound)
    return LinearParams(Tensor(w, requires_grad=True), Tensor(np.zeros(n_out), requires_grad=True))


def init_conv2d(rng: Rng, c_in: int, c_out: int, k: int) -> Conv2dParams:
    bound = math.sqrt(1.0 / (c_in * k * k))
    w = rng.uniform_array((c_out, c_in, k, k), -bound, bound)
    return Conv2dParams(Tensor(w, requires_grad=True), Tensor(np.zeros(c_out), requires_grad=True))


def init_attention(rng: Rng, width: int, key_dim: int | None = None) -> AttentionParams:
    key_dim = width if key_dim is None else key_dim
    return AttentionParams(
        wq=init_linear(rng, width, key_dim),
        wk=init_linear(rng, width, key_dim),
        wv=init_linear(rng, width, key_dim),
        wout=init_linear(rng, key_dim, width),
        key_dim=key_dim,
    )


# ---------------------------------------------------------------------------
# Forward ops


def linear_forward(x: Tensor, p: LinearParams) -> Tensor:
    """Rows of x through weight^T plus bias: (N, in) -> (N, out)."""
    if x.data.ndim != 2 or x.dims[1] != p.in_features:
        raise ShapeError(f"linear: input {x.dims} vs weight {p.weight.dims}")
    return add_rowvec(matmul(x, transpose(p.weight)), p.bias)


def conv2d_same(x: Tensor, p: Conv2dParams) -> Tensor:
    """Same-padded convolution on (C, H, W); spatial dims preserved."""
    c_out, c_in, k, _ = p.weight.dims
    if x.data.ndim != 3 or x.dims[0] != c_in:
        raise ShapeError(f"conv2d: input {x.dims} vs weight {p.weight.dims}")
    _, h, w = x.dims
    pad = (k - 1) // 2

    xp = np.pad(x.data, ((0, 0), (pad, pad), (pad, pad)))
    # (c_in, h, w, k, k) windows -> (h*w, c_in*k*k) patch matrix
    win = np.lib.stride_tricks.sliding_window_view(xp, (k, k), axis=(1, 2))
    cols = win.transpose(1, 2, 0, 3, 4).reshape(h * w, c_in * k * k)
    wmat = p.weight.data.reshape(c_out, c_in * k * k)
    out2 = cols @ wmat.T + p.bias.data
    out = Tensor(out2.T.reshape(c_out, h, w))

    weight, bias = p.weight, p.bias

    def fn(g):
        g2 = g.reshape(c_out, h * w).T
        accumulate_grad(weight, (g2.T @ cols).reshape(weight.data.shape))
        accumulate_grad(bias, g2.sum(axis=0))
        if x.requires_grad:
            dcols = (g2 @ wmat).reshape(h, w, c_in, k, k)
            dxp = np.zeros_like(xp)
            for dy in range(k):
                for dx in range(k):
                    dxp[:, dy : dy + h, dx : dx + w] += dcols[:, :, :, dy, dx].transpose(2, 0, 1)
            accumulate_grad(x, dxp[:, pad : pad + h, pad : pad + w])

    record_op(out, (x, weight, bias), fn)
    return out


def pixel_shuffle(x: Tensor, r: int) -> Tensor:
    """Channel-to-space rearrangement: (C*r^2, H, W) -> (C, r*H, r*W).

    out[c, h*r + i, w*r + j] = in[c*r^2 + i*r + j, h, w]; a pure
    permutation of values.
    """
    if x.data.ndim != 3:
        raise ShapeError(f"pixel_shuffle needs (C, H, W), got {x.dims}")
    c2, h, w = x.dims
    if r < 1 or c2 % (r * r) != 0:
        raise ShapeError(f"pixel_shuffle: {c2} channels not divisible by r^2={r * r}")
    c = c2 // (r * r)
    out = Tensor(x.data.reshape(c, r, r, h, w).transpose(0, 3, 1, 4, 2).reshape(c, h * r, w * r))

    def fn(g):
        accumulate_grad(x, g.reshape(c, h, r, w, r).transpose(0, 2, 4, 1, 3).reshape(c2, h, w))

    record_op(out, (x,), fn)
    return out


def grid_to_tokens(x: Tensor) -> Tensor:
    """(C, H, W) -> (H*W, C), row-major over the grid."""
    c, h, w = x.dims
    return transpose(reshape(x, (c, h * w)))


def tokens_to_grid(t: Tensor, h: int, w: int) -> Tensor:
    """(H*W, C) -> (C, H, W), inverse of grid_to_tokens."""
    n, c = t.dims
    if n != h * w:
        raise ShapeError(f"token count {n} does not fill a {h}x{w} grid")
    return reshape(transpose(t), (c, h, w))


def base_grid(h_in: int, w_in: int, h_out: int, w_out: int) -> SampleGrid:
    """Pixel-center-aligned sampling grid for integer-factor upsampling.

    Output pixel (i, j) samples source position ((i+0.5)/r - 0.5,
    (j+0.5)/r - 0.5); r = 1 gives the exact identity grid.
    """
    if min(h_in, w_in, h_out, w_out) <= 0:
        raise ShapeError("grid extents must be positive")
    if h_out % h_in or w_out % w_in or h_out // h_in != w_out // w_in:
        raise ShapeError(f"non-integer upsampling factor: {h_in}x{w_in} -> {h_out}x{w_out}")
    r = h_out // h_in
    rows = (np.arange(h_out) + 0.5) / r - 0.5
    cols = (np.arange(w_out) + 0.5) / r - 0.5
    coords = np.stack(
        [np.repeat(rows[:, None], w_out, axis=1), np.repeat(cols[None, :], h_out, axis=0)]
    )
    return SampleGrid(Tensor(coords))


def bilinear_sample(x: Tensor, grid: SampleGrid) -> Tensor:
    """Bilinear interpolation of (C, H, W) at grid positions.

    Out-of-range coordinates replicate the border (values clamp, and the
    coordinate gradient is zero there). Differentiable in both the source
    and the grid.
    """
    coords = grid.coords
    if coords.data.ndim != 3 or coords.dims[0] != 2:
        raise ShapeError(f"grid coords must be (2, H_out, W_out), got {coords.dims}")
    if not np.isfinite(coords.data).all():
        raise ValueError("sampling grid contains non-finite coordinates")
    c, h, w = x.dims
    ys, xs = coords.data[0], coords.data[1]

    y0 = np.floor(ys)
    x0 = np.floor(xs)
    wy = ys - y0
    wx = xs - x0
    i0 = np.clip(y0.astype(np.int64), 0, h - 1)
    i1 = np.clip(y0.astype(np.int64) + 1, 0, h - 1)
    j0 = np.clip(x0.astype(np.int64), 0, w - 1)
    j1 = np.clip(x0.astype(np.int64) + 1, 0, w - 1)

    v00 = x.data[:, i0, j0]
    v01 = x.data[:, i0, j1]
    v10 = x.data[:, i1, j0]
    v11 = x.data[:, i1, j1]
    w00 = (1 - wy) * (1 - wx)
    w01 = (1 - wy) * wx
    w10 = wy * (1 - wx)
    w11 = wy * wx
    out = Tensor(w00 * v00 + w01 * v01 + w10 * v10 + w11 * v11)

    def fn(g):
        if x.requires_grad:
            dx = np.zeros(c * h * w)
            base = (np.arange(c) * h * w)[:, None, None]
            for idx_i, idx_j, wgt in ((i0, j0, w00), (i0, j1, w01), (i1, j0, w10), (i1, j1, w11)):
                flat = (base + idx_i * w + idx_j).ravel()
                np.add.at(dx, flat, (wgt * g).ravel())
            accumulate_grad(x, dx.reshape(c, h, w))
        if coords.requires_grad:
            # border clamp makes the duplicated neighbors cancel these terms
            dy = (g * ((1 - wx) * (v10 - v00) + wx * (v11 - v01))).sum(axis=0)
            dxc = (g * ((1 - wy) * (v01 - v00) + wy * (v11 - v10))).sum(axis=0)
            accumulate_grad(coords, np.stack([dy, dxc]))

    record_op(out, (x, coords), fn)
    return out


def upsample2x_bilinear(x: Tensor) -> Tensor:
    """Plain (offset-free) 2x bilinear upsampling of (C, H, W)."""
    _, h, w = x.dims
    return bilinear_sample(x, base_grid(h, w, 2 * h, 2 * w))


def dynamic_upsample(x: Tensor, offset_proj: LinearParams, alpha: float) -> Tensor:
    """2x upsampling through content-predicted sampling offsets.

    A per-position linear layer emits 8 channels (2 coordinates x 4
    subpixels), pixel shuffle spreads them to a (2, 2H, 2W) offset field,
    and the source is bilinearly sampled at base grid + alpha * offsets.
    alpha bounds the offset magnitude; alpha = 0 or a zero projection
    reduce to plain bilinear upsampling.
    """
    if offset_proj.out_features != 8:
        raise ShapeError(
            f"offset projection must produce 8 channels (2 coords x 4 subpixels), "
            f"got {offset_proj.out_features}"
        )
    _, h, w = x.dims
    off_tokens = linear_forward(grid_to_tokens(x), offset_proj)
    offsets = pixel_shuffle(tokens_to_grid(off_tokens, h, w), 2)
    grid = base_grid(h, w, 2 * h, 2 * w)
    coords = add(grid.coords, scale(offsets, alpha))
    return bilinear_sample(x, SampleGrid(coords))


def cross_attention(q_in: Tensor, kv_in: Tensor, p: AttentionParams) -> tuple[Tensor, Tensor]:
    """Single-head cross attention between two token sequences.

    Returns (output tokens (Nq, C), attention weights (Nq, Nk)); the
    weights are a first-class output so visualizations never recompute
    the forward pass.
    """
    if q_in.dims[1] != p.wq.in_features or kv_in.dims[1] != p.wk.in_features:
        raise ShapeError(
            f"attention width mismatch: queries {q_in.dims}, keys {kv_in.dims}, "
            f"projections expect {p.wq.in_features}"
        )
    q = linear_forward(q_in, p.wq)
    k = linear_forward(kv_in, p.wk)
    v = linear_forward(kv_in, p.wv)
    attn = softmax_rows(scale(matmul(q, transpose(k)), 1.0 / math.sqrt(p.key_dim)))
    out = linear_forward(matmul(attn, v), p.wout)
    return out, attn
