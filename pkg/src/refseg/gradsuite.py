"""The full finite-difference suite over every differentiable operation.

Each op is checked on several seeded random instances against central
differences in double precision. Shared by the `gradcheck` CLI command
and the acceptance tests.
"""

from __future__ import annotations

import numpy as np

from .decoder import DecoderConfig, DecoderParams, inject_seg, mask_head
from .fusion import FusionParams, fuse_detail_semantic
from .gradcheck import check_gradients, random_scalar_head
from .losses import bce_loss, ce_loss, dice_loss
from .nn import (
    AttentionParams,
    Conv2dParams,
    LinearParams,
    SampleGrid,
    bilinear_sample,
    conv2d_same,
    cross_attention,
    dynamic_upsample,
    init_attention,
    init_conv2d,
    init_linear,
    linear_forward,
    pixel_shuffle,
)
from .rng import Rng
from .tensor import Tensor, matmul, sigmoid, softmax_rows


def _t(rng, shape, lo=-1.0, hi=1.0):
    return Tensor(rng.uniform_array(shape, lo, hi))


def _linear(rng, n_in, n_out):
    return LinearParams(_t(rng, (n_out, n_in)), _t(rng, (n_out,)))


def _conv(rng, c_in, c_out, k):
    return Conv2dParams(_t(rng, (c_out, c_in, k, k), -0.5, 0.5), _t(rng, (c_out,), -0.1, 0.1))


def _attention(rng, width):
    return AttentionParams(
        wq=_linear(rng, width, width),
        wk=_linear(rng, width, width),
        wv=_linear(rng, width, width),
        wout=_linear(rng, width, width),
        key_dim=width,
    )


def _check_matmul(rng):
    _, head = random_scalar_head(rng, (3, 2))
    return check_gradients(
        lambda a, b: head(matmul(a, b)), {"a": _t(rng, (3, 4)), "b": _t(rng, (4, 2))}
    )


def _check_softmax(rng):
    _, head = random_scalar_head(rng, (3, 5))
    return check_gradients(lambda x: head(softmax_rows(x)), {"x": _t(rng, (3, 5), -2, 2)})


def _check_sigmoid(rng):
    _, head = random_scalar_head(rng, (4, 3))
    return check_gradients(lambda x: head(sigmoid(x)), {"x": _t(rng, (4, 3), -3, 3)})


def _check_linear(rng):
    p = _linear(rng, 4, 3)
    _, head = random_scalar_head(rng, (5, 3))
    return check_gradients(
        lambda x, w, b: head(linear_forward(x, LinearParams(w, b))),
        {"x": _t(rng, (5, 4)), "w": p.weight, "b": p.bias},
    )


def _check_conv2d(rng):
    p = _conv(rng, 2, 3, 3)
    _, head = random_scalar_head(rng, (3, 4, 4))
    return check_gradients(
        lambda x, w, b: head(conv2d_same(x, Conv2dParams(w, b))),
        {"x": _t(rng, (2, 4, 4)), "w": p.weight, "b": p.bias},
    )


def _check_pixel_shuffle(rng):
    _, head = random_scalar_head(rng, (2, 6, 6))
    return check_gradients(lambda x: head(pixel_shuffle(x, 3)), {"x": _t(rng, (18, 2, 2))})


def _check_bilinear(rng):
    # random non-integer coordinates, some beyond the border
    coords = Tensor(rng.uniform_array((2, 5, 5), -1.3, 4.3))
    _, head = random_scalar_head(rng, (2, 5, 5))
    return check_gradients(
        lambda x, c: head(bilinear_sample(x, SampleGrid(c))),
        {"x": _t(rng, (2, 4, 4)), "c": coords},
    )


def _check_dynamic_upsample(rng):
    w = _t(rng, (8, 2), -0.3, 0.3)
    b = _t(rng, (8,), -0.1, 0.1)
    _, head = random_scalar_head(rng, (2, 6, 6))
    return check_gradients(
        lambda x, w, b: head(dynamic_upsample(x, LinearParams(w, b), 0.25)),
        {"x": _t(rng, (2, 3, 3)), "w": w, "b": b},
    )


def _check_cross_attention(rng):
    p = _attention(rng, 4)
    _, head = random_scalar_head(rng, (3, 4))
    leaves = {"q": _t(rng, (3, 4)), "kv": _t(rng, (2, 4))}
    for name, lin in (("wq", p.wq), ("wk", p.wk), ("wv", p.wv), ("wout", p.wout)):
        leaves[f"{name}_w"] = lin.weight
        leaves[f"{name}_b"] = lin.bias

    def fn(q, kv, wq_w, wq_b, wk_w, wk_b, wv_w, wv_b, wout_w, wout_b):
        params = AttentionParams(
            LinearParams(wq_w, wq_b),
            LinearParams(wk_w, wk_b),
            LinearParams(wv_w, wv_b),
            LinearParams(wout_w, wout_b),
            key_dim=4,
        )
        out, _ = cross_attention(q, kv, params)
        return head(out)

    return check_gradients(fn, leaves)


def _check_fusion(rng):
    c = 2
    p = FusionParams(
        attn=_attention(rng, c),
        offset_proj=LinearParams(_t(rng, (8, c), -0.3, 0.3), _t(rng, (8,), -0.1, 0.1)),
        compress=_linear(rng, 3 * c, c),
    )
    _, head = random_scalar_head(rng, (c, 4, 4))
    leaves = {
        "detail": _t(rng, (c, 4, 4)),
        "semantic": _t(rng, (c, 2, 2)),
        "off_w": p.offset_proj.weight,
        "comp_w": p.compress.weight,
        "q_w": p.attn.wq.weight,
        "v_w": p.attn.wv.weight,
    }

    def fn(detail, semantic, off_w, comp_w, q_w, v_w):
        params = FusionParams(
            attn=AttentionParams(
                LinearParams(q_w, p.attn.wq.bias),
                p.attn.wk,
                LinearParams(v_w, p.attn.wv.bias),
                p.attn.wout,
                key_dim=c,
            ),
            offset_proj=LinearParams(off_w, p.offset_proj.bias),
            compress=LinearParams(comp_w, p.compress.bias),
        )
        fused, _ = fuse_detail_semantic(detail, semantic, params)
        return head(fused)

    return check_gradients(fn, leaves)


def _check_inject_seg(rng):
    c = 3
    attn = _attention(rng, c)
    _, head0 = random_scalar_head(rng, (c, 2, 2))
    _, head1 = random_scalar_head(rng, (c, 2, 2))

    def fn(fused, seg, v_w, out_w):
        params = AttentionParams(
            attn.wq,
            attn.wk,
            LinearParams(v_w, attn.wv.bias),
            LinearParams(out_w, attn.wout.bias),
            key_dim=c,
        )
        maps = inject_seg(fused, seg, params)
        return head0(maps[0]) + head1(maps[1])

    return check_gradients(
        fn,
        {
            "fused": _t(rng, (c, 2, 2)),
            "seg": _t(rng, (2, c)),
            "v_w": attn.wv.weight,
            "out_w": attn.wout.weight,
        },
    )


def _check_mask_head(rng):
    config = DecoderConfig(
        c_llm=8, c=4, grid_detail=4, grid_semantic=2, head_mid_channels=4,
        head_shuffle_r=2, final_mask_hw=16, variant="detail",
    )
    k3 = _conv(rng, 4, 4, 3)
    k5 = _conv(rng, 1, 1, 5)
    phi2 = _linear(rng, 8, 4)  # present in the params struct, unused by the head
    attn = _attention(rng, 4)
    _, head = random_scalar_head(rng, (16, 16))

    def fn(x, w3, b3, w5, b5):
        params = DecoderParams(
            phi2=phi2,
            seg_attn=attn,
            head_k3=Conv2dParams(w3, b3),
            head_k5=Conv2dParams(w5, b5),
        )
        return head(mask_head(x, params, config))

    return check_gradients(
        fn,
        {"x": _t(rng, (4, 4, 4)), "w3": k3.weight, "b3": k3.bias, "w5": k5.weight, "b5": k5.bias},
    )


def _check_bce(rng):
    gt = (rng.uniform_array((3, 3)) > 0.5).astype(np.float64)
    return check_gradients(
        lambda p: bce_loss(sigmoid(p), gt), {"p": _t(rng, (3, 3), -2, 2)}
    )


def _check_dice(rng):
    gt = (rng.uniform_array((3, 3)) > 0.5).astype(np.float64)
    return check_gradients(
        lambda p: dice_loss(sigmoid(p), gt, smooth=1.0), {"p": _t(rng, (3, 3), -2, 2)}
    )


def _check_ce(rng):
    targets = [rng.randint(0, 3) for _ in range(4)]
    return check_gradients(lambda z: ce_loss(z, targets), {"z": _t(rng, (4, 3), -2, 2)})


CHECKS = [
    ("matmul", _check_matmul),
    ("softmax_rows", _check_softmax),
    ("sigmoid", _check_sigmoid),
    ("linear_forward", _check_linear),
    ("conv2d_same", _check_conv2d),
    ("pixel_shuffle", _check_pixel_shuffle),
    ("bilinear_sample", _check_bilinear),
    ("dynamic_upsample", _check_dynamic_upsample),
    ("cross_attention", _check_cross_attention),
    ("dsff_forward", _check_fusion),
    ("inject_seg", _check_inject_seg),
    ("mask_head", _check_mask_head),
    ("bce_loss", _check_bce),
    ("dice_loss", _check_dice),
    ("ce_loss", _check_ce),
]


def run_suite(seed: int = 0, tol: float = 1e-4, instances: int = 3):
    """Run every check on `instances` seeded instances.

    Returns a list of (name, max relative error, passed) triples.
    """
    results = []
    for op_index, (name, fn) in enumerate(CHECKS):
        worst = 0.0
        for i in range(instances):
            errs = fn(Rng(seed * 100003 + op_index * 1009 + i))
            worst = max(worst, max(errs.values()))
        results.append((name, worst, worst < tol))
    return results
