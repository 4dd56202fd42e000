"""Frozen stand-ins for the vision encoder and the language model.

The vision stub projects raw patch pixels through a fixed random linear
map, preserving spatial detail. The language stub average-pools detail
tokens 2x2, lifts them to the LLM width, and additively conditions them
on the expression embedding, mimicking semantically-rich but spatially
coarse features. Seg-token stand-ins combine the expression and slot
embeddings with a pooled-image coupling and carry each slot's SEG/REJ
identity as a sign on a frozen direction (the real pipeline's reject
signal is the language model's own token emission).

All stub weights are frozen (never trained) and derive from a dedicated
seed so every run of a given configuration sees identical features.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .decoder import SegTokenSet
from .nn import LinearParams, init_linear, linear_forward
from .rng import Rng
from .synth import GenConfig, SynthSample
from .tensor import ShapeError, Tensor


@dataclass
class StubWeights:
    vision_w: np.ndarray  # (c, 3 * patch^2)
    vision_b: np.ndarray  # (c,)
    lift_w: np.ndarray  # (c_llm, c)
    expr_embed: np.ndarray  # (n_expressions, c_llm)
    slot_embed: np.ndarray  # (max_slots, c_llm)
    rej_dir: np.ndarray  # (c_llm,); +dir for SEG slots, -dir for REJ
    img_couple: np.ndarray  # (c_llm, c)
    patch: int
    c: int
    c_llm: int


@dataclass
class StubFeatures:
    t1_img: Tensor  # (N1, c) detail tokens
    t2_img: Tensor  # (N2, c_llm) semantic tokens, N1 = 4 * N2
    seg: SegTokenSet  # rej flags here are the ground-truth slot labels
    rej_labels: list[int]  # 1 = SEG, 0 = REJ, per slot


def build_stub_weights(gen_cfg: GenConfig, c: int, c_llm: int) -> StubWeights:
    rng = Rng(gen_cfg.stub_seed)
    p2 = 3 * gen_cfg.patch**2
    return StubWeights(
        vision_w=rng.uniform_array((c, p2), -math.sqrt(1.0 / p2), math.sqrt(1.0 / p2)),
        vision_b=rng.uniform_array(c, -0.1, 0.1),
        lift_w=rng.uniform_array((c_llm, c), -math.sqrt(1.0 / c), math.sqrt(1.0 / c)),
        expr_embed=rng.uniform_array((gen_cfg.n_expressions, c_llm), -0.5, 0.5),
        slot_embed=rng.uniform_array((gen_cfg.max_objects, c_llm), -0.5, 0.5),
        rej_dir=rng.uniform_array(c_llm, -0.5, 0.5),
        img_couple=rng.uniform_array((c_llm, c), -math.sqrt(1.0 / c), math.sqrt(1.0 / c)),
        patch=gen_cfg.patch,
        c=c,
        c_llm=c_llm,
    )


def stub_vision_encode(image: Tensor, w: StubWeights) -> Tensor:
    """Per-patch detail tokens: frozen random projection of raw pixels."""
    ch, h, wd = image.dims
    p = w.patch
    if h % p or wd % p:
        raise ShapeError(f"image {image.dims} not divisible by patch {p}")
    hp, wp = h // p, wd // p
    patches = (
        image.data.reshape(ch, hp, p, wp, p).transpose(1, 3, 0, 2, 4).reshape(hp * wp, ch * p * p)
    )
    return Tensor(patches @ w.vision_w.T + w.vision_b)


def pool_tokens_2x2(tokens: np.ndarray, h: int, wd: int) -> np.ndarray:
    """Average each 2x2 block of grid tokens: (h*w, c) -> (h*w/4, c)."""
    c = tokens.shape[1]
    grid = tokens.reshape(h, wd, c)
    return grid.reshape(h // 2, 2, wd // 2, 2, c).mean(axis=(1, 3)).reshape(-1, c)


def stub_llm(
    t1_img: Tensor, expression_id: int, slot_labels: list[int], w: StubWeights, grid_detail: int
) -> tuple[Tensor, SegTokenSet]:
    """Semantic tokens and seg-token stand-ins for one sample.

    ``slot_labels`` are the per-slot SEG(1)/REJ(0) identities the real
    language model would have emitted as tokens.
    """
    pooled = pool_tokens_2x2(t1_img.data, grid_detail, grid_detail)
    expr_vec = w.expr_embed[expression_id]
    t2 = pooled @ w.lift_w.T + expr_vec

    img_vec = w.img_couple @ t1_img.data.mean(axis=0)
    rows = []
    for k, label in enumerate(slot_labels):
        sign = 1.0 if label == 1 else -1.0
        rows.append(expr_vec + w.slot_embed[k] + sign * w.rej_dir + img_vec)
    seg = SegTokenSet(Tensor(np.stack(rows)), rej_flags=[lbl == 0 for lbl in slot_labels])
    return Tensor(t2), seg


def encode_sample(sample: SynthSample, w: StubWeights, grid_detail: int) -> StubFeatures:
    t1 = stub_vision_encode(sample.image, w)
    t2, seg = stub_llm(t1, sample.expression_id, sample.text_target_ids, w, grid_detail)
    return StubFeatures(t1, t2, seg, list(sample.text_target_ids))


# ---------------------------------------------------------------------------
# Reject head: linear classifier on compressed seg tokens


@dataclass
class RejHeadParams:
    linear: LinearParams  # c -> 2; class 0 = REJ, class 1 = SEG


def init_rej_head(rng: Rng, c: int) -> RejHeadParams:
    return RejHeadParams(init_linear(rng, c, 2))


def rej_forward(seg_feats: Tensor, p: RejHeadParams) -> Tensor:
    return linear_forward(seg_feats, p.linear)


def rej_predict(logits: Tensor) -> list[bool]:
    """Per-slot reject flags; an exact tie resolves to SEG."""
    return [bool(row[0] > row[1]) for row in logits.data]
