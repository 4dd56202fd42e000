"""Synthetic referring-segmentation tasks.

Each sample renders 1-3 hard-edged shapes (rectangle, disk, triangle) in
solid colors on a noisy gray background, then picks an expression such as
"red disk". Ground truth is the exact rendered mask of every matching
object (several matches mean several targets); with probability p_empty
the expression names a (shape, color) absent from the image and the
sample is a no-target case.

Expressions encode (shape, color) only. The spatial relation slot of the
encoding is pinned to the trivial "any": the frozen feature stubs carry
no positional information, so relational expressions would be unlearnable
by construction.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .rng import Rng
from .tensor import Tensor

SHAPES = ("rect", "disk", "triangle")
DEFAULT_COLORS = (
    ("red", (0.85, 0.15, 0.15)),
    ("green", (0.15, 0.80, 0.20)),
    ("blue", (0.15, 0.25, 0.90)),
)


@dataclass
class GenConfig:
    image_hw: int = 64
    patch: int = 8
    shapes: tuple[str, ...] = SHAPES
    colors: tuple = DEFAULT_COLORS
    anchors_per_axis: int = 3  # candidate object centers form this grid
    jitter: int = 2  # max center offset from an anchor, per axis
    size_min: int = 4  # half-extent in pixels
    size_max: int = 8
    max_objects: int = 3
    p_empty: float = 0.25
    noise_amp: float = 0.25  # background is 0.5 +- amp/2 uniform, per channel
    stub_seed: int = 1000003  # frozen feature-stub weights, shared across runs

    def __post_init__(self):
        if self.image_hw % self.patch:
            raise ValueError(f"image size {self.image_hw} not divisible by patch {self.patch}")
        if not 0.0 <= self.p_empty <= 1.0:
            raise ValueError("p_empty must be a probability")
        if self.max_objects > self.anchors_per_axis**2:
            raise ValueError("more objects than anchor cells")

    @property
    def n_expressions(self) -> int:
        return len(self.shapes) * len(self.colors)


@dataclass
class SynthSample:
    image: Tensor  # (3, H, W) in [0, 1]
    expression_id: int
    gt_masks: list[np.ndarray]  # bool (H, W), one per target slot
    no_target: bool
    text_target_ids: list[int]  # per slot: 1 = [SEG], 0 = [REJ]

    def merged_gt(self) -> np.ndarray:
        out = np.zeros(self.image.dims[1:], dtype=bool)
        for m in self.gt_masks:
            out |= m
        return out


def expression_id(shape_idx: int, color_idx: int, cfg: GenConfig) -> int:
    return shape_idx * len(cfg.colors) + color_idx


def decode_expression(expr_id: int, cfg: GenConfig) -> tuple[int, int]:
    return expr_id // len(cfg.colors), expr_id % len(cfg.colors)


def render_shape(shape: str, cy: int, cx: int, half: int, hw: int) -> np.ndarray:
    """Hard-edged boolean footprint of one shape on an hw x hw canvas."""
    yy, xx = np.ogrid[:hw, :hw]
    dy = yy - cy
    dx = xx - cx
    if shape == "rect":
        # flat rectangle so corners/aspect distinguish it from the disk
        return (np.abs(dy) <= max(2, (2 * half) // 3)) & (np.abs(dx) <= half)
    if shape == "disk":
        return dy * dy + dx * dx <= half * half
    if shape == "triangle":
        # apex up: width grows linearly from the top row to the base
        return (np.abs(dy) <= half) & (2 * np.abs(dx) <= dy + half)
    raise ValueError(f"unknown shape {shape!r}")


def gen_sample(rng: Rng, cfg: GenConfig) -> SynthSample:
    hw = cfg.image_hw
    n_obj = rng.randint(1, cfg.max_objects + 1)

    # distinct anchor cells; jitter + size bounds keep footprints disjoint
    cells = rng.sample_indices(cfg.anchors_per_axis**2, n_obj)
    step = hw // cfg.anchors_per_axis
    objects = []
    for cell in cells:
        cy = (cell // cfg.anchors_per_axis) * step + step // 2 + rng.randint(
            -cfg.jitter, cfg.jitter + 1
        )
        cx = (cell % cfg.anchors_per_axis) * step + step // 2 + rng.randint(
            -cfg.jitter, cfg.jitter + 1
        )
        shape_idx = rng.randint(0, len(cfg.shapes))
        color_idx = rng.randint(0, len(cfg.colors))
        half = rng.randint(cfg.size_min, cfg.size_max + 1)
        objects.append((shape_idx, color_idx, cy, cx, half))

    footprints = [
        render_shape(cfg.shapes[s], cy, cx, half, hw) for s, _, cy, cx, half in objects
    ]
    # visibility under paint order (later objects cover earlier ones)
    visible = []
    for i, fp in enumerate(footprints):
        occluders = np.zeros((hw, hw), dtype=bool)
        for later in footprints[i + 1 :]:
            occluders |= later
        visible.append(fp & ~occluders)

    img = rng.uniform_array((3, hw, hw), 0.5 - cfg.noise_amp / 2, 0.5 + cfg.noise_amp / 2)
    for (_, color_idx, *_rest), fp in zip(objects, footprints):
        rgb = cfg.colors[color_idx][1]
        for ch in range(3):
            img[ch][fp] = rgb[ch]

    present = {(s, c) for s, c, *_ in objects}
    absent = [
        (s, c)
        for s in range(len(cfg.shapes))
        for c in range(len(cfg.colors))
        if (s, c) not in present
    ]

    draw_empty = rng.uniform() < cfg.p_empty and absent
    if draw_empty:
        shape_idx, color_idx = absent[rng.randint(0, len(absent))]
        expr = expression_id(shape_idx, color_idx, cfg)
        return SynthSample(
            image=Tensor(img),
            expression_id=expr,
            gt_masks=[np.zeros((hw, hw), dtype=bool)],
            no_target=True,
            text_target_ids=[0],
        )

    # choose among visible objects; the last-painted one always qualifies
    candidates = [i for i, vis in enumerate(visible) if vis.any()]
    target = objects[candidates[rng.randint(0, len(candidates))]]
    shape_idx, color_idx = target[0], target[1]
    expr = expression_id(shape_idx, color_idx, cfg)
    masks = [
        vis
        for (s, c, *_), vis in zip(objects, visible)
        if (s, c) == (shape_idx, color_idx) and vis.any()
    ]
    return SynthSample(
        image=Tensor(img),
        expression_id=expr,
        gt_masks=masks,
        no_target=False,
        text_target_ids=[1] * len(masks),
    )
