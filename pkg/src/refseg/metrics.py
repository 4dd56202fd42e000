"""Segmentation evaluation protocol: cIoU, gIoU, Prec@0.5, N-acc.

cIoU aggregates summed intersections over summed unions across the
dataset; gIoU averages per-record IoU. No-target records follow the
generalized protocol: a correct rejection scores gIoU 1.0 and is excluded
from cIoU, an incorrect prediction scores 0.0 and its pixels count toward
the cIoU union. Metrics whose denominator is empty are reported as absent
rather than 0.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np


@dataclass
class EvalRecord:
    pred_mask: np.ndarray  # bool (H, W)
    gt_mask: np.ndarray  # bool (H, W)
    gt_no_target: bool = False
    pred_no_target: bool = False

    def __post_init__(self):
        self.pred_mask = np.asarray(self.pred_mask, dtype=bool)
        self.gt_mask = np.asarray(self.gt_mask, dtype=bool)
        if self.pred_mask.shape != self.gt_mask.shape:
            raise ValueError(
                f"mask shapes differ: {self.pred_mask.shape} vs {self.gt_mask.shape}"
            )


@dataclass
class MetricsReport:
    ciou: float | None = None
    giou: float | None = None
    prec05: float | None = None
    n_acc: float | None = None

    def to_json(self) -> str:
        present = {k: v for k, v in vars(self).items() if v is not None}
        return json.dumps(present, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "MetricsReport":
        return cls(**json.loads(text))


def _iou(pred: np.ndarray, gt: np.ndarray) -> float:
    inter = int(np.count_nonzero(pred & gt))
    union = int(np.count_nonzero(pred | gt))
    return 1.0 if union == 0 else inter / union  # both empty: exact match


def gres_adjust(record: EvalRecord):
    """Per-record gIoU contribution and cIoU inclusion under no-target rules.

    Returns (giou_contribution, (intersection, union) or None); None means
    the record is excluded from the cIoU sums.
    """
    if record.gt_no_target:
        if record.pred_no_target:
            return 1.0, None
        # false positive: predicted pixels all count toward the union
        return 0.0, (0, int(np.count_nonzero(record.pred_mask)))
    inter = int(np.count_nonzero(record.pred_mask & record.gt_mask))
    union = int(np.count_nonzero(record.pred_mask | record.gt_mask))
    return (1.0 if union == 0 else inter / union), (inter, union)


def ciou(records: list[EvalRecord]) -> float | None:
    """Dataset-level IoU: summed intersections over summed unions."""
    if not records:
        raise ValueError("ciou needs at least one record")
    total_i = total_u = 0
    for r in records:
        _, terms = gres_adjust(r)
        if terms is not None:
            total_i += terms[0]
            total_u += terms[1]
    return None if total_u == 0 else total_i / total_u


def giou(records: list[EvalRecord]) -> float:
    """Mean per-record IoU with no-target credit/penalty."""
    if not records:
        raise ValueError("giou needs at least one record")
    return float(np.mean([gres_adjust(r)[0] for r in records]))


def n_acc(records: list[EvalRecord]) -> float | None:
    """Fraction of true no-target records correctly rejected; absent if none."""
    gt_empty = [r for r in records if r.gt_no_target]
    if not gt_empty:
        return None
    return sum(r.pred_no_target for r in gt_empty) / len(gt_empty)


def mask_to_bbox(mask: np.ndarray):
    """Tight inclusive (x0, y0, x1, y1) box over foreground, or None if empty."""
    mask = np.asarray(mask, dtype=bool)
    rows = np.flatnonzero(mask.any(axis=1))
    if rows.size == 0:
        return None
    cols = np.flatnonzero(mask.any(axis=0))
    return (int(cols[0]), int(rows[0]), int(cols[-1]), int(rows[-1]))


def box_iou(a, b) -> float:
    ax0, ay0, ax1, ay1 = a
    bx0, by0, bx1, by1 = b
    iw = min(ax1, bx1) - max(ax0, bx0) + 1
    ih = min(ay1, by1) - max(ay0, by0) + 1
    inter = max(iw, 0) * max(ih, 0)
    area_a = (ax1 - ax0 + 1) * (ay1 - ay0 + 1)
    area_b = (bx1 - bx0 + 1) * (by1 - by0 + 1)
    return inter / (area_a + area_b - inter)


def prec_at_05(records: list[EvalRecord]) -> float | None:
    """Fraction of records whose predicted-mask box overlaps gt box with IoU > 0.5.

    Strictly greater per the protocol. Records with an empty gt mask carry
    no reference box and are not scored; an empty prediction on a scored
    record counts as incorrect. Absent when nothing is scorable.
    """
    if not records:
        raise ValueError("prec_at_05 needs at least one record")
    scored = 0
    correct = 0
    for r in records:
        gt_box = mask_to_bbox(r.gt_mask)
        if gt_box is None:
            continue
        scored += 1
        pred_box = mask_to_bbox(r.pred_mask)
        if pred_box is not None and box_iou(pred_box, gt_box) > 0.5:
            correct += 1
    return None if scored == 0 else correct / scored


def score_records(records: list[EvalRecord]) -> MetricsReport:
    return MetricsReport(
        ciou=ciou(records),
        giou=giou(records),
        prec05=prec_at_05(records),
        n_acc=n_acc(records),
    )
