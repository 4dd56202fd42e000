"""Training loop, evaluation driver, and checkpoint glue.

A run is pinned end-to-end by (config, seed): one SplitMix64 stream
initializes parameters and then streams training samples, the frozen
stubs derive from their own seed, and held-out evaluation uses a disjoint
seed with freshly generated samples.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import numpy as np

from .decoder import (
    DecoderConfig,
    DecoderParams,
    MaskPrediction,
    SegTokenSet,
    build_variant,
    decoder_forward,
    named_params,
)
from .losses import LossConfig, ce_loss, mask_loss, total_loss
from .metrics import EvalRecord, MetricsReport, score_records
from .nn import linear_forward
from .rng import Rng
from .stubs import (
    RejHeadParams,
    StubWeights,
    build_stub_weights,
    encode_sample,
    init_rej_head,
    rej_forward,
    rej_predict,
)
from .synth import GenConfig, gen_sample
from .tensor import Tape, Tensor, add, backward, scale
from . import tensorio


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class TrainConfig:
    steps: int = 2000
    batch_size: int = 8
    learning_rate: float = 1e-3
    seed: int = 42
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    loss: LossConfig = field(default_factory=LossConfig)
    decoder: DecoderConfig = field(default_factory=DecoderConfig)
    generator: GenConfig = field(default_factory=GenConfig)

    def __post_init__(self):
        if self.steps < 0 or self.batch_size < 1:
            raise ValueError("steps must be >= 0 and batch_size >= 1")
        grid = self.generator.image_hw // self.generator.patch
        if grid != self.decoder.grid_detail:
            raise ValueError(
                f"generator implies a {grid}x{grid} detail grid but the decoder expects "
                f"{self.decoder.grid_detail}"
            )


def config_to_dict(cfg: TrainConfig) -> dict:
    return dataclasses.asdict(cfg)


def config_from_dict(d: dict) -> TrainConfig:
    d = dict(d)
    loss = LossConfig(**d.pop("loss", {}))
    decoder = DecoderConfig(**d.pop("decoder", {}))
    gen = dict(d.pop("generator", {}))
    if "shapes" in gen:
        gen["shapes"] = tuple(gen["shapes"])
    if "colors" in gen:
        gen["colors"] = tuple((name, tuple(rgb)) for name, rgb in gen["colors"])
    generator = GenConfig(**gen)
    return TrainConfig(loss=loss, decoder=decoder, generator=generator, **d)


class AdamOptimizer:
    """Adaptive-moment descent over a named parameter dict."""

    def __init__(self, params: dict[str, Tensor], lr: float, beta1: float, beta2: float, eps: float):
        self.params = params
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self._m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self._v = {k: np.zeros_like(p.data) for k, p in params.items()}

    def step(self) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        for k, p in self.params.items():
            g = p.grad if p.grad is not None else np.zeros_like(p.data)
            self._m[k] = b1 * self._m[k] + (1 - b1) * g
            self._v[k] = b2 * self._v[k] + (1 - b2) * g * g
            m_hat = self._m[k] / (1 - b1**self.t)
            v_hat = self._v[k] / (1 - b2**self.t)
            p.data -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


def resize_mask_nearest(mask: np.ndarray, size: int) -> np.ndarray:
    """Nearest-neighbor resize of a boolean mask to size x size."""
    h, w = mask.shape
    if (h, w) == (size, size):
        return mask
    rows = np.clip(((np.arange(size) + 0.5) * h / size).astype(np.int64), 0, h - 1)
    cols = np.clip(((np.arange(size) + 0.5) * w / size).astype(np.int64), 0, w - 1)
    return mask[np.ix_(rows, cols)]


def _mean_of(scalars: list[Tensor]) -> Tensor:
    acc = scalars[0]
    for s in scalars[1:]:
        acc = add(acc, s)
    return scale(acc, 1.0 / len(scalars))


def sample_losses(sample, feats, dec_params, rej_params, cfg: TrainConfig):
    """(text CE, mask BCE+Dice averaged over slots) for one sample."""
    seg_feats = linear_forward(feats.seg.tokens, dec_params.phi2)
    text = ce_loss(rej_forward(seg_feats, rej_params), feats.rej_labels)

    pred = decoder_forward(feats.t1_img, feats.t2_img, feats.seg, dec_params, cfg.decoder)
    final = cfg.decoder.final_mask_hw
    per_token = [
        mask_loss(probs, resize_mask_nearest(gt, final).astype(np.float64), cfg.loss)
        for probs, gt in zip(pred.per_token_probs, sample.gt_masks)
    ]
    return text, _mean_of(per_token)


def train(cfg: TrainConfig, log=None):
    """Train decoder + reject head; returns (params, rej head, loss curve).

    The loss curve rows are (step, total, text, mask). Raises
    TrainingDiverged naming the step if the loss goes non-finite.
    """
    rng = Rng(cfg.seed)
    dec_params = build_variant(cfg.decoder, rng)
    rej_params = init_rej_head(rng, cfg.decoder.c)
    stub_w = build_stub_weights(cfg.generator, cfg.decoder.c, cfg.decoder.c_llm)

    params = dict(named_params(dec_params))
    params["rej_head.weight"] = rej_params.linear.weight
    params["rej_head.bias"] = rej_params.linear.bias
    opt = AdamOptimizer(params, cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.epsilon)

    curve = []
    for step in range(cfg.steps):
        with Tape() as tape:
            text_terms, mask_terms = [], []
            for _ in range(cfg.batch_size):
                sample = gen_sample(rng, cfg.generator)
                feats = encode_sample(sample, stub_w, cfg.decoder.grid_detail)
                text, mask = sample_losses(sample, feats, dec_params, rej_params, cfg)
                text_terms.append(text)
                mask_terms.append(mask)
            text_mean = _mean_of(text_terms)
            mask_mean = _mean_of(mask_terms)
            loss = total_loss(text_mean, mask_mean, cfg.loss)
            loss_val = loss.item()
            if not np.isfinite(loss_val):
                raise TrainingDiverged(f"non-finite loss at step {step}")
            backward(loss, tape)
        opt.step()
        curve.append((step, loss_val, text_mean.item(), mask_mean.item()))
        if log is not None and (step % 100 == 0 or step == cfg.steps - 1):
            log(f"step {step}: loss={loss_val:.4f}")
    return dec_params, rej_params, curve


def write_curve(path, curve) -> None:
    lines = ["step,loss,text_loss,mask_loss"]
    lines += [f"{s},{l!r},{t!r},{m!r}" for s, l, t, m in curve]
    with open(path, "w", encoding="ascii") as f:
        f.write("\n".join(lines) + "\n")


# ---------------------------------------------------------------------------
# Checkpoints


def save_model(path, dec_params: DecoderParams, rej_params: RejHeadParams, cfg: TrainConfig):
    tensors = {k: t.data for k, t in named_params(dec_params).items()}
    tensors["rej_head.weight"] = rej_params.linear.weight.data
    tensors["rej_head.bias"] = rej_params.linear.bias.data
    tensorio.save_checkpoint(path, tensors, {"train": config_to_dict(cfg)})


def load_model(path):
    tensors, meta = tensorio.load_checkpoint(path)
    cfg = config_from_dict(meta["train"])
    dec_params = build_variant(cfg.decoder, Rng(0))
    rej_params = init_rej_head(Rng(0), cfg.decoder.c)
    stored = dict(named_params(dec_params))
    stored["rej_head.weight"] = rej_params.linear.weight
    stored["rej_head.bias"] = rej_params.linear.bias
    if set(stored) != set(tensors):
        raise ValueError(
            f"checkpoint/config mismatch: stored {sorted(tensors)} vs expected {sorted(stored)}"
        )
    for name, t in stored.items():
        if t.data.shape != tensors[name].shape:
            raise ValueError(
                f"checkpoint tensor {name} has shape {tensors[name].shape}, "
                f"expected {t.data.shape}"
            )
        t.data[...] = tensors[name]
    return dec_params, rej_params, cfg


# ---------------------------------------------------------------------------
# Evaluation


def predict_sample(feats, dec_params, rej_params, decoder_cfg) -> tuple[MaskPrediction, list[bool]]:
    """Decode one sample using the reject head's own flags."""
    seg_feats = linear_forward(feats.seg.tokens, dec_params.phi2)
    flags = rej_predict(rej_forward(seg_feats, rej_params))
    seg = SegTokenSet(feats.seg.tokens, flags)
    pred = decoder_forward(feats.t1_img, feats.t2_img, seg, dec_params, decoder_cfg)
    return pred, flags


def evaluate(dec_params, rej_params, cfg: TrainConfig, n_samples: int, seed: int):
    """Score the model on n freshly generated samples; returns (report, records)."""
    if n_samples < 1:
        raise ValueError("evaluation needs at least one sample")
    stub_w = build_stub_weights(cfg.generator, cfg.decoder.c, cfg.decoder.c_llm)
    rng = Rng(seed)
    final = cfg.decoder.final_mask_hw
    records = []
    for _ in range(n_samples):
        sample = gen_sample(rng, cfg.generator)
        feats = encode_sample(sample, stub_w, cfg.decoder.grid_detail)
        pred, flags = predict_sample(feats, dec_params, rej_params, cfg.decoder)
        records.append(
            EvalRecord(
                pred_mask=pred.merged_binary,
                gt_mask=resize_mask_nearest(sample.merged_gt(), final),
                gt_no_target=sample.no_target,
                pred_no_target=all(flags),
            )
        )
    return score_records(records), records
