"""Lightweight referring-segmentation mask decoder, autodiff included.

A from-scratch float64 tensor library with taped reverse-mode
differentiation, the neural primitives of a small mask decoder (linear,
same-padded conv, single-head cross attention, pixel shuffle, offset-based
grid sampling), a detail/semantic fusion module, segmentation losses and
the cIoU/gIoU/Prec@0.5/N-acc evaluation protocol, and a fully seeded
synthetic training harness.
"""

from .decoder import (
    DecoderConfig,
    DecoderParams,
    MaskPrediction,
    SegTokenSet,
    build_variant,
    decoder_forward,
    param_count,
)
from .fusion import FusionParams, attention_heatmap, fuse_detail_semantic, init_fusion
from .gradcheck import check_gradients, rel_error
from .losses import LossConfig, bce_loss, ce_loss, dice_loss, mask_loss, total_loss
from .metrics import (
    EvalRecord,
    MetricsReport,
    ciou,
    giou,
    gres_adjust,
    mask_to_bbox,
    n_acc,
    prec_at_05,
    score_records,
)
from .nn import (
    AttentionParams,
    Conv2dParams,
    LinearParams,
    SampleGrid,
    base_grid,
    bilinear_sample,
    conv2d_same,
    cross_attention,
    dynamic_upsample,
    linear_forward,
    pixel_shuffle,
    upsample2x_bilinear,
)
from .rng import Rng
from .synth import GenConfig, SynthSample, gen_sample
from .tensor import (
    ShapeError,
    Tape,
    Tensor,
    backward,
    concat_channels,
    finite_diff_grad,
    matmul,
    softmax_rows,
)
from .train import TrainConfig, evaluate, load_model, save_model, train

__version__ = "0.1.0"
