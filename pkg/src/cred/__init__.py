"""Cross-resolution encoding-decoding for a desk-scale detection transformer."""

from .config import (
    ConfigError,
    DetrConfig,
    FlopConvention,
    PipelineConfig,
    TrainConfig,
    for_variant,
    load_config,
    paper_config,
    save_config,
    toy_config,
)
from .cram import CramConfig, cram_forward, cram_init, cram_init_params, cram_layer
from .crt1 import read_tensor, write_tensor
from .data import Sample, seeded_pyramid, shapes_dataset, shapes_sample
from .detr import cred_detr_forward, init_params, sine_pos_embed, toy_backbone
from .flops import (
    FlopBudget,
    MacCounter,
    attention_flops,
    budget_report,
    cram_flops,
    decoder_flops,
    encoder_flops,
    measure,
    osma_flops,
    toy_backbone_flops,
)
from .gradcheck import GradCheckReport, grad_check
from .matching import (
    BoxSet,
    LossWeights,
    Prediction,
    giou,
    hungarian_match,
    match_cost,
    set_loss,
)
from .osma import OsmaConfig, align_scales, osma_forward, osma_init, token_count
from .pyramid import FeaturePyramid
from .tensor import (
    NonFiniteError,
    ShapeError,
    Tensor,
    axis_linear,
    bilinear_resize,
    concat,
    depth_to_space,
    grid_merge,
    grid_partition,
    layer_norm,
    log_softmax,
    matmul,
    no_grad,
    silu,
    softmax,
    space_to_depth,
)
from .train import batch_loss, eval_recall, lr_at, train_step, train_toy

__version__ = "0.1.0"
