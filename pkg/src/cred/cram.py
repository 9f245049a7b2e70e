"""Cross-resolution transfer from low-resolution encoder states to a fine map.

A fine-grained map Y (seeded from a pyramid level, or any map of the same
shape) is refined once per encoder layer: the layer's token map is resized up
to Y's resolution, concatenated on the channel axis, mixed back down to C
channels, normalized, gated, and added residually. Stacking one such step per
encoder layer lets the fine map absorb the encoder's attention structure
without ever running attention at fine resolution.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .pyramid import FeaturePyramid
from .tensor import (
    ShapeError,
    Tensor,
    axis_linear,
    bilinear_resize,
    concat,
    layer_norm,
    silu,
)


@dataclass(frozen=True)
class CramConfig:
    """source_level: pyramid index seeding Y (0 is coarsest). num_layers must
    match the number of encoder layer outputs fed to cram_forward. The norm
    and activation toggles exist for ablation and identity tests."""

    source_level: int = 1
    num_layers: int = 2
    use_norm: bool = True
    use_act: bool = True

    def __post_init__(self):
        if self.source_level < 0:
            raise ShapeError(f"source_level must be >= 0, got {self.source_level}")
        if self.num_layers < 1:
            raise ShapeError(f"num_layers must be >= 1, got {self.num_layers}")


def cram_init(pyramid: FeaturePyramid, cfg: CramConfig) -> Tensor:
    """Initial fine map: the configured pyramid level, shape ``[C, H, W]``."""
    if cfg.source_level >= pyramid.num_levels:
        raise ShapeError(
            f"source_level {cfg.source_level} out of range for "
            f"{pyramid.num_levels}-level pyramid"
        )
    return pyramid.levels[cfg.source_level]


def cram_init_params(cfg: CramConfig, channels: int, rng: np.random.Generator) -> dict:
    """Independent mix/norm parameters per refinement step."""
    layers = []
    bound = np.sqrt(6.0 / (3 * channels))
    for _ in range(cfg.num_layers):
        layer = {
            "w": Tensor(
                rng.uniform(-bound, bound, size=(2 * channels, channels)),
                requires_grad=True,
            ),
            "b": Tensor(np.zeros(channels), requires_grad=True),
        }
        if cfg.use_norm:
            layer["gamma"] = Tensor(np.ones(channels), requires_grad=True)
            layer["beta"] = Tensor(np.zeros(channels), requires_grad=True)
        layers.append(layer)
    return {"layers": layers}


def cram_layer(
    y: Tensor,
    enc_map: Tensor,
    layer_params: dict,
    use_norm: bool = True,
    use_act: bool = True,
) -> Tensor:
    """One refinement: upsample, concat on channels, mix to C, norm, gate, add."""
    if y.ndim != 3 or enc_map.ndim != 3:
        raise ShapeError(
            f"cram_layer expects [C, H, W] maps, got {y.shape} and {enc_map.shape}"
        )
    c, h, w = y.shape
    if enc_map.shape[0] != c:
        raise ShapeError(
            f"channel mismatch: fine map has {c}, encoder map has {enc_map.shape[0]}"
        )
    lifted = bilinear_resize(enc_map, h, w)
    z = axis_linear(concat([y, lifted], axis=0), 0, layer_params["w"], layer_params["b"])
    if use_norm:
        z = layer_norm(z, 0, layer_params["gamma"], layer_params["beta"])
    if use_act:
        z = silu(z)
    return y + z


def cram_forward(
    pyramid: FeaturePyramid,
    encoder_layer_outputs,
    params: dict,
    cfg: CramConfig,
    y0: Tensor | None = None,
) -> Tensor:
    """Run one refinement per encoder layer output, in layer order.

    ``y0`` overrides the pyramid-seeded initial map (used when another module
    supplies the fine map); its shape fixes the output resolution either way.
    """
    outputs = list(encoder_layer_outputs)
    if len(outputs) != cfg.num_layers:
        raise ShapeError(
            f"got {len(outputs)} encoder layer outputs, config expects {cfg.num_layers}"
        )
    if len(params["layers"]) != cfg.num_layers:
        raise ShapeError(
            f"params hold {len(params['layers'])} layers, config expects {cfg.num_layers}"
        )
    y = cram_init(pyramid, cfg) if y0 is None else y0
    for enc_map, layer_params in zip(outputs, params["layers"]):
        y = cram_layer(y, enc_map, layer_params, cfg.use_norm, cfg.use_act)
    return y
