"""Miniature detection transformer with swappable encoder/decoder inputs.

Five variants share one parameter recipe and differ only in wiring:

  baseline  coarsest map -> encoder -> decoder reads encoder tokens
  dc        next-finer map -> encoder (quadratically more attention compute)
  default   multiscale mix -> encoder; refined fine map -> decoder
  dcx025    same, with the mixer's grid cell doubled (quarter-size encoder)
  oo        both encoder input and the decoder's fine map come from mixers

Layers are pre-norm; positional signals are added to queries and keys right
before their projections, never to values.
"""

from __future__ import annotations

import math

import numpy as np

from . import flops
from .config import CRED_VARIANTS, DetrConfig, PipelineConfig
from .cram import cram_forward, cram_init_params
from .matching import Prediction
from .osma import osma_forward, osma_init
from .pyramid import FeaturePyramid
from .tensor import (
    ShapeError,
    Tensor,
    axis_linear,
    bilinear_resize,
    layer_norm,
    matmul,
    relu,
    sigmoid,
    silu,
    softmax,
    space_to_depth,
)


def _linear_init(rng: np.random.Generator, d_in: int, d_out: int) -> dict:
    bound = math.sqrt(6.0 / (d_in + d_out))
    return {
        "w": Tensor(rng.uniform(-bound, bound, size=(d_in, d_out)), requires_grad=True),
        "b": Tensor(np.zeros(d_out), requires_grad=True),
    }


def _norm_init(dim: int) -> dict:
    return {
        "gamma": Tensor(np.ones(dim), requires_grad=True),
        "beta": Tensor(np.zeros(dim), requires_grad=True),
    }


def _attn_init(rng, c: int) -> dict:
    params = {name: _linear_init(rng, c, c) for name in ("q", "k", "v", "o")}
    # A key bias shifts every score of a query equally and softmax cancels
    # uniform shifts, so the key projection is kept bias-free.
    del params["k"]["b"]
    return params


# ---- positional signal ------------------------------------------------------


def sine_pos_embed(height: int, width: int, channels: int, temperature: float = 10000.0) -> Tensor:
    """Fixed 2D sine/cosine position map ``[C, H, W]``.

    Half the channels encode the y coordinate, half the x coordinate, each at
    geometrically spaced frequencies; coordinates are normalized to (0, 2*pi).
    """
    if channels % 4:
        raise ShapeError(f"sine_pos_embed: channels must be divisible by 4, got {channels}")
    half = channels // 2
    dim_t = temperature ** (2 * (np.arange(half) // 2) / half)
    ys = (np.arange(height, dtype=np.float64) + 0.5) / height * 2 * math.pi
    xs = (np.arange(width, dtype=np.float64) + 0.5) / width * 2 * math.pi
    py = ys[:, None] / dim_t  # [H, half]
    px = xs[:, None] / dim_t  # [W, half]
    py = np.stack([np.sin(py[:, 0::2]), np.cos(py[:, 1::2])], axis=2).reshape(height, half)
    px = np.stack([np.sin(px[:, 0::2]), np.cos(px[:, 1::2])], axis=2).reshape(width, half)
    pos = np.concatenate(
        [
            np.broadcast_to(py[:, None, :], (height, width, half)),
            np.broadcast_to(px[None, :, :], (height, width, half)),
        ],
        axis=2,
    )
    return Tensor(pos.transpose(2, 0, 1))


def flatten_map(x: Tensor) -> Tensor:
    """``[C, H, W] -> [H*W, C]`` tokens, row-major spatial order."""
    c, h, w = x.shape
    return x.transpose(1, 2, 0).reshape(h * w, c)


def unflatten_tokens(tokens: Tensor, height: int, width: int) -> Tensor:
    """Inverse of flatten_map: ``[H*W, C] -> [C, H, W]``."""
    n, c = tokens.shape
    if n != height * width:
        raise ShapeError(f"unflatten_tokens: {n} tokens cannot fill {height}x{width}")
    return tokens.reshape(height, width, c).transpose(2, 0, 1)


# ---- backbone ---------------------------------------------------------------


def backbone_init(cfg: DetrConfig, rng: np.random.Generator) -> dict:
    widths = [12] + [4 * cfg.d_model] * 4
    return {"stages": [_linear_init(rng, w, cfg.d_model) for w in widths]}


def toy_backbone(image: Tensor, params: dict, cfg: DetrConfig) -> FeaturePyramid:
    """Five fold-and-mix octaves over an ``[3, H, W]`` image.

    Each stage folds 2x2 pixels into channels and mixes them down to d_model,
    so stage i sits at stride 2^i. The last three stages form the pyramid,
    coarsest (stride 32) first.
    """
    if image.ndim != 3 or image.shape[0] != 3:
        raise ShapeError(f"toy_backbone: expected [3, H, W] image, got {image.shape}")
    _, h, w = image.shape
    if h % 32 or w % 32:
        raise ShapeError(f"toy_backbone: image {h}x{w} must be a multiple of 32")
    x = image
    feats = []
    for stage in params["stages"]:
        x = silu(axis_linear(space_to_depth(x, 2), 0, stage["w"], stage["b"]))
        feats.append(x)
    return FeaturePyramid(levels=(feats[4], feats[3], feats[2]), strides=(32, 16, 8))


# ---- attention and transformer layers ----------------------------------------


def multi_head_attention(
    query: Tensor,
    key_value: Tensor,
    q_pos: Tensor | None,
    k_pos: Tensor | None,
    params: dict,
    num_heads: int,
) -> Tensor:
    """Scaled dot-product attention over ``[n, C]`` token sets."""
    nq, c = query.shape
    nk = key_value.shape[0]
    if c % num_heads:
        raise ShapeError(f"attention: {num_heads} heads do not divide width {c}")
    dh = c // num_heads
    q_in = query if q_pos is None else query + q_pos
    k_in = key_value if k_pos is None else key_value + k_pos
    q = axis_linear(q_in, 1, params["q"]["w"], params["q"]["b"])
    k = axis_linear(k_in, 1, params["k"]["w"], params["k"].get("b"))
    v = axis_linear(key_value, 1, params["v"]["w"], params["v"]["b"])
    qh = q.reshape(nq, num_heads, dh).transpose(1, 0, 2)
    kh = k.reshape(nk, num_heads, dh).transpose(1, 2, 0)
    vh = v.reshape(nk, num_heads, dh).transpose(1, 0, 2)
    scores = matmul(qh, kh) * (1.0 / math.sqrt(dh))
    ctx = matmul(softmax(scores, axis=2), vh)
    ctx = ctx.transpose(1, 0, 2).reshape(nq, c)
    return axis_linear(ctx, 1, params["o"]["w"], params["o"]["b"])


def _ffn(x: Tensor, params: dict) -> Tensor:
    h = relu(axis_linear(x, 1, params["w1"]["w"], params["w1"]["b"]))
    return axis_linear(h, 1, params["w2"]["w"], params["w2"]["b"])


def encoder_layer_init(cfg: DetrConfig, rng) -> dict:
    return {
        "norm1": _norm_init(cfg.d_model),
        "attn": _attn_init(rng, cfg.d_model),
        "norm2": _norm_init(cfg.d_model),
        "ffn": {
            "w1": _linear_init(rng, cfg.d_model, cfg.d_ff),
            "w2": _linear_init(rng, cfg.d_ff, cfg.d_model),
        },
    }


def encoder_forward(tokens: Tensor, pos: Tensor, params: dict, cfg: DetrConfig) -> list[Tensor]:
    """Pre-norm self-attention stack; returns every layer's output, in order."""
    x = tokens
    outputs = []
    for layer in params["layers"]:
        h = layer_norm(x, 1, layer["norm1"]["gamma"], layer["norm1"]["beta"])
        x = x + multi_head_attention(h, h, pos, pos, layer["attn"], cfg.heads)
        h = layer_norm(x, 1, layer["norm2"]["gamma"], layer["norm2"]["beta"])
        x = x + _ffn(h, layer["ffn"])
        outputs.append(x)
    return outputs


def decoder_layer_init(cfg: DetrConfig, rng) -> dict:
    return {
        "norm1": _norm_init(cfg.d_model),
        "self_attn": _attn_init(rng, cfg.d_model),
        "norm2": _norm_init(cfg.d_model),
        "cross_attn": _attn_init(rng, cfg.d_model),
        "norm3": _norm_init(cfg.d_model),
        "ffn": {
            "w1": _linear_init(rng, cfg.d_model, cfg.d_ff),
            "w2": _linear_init(rng, cfg.d_ff, cfg.d_model),
        },
    }


def decoder_forward(
    memory: Tensor,
    memory_pos: Tensor | None,
    params: dict,
    cfg: DetrConfig,
) -> Tensor:
    """Query refinement against a token memory; returns ``[N_q, C]``.

    Queries start at zero content plus a learned per-query position that is
    re-added at every attention block.
    """
    q_pos = params["query_pos"]
    x = Tensor(np.zeros((cfg.num_queries, cfg.d_model)))
    for layer in params["layers"]:
        h = layer_norm(x, 1, layer["norm1"]["gamma"], layer["norm1"]["beta"])
        x = x + multi_head_attention(h, h, q_pos, q_pos, layer["self_attn"], cfg.heads)
        h = layer_norm(x, 1, layer["norm2"]["gamma"], layer["norm2"]["beta"])
        x = x + multi_head_attention(
            h, memory, q_pos, memory_pos, layer["cross_attn"], cfg.heads
        )
        h = layer_norm(x, 1, layer["norm3"]["gamma"], layer["norm3"]["beta"])
        x = x + _ffn(h, layer["ffn"])
    return layer_norm(x, 1, params["final"]["gamma"], params["final"]["beta"])


def heads_init(cfg: DetrConfig, rng) -> dict:
    c = cfg.d_model
    return {
        "cls": _linear_init(rng, c, cfg.num_classes + 1),
        "box": [
            _linear_init(rng, c, c),
            _linear_init(rng, c, c),
            _linear_init(rng, c, 4),
        ],
    }


def predict_heads(queries: Tensor, params: dict) -> Prediction:
    """Class logits via one linear; boxes via a 3-layer MLP squashed to (0, 1)."""
    logits = axis_linear(queries, 1, params["cls"]["w"], params["cls"]["b"])
    b = queries
    for i, layer in enumerate(params["box"]):
        b = axis_linear(b, 1, layer["w"], layer["b"])
        if i < len(params["box"]) - 1:
            b = relu(b)
    return Prediction(class_logits=logits, boxes=sigmoid(b))


# ---- parameter assembly and full forward -------------------------------------


def _module_rng(seed: int, slot: int) -> np.random.Generator:
    """Counter-based stream per component, like the per-sample data keying.

    Keying each module separately keeps shared components bitwise identical
    across variants (and across config edits to other modules), so variant
    comparisons differ only where the architectures differ.
    """
    return np.random.default_rng(np.random.Philox(key=[seed, slot]))


def init_params(cfg: PipelineConfig, seed: int | None = None) -> dict:
    """All trainable tensors for one pipeline, keyed by component."""
    s = cfg.seed if seed is None else seed
    d = cfg.detr
    enc_rng = _module_rng(s, 1)
    dec_rng = _module_rng(s, 2)
    params = {
        "backbone": backbone_init(d, _module_rng(s, 0)),
        "encoder": {
            "layers": [encoder_layer_init(d, enc_rng) for _ in range(d.enc_layers)]
        },
        "decoder": {
            "layers": [decoder_layer_init(d, dec_rng) for _ in range(d.dec_layers)],
            "final": _norm_init(d.d_model),
            "query_pos": Tensor(
                dec_rng.normal(0.0, 1.0, size=(d.num_queries, d.d_model)), requires_grad=True
            ),
        },
        "heads": heads_init(d, _module_rng(s, 3)),
    }
    if cfg.variant in CRED_VARIANTS:
        params["osma_e"] = osma_init(cfg.osma, d.d_model, _module_rng(s, 4))
        params["cram"] = cram_init_params(cfg.cram, d.d_model, _module_rng(s, 5))
        if cfg.variant == "oo":
            params["osma_c"] = osma_init(cfg.osma_decoder, d.d_model, _module_rng(s, 6))
    return params


def _sub_pyramid(pyr: FeaturePyramid, n_levels: int) -> FeaturePyramid:
    if n_levels == pyr.num_levels:
        return pyr
    return FeaturePyramid(levels=pyr.levels[:n_levels], strides=pyr.strides[:n_levels])


def cred_detr_forward(
    image: Tensor,
    params: dict,
    cfg: PipelineConfig,
    capture: dict | None = None,
) -> Prediction:
    """Image ``[3, H, W]`` to per-query predictions under the configured variant.

    When ``capture`` is a dict, intermediate maps are stored into it:
    ``encoder_input`` [C, h, w], ``encoder_tokens`` [n, C], ``decoder_memory``
    [C, H', W'] for fine-map variants.
    """
    d = cfg.detr
    variant = cfg.variant
    with flops.component("backbone"):
        pyr = toy_backbone(image, params["backbone"], d)

    if variant == "baseline":
        src = pyr.levels[0]
        if d.baseline_downsample > 1:
            _, fh, fw = src.shape
            src = bilinear_resize(
                src, max(1, fh // d.baseline_downsample), max(1, fw // d.baseline_downsample)
            )
    elif variant == "dc":
        src = pyr.levels[1]
    else:
        with flops.component("osma"):
            src = osma_forward(_sub_pyramid(pyr, cfg.osma.n_levels), params["osma_e"], cfg.osma)

    _, eh, ew = src.shape
    enc_pos = flatten_map(sine_pos_embed(eh, ew, d.d_model))
    tokens = flatten_map(src)
    with flops.component("encoder"):
        enc_outputs = encoder_forward(tokens, enc_pos, params["encoder"], d)

    if variant in CRED_VARIANTS:
        enc_maps = [unflatten_tokens(t, eh, ew) for t in enc_outputs]
        y0 = None
        if variant == "oo":
            with flops.component("osma"):
                y0 = osma_forward(
                    _sub_pyramid(pyr, cfg.osma_decoder.n_levels),
                    params["osma_c"],
                    cfg.osma_decoder,
                )
        with flops.component("cram"):
            fine = cram_forward(pyr, enc_maps, params["cram"], cfg.cram, y0=y0)
        _, mh, mw = fine.shape
        memory = flatten_map(fine)
        memory_pos = flatten_map(sine_pos_embed(mh, mw, d.d_model)) if d.decoder_pos else None
        if capture is not None:
            capture["decoder_memory"] = fine
    else:
        memory = enc_outputs[-1]
        memory_pos = enc_pos

    with flops.component("decoder"):
        queries = decoder_forward(memory, memory_pos, params["decoder"], d)
    with flops.component("heads"):
        pred = predict_heads(queries, params["heads"])

    if capture is not None:
        capture["encoder_input"] = src
        capture["encoder_tokens"] = enc_outputs[-1]
    return pred
