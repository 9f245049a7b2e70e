"""One-step multiscale mixing of a feature pyramid into a single map.

The levels of a pyramid are chopped into grids whose cell size doubles with
resolution (cell ``g`` on the coarsest level, ``2g`` on the next, ...), so
every level yields the same number of grid positions and co-located cells
cover the same image region. Stacking the cell contents of all levels at one
grid position gives a token matrix ``[T, C]``; a small stack of dense maps
along the token axis compresses those T tokens into P output cells, and a
final channel mix produces the fused map. The whole fusion is one pass, with
no per-level attention loops.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .pyramid import FeaturePyramid
from .tensor import (
    ShapeError,
    Tensor,
    axis_linear,
    bilinear_resize,
    concat,
    grid_merge,
    grid_partition,
    layer_norm,
    silu,
)


@dataclass(frozen=True)
class OsmaConfig:
    """Geometry and stack shape for the one-step multiscale mixer.

    base_cell: grid cell size on the coarsest level; level i uses 2^i * base_cell.
    out_cells: cells emitted per grid position (1 or a perfect square); the
        output map is sqrt(out_cells) times the coarsest grid in each axis.
    proj_dim: width of the token-axis projections between input and output.
    depth: number of hidden token-axis layers is depth - 1; depth >= 1.
    """

    n_levels: int = 3
    base_cell: int = 1
    out_cells: int = 1
    proj_dim: int = 21
    depth: int = 2
    use_norm: bool = True
    use_act: bool = True

    def __post_init__(self):
        if self.n_levels < 1:
            raise ShapeError(f"n_levels must be >= 1, got {self.n_levels}")
        if self.base_cell < 1:
            raise ShapeError(f"base_cell must be >= 1, got {self.base_cell}")
        root = math.isqrt(self.out_cells) if self.out_cells > 0 else 0
        if self.out_cells < 1 or root * root != self.out_cells:
            raise ShapeError(
                f"out_cells must be 1 or a perfect square, got {self.out_cells}"
            )
        if self.proj_dim < 1:
            raise ShapeError(f"proj_dim must be >= 1, got {self.proj_dim}")
        if self.depth < 1:
            raise ShapeError(f"depth must be >= 1, got {self.depth}")

    @property
    def out_side(self) -> int:
        return math.isqrt(self.out_cells)


def token_count(n_levels: int, base_cell: int) -> int:
    """Tokens per grid position: sum of (2^i * base_cell)^2 over levels."""
    return sum((base_cell << i) ** 2 for i in range(n_levels))


def level_cell(base_cell: int, level: int) -> int:
    return base_cell << level


def aligned_sizes(pyramid: FeaturePyramid, base_cell: int) -> list[tuple[int, int]]:
    """Target per-level sizes so every level tiles exactly into its cells.

    The coarsest level is padded up to a multiple of ``base_cell`` per axis;
    level i is then forced to exactly 2^i times that size, which makes the
    grid position count identical across levels.
    """
    h0, w0 = pyramid.spatial_shape(0)
    s0_h = -(-h0 // base_cell) * base_cell
    s0_w = -(-w0 // base_cell) * base_cell
    return [(s0_h << i, s0_w << i) for i in range(pyramid.num_levels)]


def align_scales(pyramid: FeaturePyramid, base_cell: int) -> FeaturePyramid:
    """Resize levels so all share one grid layout; no-op levels pass through."""
    targets = aligned_sizes(pyramid, base_cell)
    levels = []
    for lvl, (th, tw) in zip(pyramid.levels, targets):
        _, h, w = lvl.shape
        levels.append(lvl if (h, w) == (th, tw) else bilinear_resize(lvl, th, tw))
    return FeaturePyramid(levels=tuple(levels), strides=pyramid.strides)


def osma_init(cfg: OsmaConfig, channels: int, rng: np.random.Generator) -> dict:
    """Parameter dict for one mixer: token-axis stack plus final channel mix."""
    t = token_count(cfg.n_levels, cfg.base_cell)
    widths = [t] + [cfg.proj_dim] * cfg.depth + [cfg.out_cells]
    token = []
    for d_in, d_out in zip(widths[:-1], widths[1:]):
        layer = {"w": _uniform_init(rng, d_in, d_out)}
        if cfg.use_norm:
            # A per-token bias is uniform across the channel axis, which the
            # following norm subtracts out exactly; keep it only norm-free.
            layer["gamma"] = Tensor(np.ones(channels), requires_grad=True)
            layer["beta"] = Tensor(np.zeros(channels), requires_grad=True)
        else:
            layer["b"] = Tensor(np.zeros(d_out), requires_grad=True)
        token.append(layer)
    return {
        "token": token,
        "mix": {
            "w": _uniform_init(rng, channels, channels),
            "b": Tensor(np.zeros(channels), requires_grad=True),
        },
    }


def _uniform_init(rng: np.random.Generator, d_in: int, d_out: int) -> Tensor:
    bound = math.sqrt(6.0 / (d_in + d_out))
    return Tensor(rng.uniform(-bound, bound, size=(d_in, d_out)), requires_grad=True)


def osma_tokens(pyramid: FeaturePyramid, cfg: OsmaConfig) -> tuple[Tensor, tuple[int, int]]:
    """Stack co-located cells of all levels: ``[N_g, T, C]`` plus the grid layout.

    Tokens are ordered coarsest level first; within a level, cell entries are
    row-major. Returns the (grid_h, grid_w) position layout of the coarsest level.
    """
    if pyramid.num_levels != cfg.n_levels:
        raise ShapeError(
            f"pyramid has {pyramid.num_levels} levels, config expects {cfg.n_levels}"
        )
    aligned = align_scales(pyramid, cfg.base_cell)
    h0, w0 = aligned.spatial_shape(0)
    grid_h, grid_w = h0 // cfg.base_cell, w0 // cfg.base_cell
    parts = []
    for i, lvl in enumerate(aligned.levels):
        cell = level_cell(cfg.base_cell, i)
        parts.append(grid_partition(lvl, cell))
    return concat(parts, axis=1), (grid_h, grid_w)


def osma_forward(pyramid: FeaturePyramid, params: dict, cfg: OsmaConfig) -> Tensor:
    """Fuse a pyramid into one ``[C, H_o, W_o]`` map.

    ``H_o = grid_h * sqrt(out_cells)`` where grid_h is the coarsest level's
    aligned size divided by base_cell (likewise for width).
    """
    tokens, (grid_h, grid_w) = osma_tokens(pyramid, cfg)
    x = tokens
    for layer in params["token"]:
        x = axis_linear(x, 1, layer["w"], layer.get("b"))
        if cfg.use_norm:
            x = layer_norm(x, 2, layer["gamma"], layer["beta"])
        if cfg.use_act:
            x = silu(x)
    x = axis_linear(x, 2, params["mix"]["w"], params["mix"]["b"])
    side = cfg.out_side
    return grid_merge(x, grid_h * side, grid_w * side, side)


def output_shape(pyramid_sizes, cfg: OsmaConfig) -> tuple[int, int]:
    """Predict osma_forward's spatial output from the coarsest level size."""
    h0, w0 = pyramid_sizes[0]
    s0_h = -(-h0 // cfg.base_cell) * cfg.base_cell
    s0_w = -(-w0 // cfg.base_cell) * cfg.base_cell
    side = cfg.out_side
    return (s0_h // cfg.base_cell * side, s0_w // cfg.base_cell * side)
