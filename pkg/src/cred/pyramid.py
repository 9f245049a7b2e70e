"""Multi-resolution feature stacks, ordered coarsest level first."""

from __future__ import annotations

from dataclasses import dataclass

from .tensor import ShapeError, Tensor


@dataclass(frozen=True)
class FeaturePyramid:
    """Feature maps ``[C, H_i, W_i]`` where index 0 is the coarsest level.

    Each subsequent level holds a nominally 2x finer map of the same image,
    so ``strides`` decreases by powers of two (for example 32, 16, 8).
    """

    levels: tuple[Tensor, ...]
    strides: tuple[int, ...]

    def __post_init__(self):
        if not self.levels:
            raise ShapeError("FeaturePyramid needs at least one level")
        if len(self.levels) != len(self.strides):
            raise ShapeError(
                f"{len(self.levels)} levels but {len(self.strides)} strides"
            )
        c = self.levels[0].shape[0]
        for i, lvl in enumerate(self.levels):
            if lvl.ndim != 3:
                raise ShapeError(f"level {i} must be [C, H, W], got {lvl.shape}")
            if lvl.shape[0] != c:
                raise ShapeError(
                    f"level {i} has {lvl.shape[0]} channels, level 0 has {c}"
                )
        for i in range(1, len(self.strides)):
            if self.strides[i - 1] != 2 * self.strides[i]:
                raise ShapeError(
                    f"strides must halve outward from the coarsest level, got {self.strides}"
                )

    @property
    def channels(self) -> int:
        return self.levels[0].shape[0]

    @property
    def num_levels(self) -> int:
        return len(self.levels)

    def spatial_shape(self, i: int) -> tuple[int, int]:
        _, h, w = self.levels[i].shape
        return (h, w)
