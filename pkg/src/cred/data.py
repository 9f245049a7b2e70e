"""Synthetic detection data with exact ground-truth boxes.

Every sample is generated from a counter-based RNG keyed by (seed, index), so
sample i is bitwise identical whether drawn alone or as part of a run of any
length, in any order.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .crt1 import read_tensor, write_tensor
from .matching import BoxSet, iou_matrix_np
from .pyramid import FeaturePyramid
from .tensor import Tensor

# Bright, well-separated class colors; class identity is carried by color,
# while rectangle vs ellipse is sampled independently.
PALETTE = np.array(
    [
        [0.90, 0.10, 0.10],
        [0.10, 0.85, 0.10],
        [0.15, 0.25, 0.95],
        [0.95, 0.85, 0.10],
        [0.85, 0.15, 0.85],
        [0.10, 0.85, 0.85],
        [0.95, 0.55, 0.10],
        [0.60, 0.60, 0.60],
    ]
)

MAX_CLASSES = len(PALETTE)


@dataclass(frozen=True)
class Sample:
    image: Tensor
    truth: BoxSet


def _sample_rng(seed: int, index: int) -> np.random.Generator:
    if seed < 0 or index < 0:
        raise ValueError(f"seed and index must be non-negative, got {seed}, {index}")
    return np.random.default_rng(np.random.Philox(key=[seed, index]))


def shapes_sample(
    seed: int,
    index: int,
    height: int = 64,
    width: int = 64,
    num_classes: int = 3,
    max_objects: int = 4,
    min_size: int = 8,
) -> Sample:
    """One image of solid rectangles and ellipses over dim noise.

    Ground-truth boxes are exact by construction: a rectangle fills its box,
    an ellipse is inscribed in it. Object boxes are rejection-sampled to keep
    pairwise IoU below 0.3 (an object that cannot be placed in 10 tries is
    dropped), so targets stay mostly visible under painter's-order overlap.
    """
    if num_classes < 1 or num_classes > MAX_CLASSES:
        raise ValueError(f"num_classes must be in 1..{MAX_CLASSES}, got {num_classes}")
    rng = _sample_rng(seed, index)
    img = rng.uniform(0.0, 0.2, size=(3, height, width))
    n_objects = int(rng.integers(0, max_objects + 1))
    boxes: list[list[float]] = []
    labels: list[int] = []
    yy, xx = np.mgrid[0:height, 0:width]
    for _ in range(n_objects):
        label = int(rng.integers(num_classes))
        is_ellipse = bool(rng.uniform() < 0.5)
        placed = None
        for _ in range(10):
            w_px = int(rng.integers(min_size, width // 2 + 1))
            h_px = int(rng.integers(min_size, height // 2 + 1))
            x0 = int(rng.integers(0, width - w_px + 1))
            y0 = int(rng.integers(0, height - h_px + 1))
            cand = [
                (x0 + w_px / 2) / width,
                (y0 + h_px / 2) / height,
                w_px / width,
                h_px / height,
            ]
            if not boxes or iou_matrix_np(np.array([cand]), np.array(boxes)).max() < 0.3:
                placed = (x0, y0, w_px, h_px, cand)
                break
        if placed is None:
            continue
        x0, y0, w_px, h_px, cand = placed
        color = PALETTE[label][:, None, None]
        if is_ellipse:
            cx_px, cy_px = x0 + w_px / 2, y0 + h_px / 2
            rx, ry = w_px / 2, h_px / 2
            mask = ((xx + 0.5 - cx_px) / rx) ** 2 + ((yy + 0.5 - cy_px) / ry) ** 2 <= 1.0
            img = np.where(mask[None, :, :], np.broadcast_to(color, img.shape), img)
        else:
            img[:, y0 : y0 + h_px, x0 : x0 + w_px] = color
        boxes.append(cand)
        labels.append(label)
    truth = BoxSet(
        boxes=np.array(boxes, dtype=np.float64).reshape(-1, 4),
        labels=np.array(labels, dtype=np.int64),
    )
    return Sample(image=Tensor(img), truth=truth)


def shapes_dataset(
    seed: int,
    count: int,
    height: int = 64,
    width: int = 64,
    num_classes: int = 3,
    **kwargs,
) -> list[Sample]:
    return [
        shapes_sample(seed, i, height, width, num_classes, **kwargs)
        for i in range(count)
    ]


def seeded_pyramid(
    seed: int,
    channels: int,
    coarse_h: int,
    coarse_w: int,
    n_levels: int = 3,
    scale: float = 1.0,
) -> FeaturePyramid:
    """Deterministic uniform(-scale, scale) pyramid for module-level tests."""
    rng = np.random.default_rng(np.random.Philox(key=[seed, 0]))
    levels = tuple(
        Tensor(rng.uniform(-scale, scale, size=(channels, coarse_h << i, coarse_w << i)))
        for i in range(n_levels)
    )
    return FeaturePyramid(levels=levels, strides=tuple(32 >> i for i in range(n_levels)))


# ---- on-disk form ------------------------------------------------------------


def export_dataset(samples, out_dir) -> None:
    """Write images as CRT1 files plus a JSON manifest of boxes/labels."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    entries = []
    for i, s in enumerate(samples):
        name = f"image_{i:04d}.crt1"
        write_tensor(out / name, s.image.data)
        entries.append(
            {
                "image": name,
                "boxes": s.truth.boxes.tolist(),
                "labels": s.truth.labels.tolist(),
            }
        )
    (out / "manifest.json").write_text(json.dumps({"samples": entries}, indent=2) + "\n")


def load_dataset(in_dir) -> list[Sample]:
    root = Path(in_dir)
    manifest = json.loads((root / "manifest.json").read_text())
    samples = []
    for entry in manifest["samples"]:
        image = Tensor(read_tensor(root / entry["image"]).astype(np.float64))
        truth = BoxSet(
            boxes=np.array(entry["boxes"], dtype=np.float64).reshape(-1, 4),
            labels=np.array(entry["labels"], dtype=np.int64),
        )
        samples.append(Sample(image=image, truth=truth))
    return samples
