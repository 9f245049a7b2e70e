"""Full-batch momentum-SGD training of the toy detector.

Parameters live in nested dicts of Tensors and are never mutated: each step
builds a fresh tree, so two runs from one seed are bitwise reproducible.
"""

from __future__ import annotations

import json
import math
from pathlib import Path

import numpy as np

from .config import PipelineConfig, TrainConfig
from .crt1 import read_tensor, write_tensor
from .data import Sample, shapes_dataset
from .detr import cred_detr_forward, init_params
from .matching import LossWeights, set_loss
from .tensor import NonFiniteError, Tensor, no_grad


class TrainingDivergedError(RuntimeError):
    """Loss or gradients left the finite range during a step."""


# ---- parameter trees ----------------------------------------------------------


def tree_leaves(tree, prefix: str = "") -> list[tuple[str, Tensor]]:
    """Flatten a nested dict/list of Tensors into (dotted-name, tensor) pairs."""
    if isinstance(tree, Tensor):
        return [(prefix, tree)]
    items: list[tuple[str, Tensor]] = []
    if isinstance(tree, dict):
        for key, val in tree.items():
            items.extend(tree_leaves(val, f"{prefix}.{key}" if prefix else str(key)))
    elif isinstance(tree, (list, tuple)):
        for i, val in enumerate(tree):
            items.extend(tree_leaves(val, f"{prefix}.{i}" if prefix else str(i)))
    else:
        raise TypeError(f"unexpected node {type(tree).__name__} at {prefix!r}")
    return items


def tree_map(fn, tree):
    """Rebuild a tree, applying ``fn(name, tensor)`` to every leaf."""

    def walk(node, prefix):
        if isinstance(node, Tensor):
            return fn(prefix, node)
        if isinstance(node, dict):
            return {
                k: walk(v, f"{prefix}.{k}" if prefix else str(k)) for k, v in node.items()
            }
        if isinstance(node, (list, tuple)):
            out = [walk(v, f"{prefix}.{i}" if prefix else str(i)) for i, v in enumerate(node)]
            return out if isinstance(node, list) else tuple(out)
        raise TypeError(f"unexpected node {type(node).__name__} at {prefix!r}")

    return walk(tree, "")


# ---- loss over a batch ---------------------------------------------------------


def batch_loss(
    samples: list[Sample],
    params: dict,
    cfg: PipelineConfig,
    weights: LossWeights = LossWeights(),
):
    """Mean set loss across samples; returns (loss Tensor, mean parts dict)."""
    total = None
    parts_sum = {"cls": 0.0, "l1": 0.0, "giou": 0.0, "total": 0.0}
    for sample in samples:
        pred = cred_detr_forward(sample.image, params, cfg)
        result = set_loss(pred, sample.truth, weights)
        total = result.loss if total is None else total + result.loss
        for k in parts_sum:
            parts_sum[k] += result.parts[k]
    n = len(samples)
    if n == 0:
        raise ValueError("batch_loss over an empty batch")
    return total * (1.0 / n), {k: v / n for k, v in parts_sum.items()}


# ---- one optimizer step ---------------------------------------------------------


def lr_at(train: TrainConfig, step: int, total_steps: int | None = None) -> float:
    """Learning rate for a 0-based ``step`` under the configured schedule."""
    if train.schedule == "constant":
        return train.lr
    total = train.steps if total_steps is None else total_steps
    frac = step / max(total, 1)
    floor = train.final_lr_factor
    return train.lr * (floor + (1.0 - floor) * 0.5 * (1.0 + math.cos(math.pi * frac)))


def train_step(
    batch: list[Sample],
    params: dict,
    velocity: dict | None,
    cfg: PipelineConfig,
    weights: LossWeights = LossWeights(),
    lr: float | None = None,
):
    """One full-batch momentum-SGD update.

    Returns ``(new_params, new_velocity, metrics)``. ``velocity=None`` starts
    from rest. ``lr`` overrides ``cfg.train.lr`` (schedules are applied by the
    caller); with a rate of 0 the returned parameters equal the inputs exactly.
    """
    leaves = tree_leaves(params)
    for _, t in leaves:
        t.grad = None  # a reused tree must not accumulate across calls
    try:
        loss, parts = batch_loss(batch, params, cfg, weights)
        loss.backward()
    except NonFiniteError as err:
        raise TrainingDivergedError(f"non-finite forward/backward: {err}") from err

    grads = {
        name: (t.grad if t.grad is not None else np.zeros_like(t.data))
        for name, t in leaves
    }
    for g in grads.values():
        if not np.all(np.isfinite(g)):
            raise TrainingDivergedError("non-finite gradient")

    grad_norm = float(np.sqrt(sum(float((g * g).sum()) for g in grads.values())))
    clip = cfg.train.clip_norm
    if clip is not None and grad_norm > clip > 0:
        scale = clip / grad_norm
        grads = {name: g * scale for name, g in grads.items()}

    mu = cfg.train.momentum
    if lr is None:
        lr = cfg.train.lr
    if velocity is None:
        velocity = {name: np.zeros_like(t.data) for name, t in leaves}
    new_velocity = {name: mu * velocity[name] + grads[name] for name, _ in leaves}
    new_params = tree_map(
        lambda name, t: Tensor(t.data - lr * new_velocity[name], requires_grad=True),
        params,
    )
    metrics = dict(parts)
    metrics["grad_norm"] = grad_norm
    metrics["lr"] = lr
    return new_params, new_velocity, metrics


# ---- evaluation ------------------------------------------------------------------


def decode_prediction(pred) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Per-query (label, score, box) with the no-object column stripped."""
    logits = pred.class_logits.data
    z = logits - logits.max(axis=1, keepdims=True)
    probs = np.exp(z) / np.exp(z).sum(axis=1, keepdims=True)
    labels = probs.argmax(axis=1)
    scores = probs[np.arange(len(labels)), labels]
    return labels, scores, pred.boxes.data


def eval_recall(
    samples: list[Sample],
    params: dict,
    cfg: PipelineConfig,
    iou_threshold: float = 0.5,
) -> dict:
    """Fraction of ground-truth boxes hit by a same-class query at IoU >= t."""
    from .matching import iou_matrix_np

    hits = 0
    total = 0
    with no_grad():
        for sample in samples:
            if len(sample.truth) == 0:
                continue
            pred = cred_detr_forward(sample.image, params, cfg)
            labels, _, boxes = decode_prediction(pred)
            keep = labels < pred.num_classes
            total += len(sample.truth)
            if not keep.any():
                continue
            ious = iou_matrix_np(boxes[keep], sample.truth.boxes)
            same = labels[keep][:, None] == sample.truth.labels[None, :]
            hits += int((((ious >= iou_threshold) & same).any(axis=0)).sum())
    return {"recall": hits / total if total else 0.0, "gt_boxes": total, "hits": hits}


# ---- driver -----------------------------------------------------------------------


def train_toy(
    cfg: PipelineConfig,
    steps: int | None = None,
    metrics_path=None,
    log=None,
):
    """Train on the seeded shapes set; returns (params, history).

    ``history`` holds one metrics dict per step (loss parts and grad norm).
    Metrics are also appended as JSON lines when ``metrics_path`` is given.
    """
    steps = cfg.train.steps if steps is None else steps
    h, w = cfg.image
    samples = shapes_dataset(
        cfg.seed, cfg.train.dataset_size, h, w, cfg.detr.num_classes,
        min_size=cfg.train.min_size,
    )
    params = init_params(cfg)
    velocity = None
    history = []
    if metrics_path:
        Path(metrics_path).parent.mkdir(parents=True, exist_ok=True)
    sink = Path(metrics_path).open("a") if metrics_path else None
    try:
        for step in range(steps):
            params, velocity, metrics = train_step(
                samples, params, velocity, cfg, lr=lr_at(cfg.train, step, steps)
            )
            metrics["step"] = step
            history.append(metrics)
            if sink:
                sink.write(json.dumps(metrics) + "\n")
            if log and (step % cfg.train.log_every == 0 or step == steps - 1):
                log(
                    f"step {step:4d}  loss {metrics['total']:.4f}  "
                    f"cls {metrics['cls']:.4f}  l1 {metrics['l1']:.4f}  "
                    f"giou {metrics['giou']:.4f}  |g| {metrics['grad_norm']:.3f}"
                )
    finally:
        if sink:
            sink.close()
    return params, history


# ---- checkpoints -------------------------------------------------------------------


def save_checkpoint(params: dict, out_dir, extra: dict | None = None) -> None:
    """One CRT1 file per leaf plus a manifest naming them in tree order."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    names = []
    for name, tensor in tree_leaves(params):
        fname = name.replace(".", "__") + ".crt1"
        write_tensor(out / fname, tensor.data)
        names.append(name)
    manifest = {"leaves": names}
    if extra:
        manifest.update(extra)
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")


def load_checkpoint(params: dict, in_dir) -> dict:
    """Restore leaves into a params tree of the same structure."""
    root = Path(in_dir)
    manifest = json.loads((root / "manifest.json").read_text())
    stored = set(manifest["leaves"])
    have = {name for name, _ in tree_leaves(params)}
    if stored != have:
        missing = sorted(have - stored)[:3]
        surplus = sorted(stored - have)[:3]
        raise ValueError(
            f"checkpoint/model mismatch (missing {missing}, surplus {surplus})"
        )

    def restore(name, tensor):
        arr = read_tensor(root / (name.replace(".", "__") + ".crt1"))
        if arr.shape != tensor.data.shape:
            raise ValueError(
                f"{name}: checkpoint shape {arr.shape} vs model {tensor.data.shape}"
            )
        return Tensor(arr.astype(np.float64), requires_grad=True)

    return tree_map(restore, params)
