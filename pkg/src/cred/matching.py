"""Bipartite box matching and the detection set loss.

Boxes are ``(cx, cy, w, h)`` in [0, 1] image-normalized units everywhere.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tensor import ShapeError, Tensor, absolute, log_softmax, maximum, minimum, sum_


@dataclass(frozen=True)
class BoxSet:
    """Ground-truth boxes ``[n, 4]`` with integer labels ``[n]``."""

    boxes: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        boxes = np.asarray(self.boxes, dtype=np.float64).reshape(-1, 4)
        labels = np.asarray(self.labels, dtype=np.int64).reshape(-1)
        object.__setattr__(self, "boxes", boxes)
        object.__setattr__(self, "labels", labels)
        if boxes.shape[0] != labels.shape[0]:
            raise ShapeError(
                f"{boxes.shape[0]} boxes but {labels.shape[0]} labels"
            )
        if boxes.size:
            cx, cy, w, h = boxes.T
            if (w <= 0).any() or (h <= 0).any() or (w > 1).any() or (h > 1).any():
                raise ValueError("box widths/heights must lie in (0, 1]")
            if (cx < 0).any() or (cx > 1).any() or (cy < 0).any() or (cy > 1).any():
                raise ValueError("box centers must lie in [0, 1]")
        if labels.size and labels.min() < 0:
            raise ValueError("labels must be non-negative")

    def __len__(self) -> int:
        return self.boxes.shape[0]


@dataclass(frozen=True)
class Prediction:
    """Per-query classification logits ``[N_q, K+1]`` and boxes ``[N_q, 4]``.

    Column K of the logits is the no-object class.
    """

    class_logits: Tensor
    boxes: Tensor

    def __post_init__(self):
        if self.class_logits.ndim != 2 or self.boxes.ndim != 2:
            raise ShapeError("Prediction fields must be rank 2")
        if self.boxes.shape != (self.class_logits.shape[0], 4):
            raise ShapeError(
                f"boxes {self.boxes.shape} inconsistent with logits "
                f"{self.class_logits.shape}"
            )
        b = self.boxes.data
        if b.size and (b.min() <= 0.0 or b.max() >= 1.0):
            raise ValueError(
                f"boxes must lie strictly inside (0,1); got range "
                f"[{b.min():.4g}, {b.max():.4g}]"
            )

    @property
    def num_queries(self) -> int:
        return self.class_logits.shape[0]

    @property
    def num_classes(self) -> int:
        return self.class_logits.shape[1] - 1


@dataclass(frozen=True)
class LossWeights:
    cls: float = 1.0
    l1: float = 5.0
    giou: float = 2.0
    no_object: float = 0.1


def _corners(boxes: Tensor):
    cx, cy, w, h = (boxes[:, i] for i in range(4))
    half_w, half_h = w * 0.5, h * 0.5
    return cx - half_w, cy - half_h, cx + half_w, cy + half_h, w * h


def giou(a: Tensor, b: Tensor) -> Tensor:
    """Generalized IoU of paired boxes, differentiable; ``[M, 4] x [M, 4] -> [M]``.

    Rank-1 inputs are treated as a single pair and return a scalar. Values lie
    in (-1, 1]: 1 for identical boxes, negative when the enclosing hull is
    dominated by empty space.
    """
    squeeze = a.ndim == 1
    if squeeze:
        a, b = a.reshape(1, 4), b.reshape(1, 4)
    if a.ndim != 2 or a.shape[1] != 4 or a.shape != b.shape:
        raise ShapeError(f"giou: expected matching [M, 4] boxes, got {a.shape} and {b.shape}")
    ax0, ay0, ax1, ay1, area_a = _corners(a)
    bx0, by0, bx1, by1, area_b = _corners(b)
    iw = maximum(minimum(ax1, bx1) - maximum(ax0, bx0), 0.0)
    ih = maximum(minimum(ay1, by1) - maximum(ay0, by0), 0.0)
    inter = iw * ih
    union = area_a + area_b - inter
    hull = (maximum(ax1, bx1) - minimum(ax0, bx0)) * (
        maximum(ay1, by1) - minimum(ay0, by0)
    )
    out = inter / union - (hull - union) / hull
    return out.reshape(()) if squeeze else out


def giou_matrix_np(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Pairwise GIoU in plain numpy, ``[N, 4] x [M, 4] -> [N, M]``."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    ac = np.stack([a[:, 0] - a[:, 2] / 2, a[:, 1] - a[:, 3] / 2,
                   a[:, 0] + a[:, 2] / 2, a[:, 1] + a[:, 3] / 2], axis=1)
    bc = np.stack([b[:, 0] - b[:, 2] / 2, b[:, 1] - b[:, 3] / 2,
                   b[:, 0] + b[:, 2] / 2, b[:, 1] + b[:, 3] / 2], axis=1)
    iw = np.clip(
        np.minimum(ac[:, None, 2], bc[None, :, 2]) - np.maximum(ac[:, None, 0], bc[None, :, 0]),
        0.0, None,
    )
    ih = np.clip(
        np.minimum(ac[:, None, 3], bc[None, :, 3]) - np.maximum(ac[:, None, 1], bc[None, :, 1]),
        0.0, None,
    )
    inter = iw * ih
    area_a = (a[:, 2] * a[:, 3])[:, None]
    area_b = (b[:, 2] * b[:, 3])[None, :]
    union = area_a + area_b - inter
    hull_w = np.maximum(ac[:, None, 2], bc[None, :, 2]) - np.minimum(ac[:, None, 0], bc[None, :, 0])
    hull_h = np.maximum(ac[:, None, 3], bc[None, :, 3]) - np.minimum(ac[:, None, 1], bc[None, :, 1])
    hull = hull_w * hull_h
    return inter / union - (hull - union) / hull


def iou_matrix_np(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Pairwise plain IoU, same shapes as giou_matrix_np."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    iw = np.clip(
        np.minimum(a[:, None, 0] + a[:, None, 2] / 2, b[None, :, 0] + b[None, :, 2] / 2)
        - np.maximum(a[:, None, 0] - a[:, None, 2] / 2, b[None, :, 0] - b[None, :, 2] / 2),
        0.0, None,
    )
    ih = np.clip(
        np.minimum(a[:, None, 1] + a[:, None, 3] / 2, b[None, :, 1] + b[None, :, 3] / 2)
        - np.maximum(a[:, None, 1] - a[:, None, 3] / 2, b[None, :, 1] - b[None, :, 3] / 2),
        0.0, None,
    )
    inter = iw * ih
    union = (a[:, 2] * a[:, 3])[:, None] + (b[:, 2] * b[:, 3])[None, :] - inter
    return inter / union


def hungarian_match(cost) -> np.ndarray:
    """Minimum-cost injective assignment of columns (targets) to rows (queries).

    ``cost`` is ``[N_q, n_gt]`` with n_gt <= N_q and finite entries. Returns an
    int array ``[n_gt]`` mapping each target to its query. Exact optimum via
    shortest augmenting paths with potentials; ties resolve toward the lowest
    query index, so the result is deterministic.
    """
    c = cost.data if isinstance(cost, Tensor) else np.asarray(cost, dtype=np.float64)
    if c.ndim != 2:
        raise ShapeError(f"hungarian_match: cost must be rank 2, got {c.shape}")
    nq, ng = c.shape
    if ng == 0:
        return np.zeros(0, dtype=np.int64)
    if ng > nq:
        raise ShapeError(f"hungarian_match: {ng} targets exceed {nq} queries")
    if not np.all(np.isfinite(c)):
        raise ValueError("hungarian_match: cost matrix must be finite")

    # Dual potentials u (targets) and v (queries); owner[j] is the target
    # occupying query j, with index 0 reserved for the virtual start column.
    u = np.zeros(ng + 1)
    v = np.zeros(nq + 1)
    owner = np.zeros(nq + 1, dtype=np.int64)
    for target in range(1, ng + 1):
        owner[0] = target
        j0 = 0
        min_slack = np.full(nq + 1, np.inf)
        origin = np.zeros(nq + 1, dtype=np.int64)
        used = np.zeros(nq + 1, dtype=bool)
        while True:
            used[j0] = True
            i0 = owner[j0]
            slack = c[:, i0 - 1] - u[i0] - v[1:]
            better = ~used[1:] & (slack < min_slack[1:])
            min_slack[1:][better] = slack[better]
            origin[1:][better] = j0
            masked = np.where(used[1:], np.inf, min_slack[1:])
            j1 = int(np.argmin(masked)) + 1
            delta = masked[j1 - 1]
            u[owner[used]] += delta
            v[used] -= delta
            min_slack[~used] -= delta
            j0 = j1
            if owner[j0] == 0:
                break
        while j0:
            j_prev = origin[j0]
            owner[j0] = owner[j_prev]
            j0 = j_prev

    result = np.full(ng, -1, dtype=np.int64)
    for j in range(1, nq + 1):
        if owner[j] > 0:
            result[owner[j] - 1] = j - 1
    return result


def match_cost(pred: Prediction, gt: BoxSet, weights: LossWeights) -> np.ndarray:
    """Query-to-target cost: -p(class) plus weighted L1 and GIoU box terms."""
    if len(gt) == 0:
        return np.zeros((pred.num_queries, 0))
    logits = pred.class_logits.data
    z = logits - logits.max(axis=1, keepdims=True)
    probs = np.exp(z) / np.exp(z).sum(axis=1, keepdims=True)
    boxes = pred.boxes.data
    cost_cls = -probs[:, gt.labels]
    cost_l1 = np.abs(boxes[:, None, :] - gt.boxes[None, :, :]).sum(axis=2)
    cost_giou = -giou_matrix_np(boxes, gt.boxes)
    return weights.cls * cost_cls + weights.l1 * cost_l1 + weights.giou * cost_giou


@dataclass
class SetLossResult:
    loss: Tensor
    parts: dict = field(default_factory=dict)
    assignment: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))


def set_loss(
    pred: Prediction,
    gt: BoxSet,
    weights: LossWeights = LossWeights(),
    assignment: np.ndarray | None = None,
) -> SetLossResult:
    """Matched detection loss: weighted CE over all queries plus L1 and GIoU
    terms on matched pairs, normalized by the target count.

    Unmatched queries are supervised toward the no-object class with weight
    ``weights.no_object``. Passing ``assignment`` pins the matching (useful for
    derivative checks); otherwise it is recomputed from the current costs.
    """
    nq = pred.num_queries
    kp1 = pred.class_logits.shape[1]
    if len(gt) and int(gt.labels.max()) >= kp1 - 1:
        raise ShapeError(
            f"label {int(gt.labels.max())} out of range for {kp1 - 1} classes"
        )
    if assignment is None:
        assignment = hungarian_match(match_cost(pred, gt, weights))
    assignment = np.asarray(assignment, dtype=np.int64)

    targets = np.full(nq, kp1 - 1, dtype=np.int64)
    class_weight = np.full(nq, weights.no_object)
    if len(gt):
        targets[assignment] = gt.labels
        class_weight[assignment] = 1.0
    pick = np.zeros((nq, kp1))
    pick[np.arange(nq), targets] = class_weight
    log_probs = log_softmax(pred.class_logits, axis=1)
    ce = -sum_(log_probs * Tensor(pick)) * (1.0 / class_weight.sum())

    loss = weights.cls * ce
    parts = {"cls": ce.item(), "l1": 0.0, "giou": 0.0}
    if len(gt):
        matched = pred.boxes[assignment]
        gt_boxes = Tensor(gt.boxes)
        l1 = sum_(absolute(matched - gt_boxes)) * (1.0 / len(gt))
        giou_term = sum_(1.0 - giou(matched, gt_boxes)) * (1.0 / len(gt))
        parts["l1"] = l1.item()
        parts["giou"] = giou_term.item()
        loss = loss + weights.l1 * l1 + weights.giou * giou_term
    parts["total"] = loss.item()
    return SetLossResult(loss=loss, parts=parts, assignment=assignment)
