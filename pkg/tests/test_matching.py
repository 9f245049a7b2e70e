"""Box geometry, bipartite assignment, and the matched set loss."""

import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cred.matching import (
    BoxSet,
    LossWeights,
    Prediction,
    giou,
    giou_matrix_np,
    hungarian_match,
    iou_matrix_np,
    match_cost,
    set_loss,
)
from cred.tensor import ShapeError, Tensor


def brute_force_cost(cost: np.ndarray) -> float:
    nq, ng = cost.shape
    best = np.inf
    for perm in itertools.permutations(range(nq), ng):
        best = min(best, sum(cost[q, t] for t, q in enumerate(perm)))
    return best


def random_boxes(rng, n):
    wh = rng.uniform(0.05, 0.4, size=(n, 2))
    cxy = rng.uniform(0.25, 0.75, size=(n, 2))
    return np.concatenate([cxy, wh], axis=1)


# ---- giou ----------------------------------------------------------------------


def test_giou_identical_boxes_is_one():
    box = Tensor(np.array([0.5, 0.5, 0.2, 0.3]))
    assert giou(box, box).item() == pytest.approx(1.0)


def test_giou_disjoint_unit_boxes_hand_value():
    # Unit squares spanning x in [0,1] and [2,3]: no overlap, union 2, hull 3.
    a = Tensor(np.array([0.5, 0.5, 1.0, 1.0]))
    b = Tensor(np.array([2.5, 0.5, 1.0, 1.0]))
    assert giou(a, b).item() == pytest.approx(-1.0 / 3.0)


def test_giou_never_exceeds_iou_on_random_pairs():
    rng = np.random.default_rng(0)
    a, b = random_boxes(rng, 1000), random_boxes(rng, 1000)
    g = np.array(
        [giou(Tensor(a[i]), Tensor(b[i])).item() for i in range(0, 1000, 25)]
    )
    # Paired IoU via the matrix helper's diagonal on the same subsample.
    idx = np.arange(0, 1000, 25)
    i = iou_matrix_np(a[idx], b[idx]).diagonal()
    assert (g <= i + 1e-12).all()
    assert (g > -1.0).all() and (g <= 1.0).all()


def test_giou_matrix_agrees_with_pairwise():
    rng = np.random.default_rng(1)
    a, b = random_boxes(rng, 4), random_boxes(rng, 3)
    mat = giou_matrix_np(a, b)
    for i in range(4):
        for j in range(3):
            assert mat[i, j] == pytest.approx(giou(Tensor(a[i]), Tensor(b[j])).item())


# ---- hungarian ---------------------------------------------------------------------


def test_hungarian_hand_instance():
    cost = np.array([[4.0, 1.0], [2.0, 0.0], [3.0, 5.0]])
    assign = hungarian_match(cost)
    # Optimal: target 0 -> query 1 (2.0), target 1 -> query 0 (1.0).
    np.testing.assert_array_equal(assign, [1, 0])


def test_hungarian_matches_brute_force_on_random_instances():
    rng = np.random.default_rng(2)
    for _ in range(300):
        nq = int(rng.integers(1, 7))
        ng = int(rng.integers(0, nq + 1))
        cost = rng.normal(size=(nq, ng))
        assign = hungarian_match(cost)
        assert len(set(assign.tolist())) == ng
        total = cost[assign, np.arange(ng)].sum() if ng else 0.0
        assert total == pytest.approx(brute_force_cost(cost) if ng else 0.0)


def test_hungarian_tie_breaks_toward_lowest_query():
    cost = np.zeros((4, 2))
    np.testing.assert_array_equal(hungarian_match(cost), [0, 1])


def test_hungarian_rejects_bad_inputs():
    with pytest.raises(ShapeError):
        hungarian_match(np.zeros((2, 3)))
    with pytest.raises(ValueError):
        hungarian_match(np.array([[np.inf]]))


@given(seed=st.integers(0, 10_000))
@settings(max_examples=60, deadline=None)
def test_hungarian_optimality_property(seed):
    rng = np.random.default_rng(seed)
    nq = int(rng.integers(1, 6))
    ng = int(rng.integers(1, nq + 1))
    cost = rng.uniform(-5, 5, size=(nq, ng))
    assign = hungarian_match(cost)
    assert cost[assign, np.arange(ng)].sum() == pytest.approx(brute_force_cost(cost))


# ---- box containers ------------------------------------------------------------------


def test_boxset_validates_geometry():
    good = BoxSet(boxes=np.array([[0.5, 0.5, 0.2, 0.2]]), labels=np.array([0]))
    assert len(good) == 1
    with pytest.raises(ValueError):
        BoxSet(boxes=np.array([[0.5, 0.5, 0.0, 0.2]]), labels=np.array([0]))
    with pytest.raises(ValueError):
        BoxSet(boxes=np.array([[1.5, 0.5, 0.2, 0.2]]), labels=np.array([0]))
    with pytest.raises(ValueError):
        BoxSet(boxes=np.array([[0.5, 0.5, 0.2, 0.2]]), labels=np.array([-1]))


def make_prediction(rng, nq=6, k=3):
    logits = Tensor(rng.normal(size=(nq, k + 1)))
    boxes = Tensor(rng.uniform(0.2, 0.8, size=(nq, 4)))
    return Prediction(class_logits=logits, boxes=boxes)


def test_prediction_box_range_enforced():
    with pytest.raises(ValueError):
        Prediction(
            class_logits=Tensor(np.zeros((2, 3))),
            boxes=Tensor(np.array([[0.5, 0.5, 0.2, 1.5], [0.5] * 4])),
        )


# ---- set loss --------------------------------------------------------------------------


def test_set_loss_empty_targets_is_pure_no_object_ce():
    rng = np.random.default_rng(3)
    pred = make_prediction(rng)
    empty = BoxSet(boxes=np.zeros((0, 4)), labels=np.zeros(0, dtype=np.int64))
    result = set_loss(pred, empty)
    assert result.parts["l1"] == 0.0 and result.parts["giou"] == 0.0
    assert result.loss.item() > 0.0
    assert len(result.assignment) == 0


def test_set_loss_label_out_of_range_rejected():
    rng = np.random.default_rng(4)
    pred = make_prediction(rng, k=3)
    bad = BoxSet(boxes=np.array([[0.5, 0.5, 0.2, 0.2]]), labels=np.array([3]))
    with pytest.raises(ShapeError):
        set_loss(pred, bad)


def test_perfect_prediction_beats_any_corruption():
    rng = np.random.default_rng(5)
    k = 3
    for _ in range(20):
        gt = BoxSet(boxes=random_boxes(rng, 3), labels=rng.integers(0, k, size=3))
        logits = np.full((6, k + 1), -6.0)
        logits[:, k] = 6.0
        logits[np.arange(3), gt.labels] = 6.0
        logits[np.arange(3), k] = -6.0
        boxes = np.tile(np.array([0.5, 0.5, 0.1, 0.1]), (6, 1))
        boxes[:3] = gt.boxes
        perfect = Prediction(class_logits=Tensor(logits), boxes=Tensor(boxes))
        corrupt_boxes = boxes.copy()
        corrupt_boxes[:3, :2] = np.clip(
            corrupt_boxes[:3, :2] + rng.uniform(0.05, 0.2, size=(3, 2)), 0, 1
        )
        corrupted = Prediction(class_logits=Tensor(logits), boxes=Tensor(corrupt_boxes))
        assert set_loss(perfect, gt).loss.item() < set_loss(corrupted, gt).loss.item()


def test_fixed_assignment_pins_the_matching():
    rng = np.random.default_rng(6)
    pred = make_prediction(rng)
    gt = BoxSet(boxes=random_boxes(rng, 2), labels=np.array([0, 1]))
    forced = np.array([5, 4])
    result = set_loss(pred, gt, assignment=forced)
    np.testing.assert_array_equal(result.assignment, forced)


def test_match_cost_prefers_correct_class_and_location():
    k = 2
    gt = BoxSet(boxes=np.array([[0.3, 0.3, 0.2, 0.2]]), labels=np.array([1]))
    logits = np.zeros((2, k + 1))
    logits[0, 1] = 4.0  # query 0 confident in the right class
    boxes = np.array([[0.3, 0.3, 0.2, 0.2], [0.7, 0.7, 0.2, 0.2]])
    pred = Prediction(class_logits=Tensor(logits), boxes=Tensor(boxes))
    cost = match_cost(pred, gt, LossWeights())
    assert cost[0, 0] < cost[1, 0]
    np.testing.assert_array_equal(hungarian_match(cost), [0])


def test_loss_parts_compose_total():
    rng = np.random.default_rng(7)
    pred = make_prediction(rng)
    gt = BoxSet(boxes=random_boxes(rng, 2), labels=np.array([0, 2]))
    w = LossWeights()
    result = set_loss(pred, gt, w)
    composed = w.cls * result.parts["cls"] + w.l1 * result.parts["l1"]
    composed += w.giou * result.parts["giou"]
    assert result.parts["total"] == pytest.approx(composed)
    assert result.loss.item() == pytest.approx(composed)
