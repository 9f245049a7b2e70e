"""Named gradient checks covering every differentiable op and the full model."""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .config import PipelineConfig, DetrConfig, for_variant
from .cram import CramConfig, cram_forward, cram_init_params
from .data import shapes_sample, seeded_pyramid
from .detr import cred_detr_forward, init_params
from .gradcheck import GradCheckReport, grad_check
from .matching import BoxSet, LossWeights, Prediction, hungarian_match, match_cost, giou, set_loss
from .osma import OsmaConfig, osma_forward, osma_init
from .tensor import Tensor
from .train import tree_leaves, tree_map


def _proj(rng, shape):
    """Fixed random projection making each output coordinate's grad distinct."""
    r = Tensor(rng.normal(size=shape))
    return lambda out: T.sum_(out * r)


def op_checks(seed: int = 0, h: float = 1e-5, tol: float = 1e-4):
    """(name, runner) pairs; each runner returns a GradCheckReport."""
    rng = np.random.default_rng(seed)

    def u(*shape, lo=-2.0, hi=2.0):
        return Tensor(rng.uniform(lo, hi, size=shape), requires_grad=True)

    def away_from(x, point, margin):
        # push values off a non-differentiable point before building the leaf
        d = x.data.copy()
        near = np.abs(d - point) < margin
        d[near] = point + margin
        return Tensor(d, requires_grad=True)

    checks = []

    def add(name, fn, leaves):
        checks.append((name, lambda: grad_check(fn, leaves, h=h, tol=tol)))

    # elementwise arithmetic
    a, b = u(3, 4), u(3, 4)
    p = _proj(rng, (3, 4))
    add("add", lambda x, y: p(x + y), [a, b])
    add("sub", lambda x, y: p(x - y), [a, b])
    add("mul", lambda x, y: p(x * y), [a, b])
    bz = Tensor(np.where(np.abs(b.data) < 0.2, 0.5, b.data), requires_grad=True)
    add("div", lambda x, y: p(x / y), [a, bz])
    add("neg_scalar_mix", lambda x: p(-(2.0 * x) + 0.5), [a])
    add("exp", lambda x: p(T.exp(x)), [a])
    add("log", lambda x: p(T.log(x)), [u(3, 4, lo=0.2, hi=3.0)])
    add("abs", lambda x: p(T.absolute(x)), [away_from(u(3, 4), 0.0, 0.1)])

    gap = Tensor(a.data + np.where(np.abs(a.data - b.data) < 0.2, 0.5, 0.0))
    gap = Tensor(gap.data, requires_grad=True)
    add("maximum", lambda x, y: p(T.maximum(x, y)), [gap, b])
    add("minimum", lambda x, y: p(T.minimum(x, y)), [gap, b])
    add("relu", lambda x: p(T.relu(x)), [away_from(u(3, 4), 0.0, 0.1)])

    # activations and normalizers
    add("sigmoid", lambda x: p(T.sigmoid(x)), [u(3, 4)])
    add("silu", lambda x: p(T.silu(x)), [u(3, 4)])
    x_ln, g_ln, b_ln = u(4, 5), u(5, lo=0.5, hi=1.5), u(5, lo=-0.5, hi=0.5)
    p_ln = _proj(rng, (4, 5))
    add("layer_norm", lambda x, g, c: p_ln(T.layer_norm(x, 1, g, c)), [x_ln, g_ln, b_ln])
    p34 = _proj(rng, (3, 4))
    add("softmax", lambda x: p34(T.softmax(x, 1)), [u(3, 4)])
    add("log_softmax", lambda x: p34(T.log_softmax(x, 1)), [u(3, 4)])

    # reductions and plumbing
    p4 = _proj(rng, (4,))
    add("sum_axis", lambda x: p4(T.sum_(x, axis=0)), [u(3, 4)])
    add("mean", lambda x: T.mean(x), [u(3, 4)])
    add("reshape_transpose", lambda x: p(T.transpose(T.reshape(x, (4, 3)), (1, 0))), [u(3, 4)])
    p24 = _proj(rng, (2, 4))
    add("take_slice", lambda x: p24(x[1:3]), [u(5, 4)])
    idx = np.array([0, 2, 2, 4])
    p44 = _proj(rng, (4, 4))
    add("take_gather", lambda x: p44(x[idx]), [u(5, 4)])
    pc = _proj(rng, (3, 7))
    add("concat", lambda x, y: pc(T.concat([x, y], axis=1)), [u(3, 3), u(3, 4)])

    # contractions
    p32 = _proj(rng, (3, 2))
    add("matmul_2d", lambda x, y: p32(T.matmul(x, y)), [u(3, 4), u(4, 2)])
    p232 = _proj(rng, (2, 3, 2))
    add("matmul_batched", lambda x, y: p232(T.matmul(x, y)), [u(2, 3, 4), u(2, 4, 2)])
    p254 = _proj(rng, (2, 5, 4))
    add(
        "axis_linear",
        lambda x, w, c: p254(T.axis_linear(x, 1, w, c)),
        [u(2, 3, 4), u(3, 5), u(5)],
    )

    # spatial ops
    p286 = _proj(rng, (2, 8, 6))
    add("bilinear_up", lambda x: p286(T.bilinear_resize(x, 8, 6)), [u(2, 5, 7)])
    p234 = _proj(rng, (2, 3, 4))
    add("bilinear_down", lambda x: p234(T.bilinear_resize(x, 3, 4)), [u(2, 8, 6)])
    ps2d = _proj(rng, (12, 2, 3))
    add("space_to_depth", lambda x: ps2d(T.space_to_depth(x, 2)), [u(3, 4, 6)])
    pd2s = _proj(rng, (3, 4, 6))
    add("depth_to_space", lambda x: pd2s(T.depth_to_space(x, 2)), [u(12, 2, 3)])
    pgp = _proj(rng, (6, 4, 3))
    add("grid_partition", lambda x: pgp(T.grid_partition(x, 2)), [u(3, 4, 6)])
    pgm = _proj(rng, (3, 4, 6))
    add("grid_merge", lambda q: pgm(T.grid_merge(q, 4, 6, 2)), [u(6, 4, 3)])

    # box geometry: boxes kept overlapping, no coinciding edges (max/min kinks)
    pa = Tensor(np.array([[0.5, 0.5, 0.4, 0.4], [0.3, 0.6, 0.2, 0.3]]), requires_grad=True)
    pb = Tensor(np.array([[0.55, 0.45, 0.33, 0.53], [0.7, 0.3, 0.4, 0.2]]), requires_grad=True)
    pg = _proj(rng, (2,))
    add("giou", lambda x, y: pg(giou(x, y)), [pa, pb])

    return checks


def module_checks(seed: int = 0, h: float = 1e-5, tol: float = 1e-4):
    """Gradient checks through whole submodules (mixer, refiner, set loss)."""
    rng = np.random.default_rng(seed + 1)
    checks = []

    ocfg = OsmaConfig(n_levels=2, base_cell=1, out_cells=4, proj_dim=5, depth=2)
    pyr = seeded_pyramid(seed, channels=3, coarse_h=2, coarse_w=3, n_levels=2)
    oparams = osma_init(ocfg, 3, np.random.default_rng(seed + 2))
    onames = [n for n, _ in tree_leaves(oparams)]
    oproj = _proj(rng, (3, 4, 6))

    def osma_loss(*leaves):
        lookup = dict(zip(onames, leaves))
        pp = tree_map(lambda name, t: lookup[name], oparams)
        return oproj(osma_forward(pyr, pp, ocfg))

    checks.append(
        (
            "osma_forward",
            lambda: grad_check(
                osma_loss, [t for _, t in tree_leaves(oparams)], h=h, tol=tol
            ),
        )
    )

    ccfg = CramConfig(source_level=1, num_layers=2)
    cpyr = seeded_pyramid(seed + 3, channels=3, coarse_h=2, coarse_w=2, n_levels=2)
    cparams = cram_init_params(ccfg, 3, np.random.default_rng(seed + 4))
    enc_maps = [
        Tensor(rng.normal(size=(3, 2, 2))),
        Tensor(rng.normal(size=(3, 2, 2))),
    ]
    cnames = [n for n, _ in tree_leaves(cparams)]
    cproj = _proj(rng, (3, 4, 4))

    def cram_loss(*leaves):
        lookup = dict(zip(cnames, leaves))
        pp = tree_map(lambda name, t: lookup[name], cparams)
        return cproj(cram_forward(cpyr, enc_maps, pp, ccfg))

    checks.append(
        (
            "cram_forward",
            lambda: grad_check(
                cram_loss, [t for _, t in tree_leaves(cparams)], h=h, tol=tol
            ),
        )
    )

    logits = Tensor(rng.normal(size=(4, 3)), requires_grad=True)
    raw = Tensor(rng.normal(size=(4, 4)), requires_grad=True)
    gt = BoxSet(
        boxes=np.array([[0.4, 0.4, 0.3, 0.3], [0.7, 0.6, 0.2, 0.4]]),
        labels=np.array([0, 1]),
    )
    weights = LossWeights()
    fixed = hungarian_match(
        match_cost(Prediction(class_logits=logits, boxes=T.sigmoid(raw)), gt, weights)
    )

    def loss_fn(lg, rw):
        pred = Prediction(class_logits=lg, boxes=T.sigmoid(rw))
        return set_loss(pred, gt, weights, assignment=fixed).loss

    checks.append(
        ("set_loss", lambda: grad_check(loss_fn, [logits, raw], h=h, tol=tol))
    )
    return checks


def pipeline_check(
    seed: int = 0,
    h: float = 1e-5,
    tol: float = 1e-4,
    max_coords_per_leaf: int = 2,
) -> GradCheckReport:
    """End-to-end check: image -> predictions -> matched loss, all parameters.

    Runs the fine-map variant at d_model=8 with 3 queries on a 64x64 image;
    the matching is frozen so finite differences probe a fixed loss surface.
    """
    cfg = for_variant(
        "default",
        PipelineConfig(
            detr=DetrConfig(
                d_model=8, heads=2, enc_layers=2, dec_layers=2, d_ff=16,
                num_queries=3, num_classes=2,
            ),
            osma=OsmaConfig(n_levels=3, base_cell=1, out_cells=1, proj_dim=5, depth=2),
            cram=CramConfig(source_level=1, num_layers=2),
            seed=seed,
            image=(64, 64),
        ),
    )
    sample = shapes_sample(seed, 0, 64, 64, cfg.detr.num_classes)
    params = init_params(cfg)
    weights = LossWeights()
    pred0 = cred_detr_forward(sample.image, params, cfg)
    fixed = hungarian_match(match_cost(pred0, sample.truth, weights))
    names = [n for n, _ in tree_leaves(params)]

    def loss_fn(*leaves):
        lookup = dict(zip(names, leaves))
        pp = tree_map(lambda name, t: lookup[name], params)
        pred = cred_detr_forward(sample.image, pp, cfg)
        return set_loss(pred, sample.truth, weights, assignment=fixed).loss

    return grad_check(
        loss_fn,
        [t for _, t in tree_leaves(params)],
        h=h,
        tol=tol,
        max_coords_per_leaf=max_coords_per_leaf,
        seed=seed,
    )
