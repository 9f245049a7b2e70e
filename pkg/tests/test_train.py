"""Optimizer-step semantics, schedules, checkpoints, and short-run descent."""

import dataclasses
import json
import math

import numpy as np
import pytest

from cred.config import CramConfig, DetrConfig, OsmaConfig, PipelineConfig, TrainConfig
from cred.data import shapes_dataset
from cred.detr import init_params
from cred.tensor import Tensor
from cred.train import (
    TrainingDivergedError,
    batch_loss,
    load_checkpoint,
    lr_at,
    save_checkpoint,
    train_step,
    train_toy,
    tree_leaves,
    tree_map,
)


def micro_config(**train_kwargs) -> PipelineConfig:
    fields = dict(steps=3, lr=0.05, dataset_size=2, log_every=1)
    fields.update(train_kwargs)
    return PipelineConfig(
        detr=DetrConfig(d_model=8, heads=2, enc_layers=1, dec_layers=1,
                        d_ff=16, num_queries=5),
        osma=OsmaConfig(proj_dim=5),
        cram=CramConfig(source_level=2, num_layers=1),
        train=TrainConfig(**fields),
        seed=0,
    )


# ---- tree utilities -------------------------------------------------------------


def test_tree_leaves_names_and_order():
    tree = {"a": Tensor(np.zeros(2)), "b": [Tensor(np.ones(1)), {"w": Tensor(np.ones(3))}]}
    names = [name for name, _ in tree_leaves(tree)]
    assert names == ["a", "b.0", "b.1.w"]


def test_tree_map_rebuilds_structure():
    tree = {"x": [Tensor(np.ones(2)), Tensor(np.full(2, 3.0))]}
    doubled = tree_map(lambda name, t: Tensor(t.data * 2), tree)
    np.testing.assert_allclose(doubled["x"][1].data, 6.0)
    # The original is untouched.
    np.testing.assert_allclose(tree["x"][1].data, 3.0)


def test_tree_leaves_rejects_foreign_nodes():
    with pytest.raises(TypeError):
        tree_leaves({"a": object()})


# ---- learning-rate schedule -----------------------------------------------------


def test_lr_constant_schedule():
    train = TrainConfig(lr=0.3, schedule="constant")
    assert lr_at(train, 0) == lr_at(train, 99) == 0.3


def test_lr_cosine_endpoints_and_midpoint():
    train = TrainConfig(lr=0.1, schedule="cosine", final_lr_factor=0.1, steps=100)
    assert lr_at(train, 0) == pytest.approx(0.1)
    assert lr_at(train, 100) == pytest.approx(0.01)
    mid = 0.1 * (0.1 + 0.9 * 0.5)
    assert lr_at(train, 50) == pytest.approx(mid)


def test_lr_cosine_is_monotone_decreasing():
    train = TrainConfig(lr=0.1, schedule="cosine", final_lr_factor=0.0, steps=40)
    rates = [lr_at(train, s) for s in range(41)]
    assert all(a > b for a, b in zip(rates, rates[1:]))


def test_lr_respects_total_override():
    train = TrainConfig(lr=1.0, schedule="cosine", final_lr_factor=0.0, steps=100)
    assert lr_at(train, 10, total_steps=20) == pytest.approx(0.5)


# ---- train_step ------------------------------------------------------------------


def test_zero_lr_returns_identical_params():
    cfg = micro_config()
    data = shapes_dataset(0, 2, 64, 64, cfg.detr.num_classes)
    params = init_params(cfg)
    new_params, _, _ = train_step(data, params, None, cfg, lr=0.0)
    for (name, before), (_, after) in zip(tree_leaves(params), tree_leaves(new_params)):
        np.testing.assert_array_equal(before.data, after.data, err_msg=name)


def test_step_is_deterministic():
    cfg = micro_config()
    data = shapes_dataset(0, 2, 64, 64, cfg.detr.num_classes)

    def one(seed_params):
        p, v, m = train_step(data, seed_params, None, cfg)
        return p, m

    p1, m1 = one(init_params(cfg))
    p2, m2 = one(init_params(cfg))
    assert m1["total"] == m2["total"]
    for (_, a), (_, b) in zip(tree_leaves(p1), tree_leaves(p2)):
        np.testing.assert_array_equal(a.data, b.data)


def test_metrics_report_parts_and_lr():
    cfg = micro_config()
    data = shapes_dataset(0, 2, 64, 64, cfg.detr.num_classes)
    _, velocity, metrics = train_step(data, init_params(cfg), None, cfg, lr=0.02)
    assert set(metrics) >= {"cls", "l1", "giou", "total", "grad_norm", "lr"}
    assert metrics["lr"] == 0.02
    assert metrics["grad_norm"] > 0
    assert velocity  # started from rest, returned populated


def test_gradient_clipping_caps_update_size():
    cfg = micro_config(clip_norm=1e-6)
    data = shapes_dataset(0, 2, 64, 64, cfg.detr.num_classes)
    params = init_params(cfg)
    new_params, velocity, metrics = train_step(data, params, None, cfg, lr=1.0)
    vel_norm = math.sqrt(sum(float((v * v).sum()) for v in velocity.values()))
    assert vel_norm <= 1e-6 * 1.001
    assert metrics["grad_norm"] > vel_norm  # raw norm reported, update clipped


def test_momentum_accumulates_velocity():
    cfg = micro_config(clip_norm=None)
    data = shapes_dataset(0, 2, 64, 64, cfg.detr.num_classes)
    params = init_params(cfg)
    _, v1, _ = train_step(data, params, None, cfg, lr=0.0)
    _, v2, _ = train_step(data, params, v1, cfg, lr=0.0)
    # lr=0 keeps params frozen, so the gradient repeats: v2 = mu*v1 + g = (1+mu)*v1.
    mu = cfg.train.momentum
    for name in v1:
        np.testing.assert_allclose(v2[name], (1 + mu) * v1[name], rtol=1e-12)


def test_diverged_params_raise():
    cfg = micro_config()
    data = shapes_dataset(0, 1, 64, 64, cfg.detr.num_classes)
    # Blanket-huge weights overflow the attention score product mid-forward.
    bad = tree_map(
        lambda name, t: Tensor(np.full_like(t.data, 1e200), requires_grad=True),
        init_params(cfg),
    )
    with pytest.raises(TrainingDivergedError):
        train_step(data, bad, None, cfg)


def test_batch_loss_rejects_empty_batch():
    cfg = micro_config()
    with pytest.raises(ValueError):
        batch_loss([], init_params(cfg), cfg)


# ---- short end-to-end descent -----------------------------------------------------


def test_train_toy_descends_and_logs(tmp_path):
    cfg = micro_config(steps=8, lr=0.03)
    lines = []
    metrics_path = tmp_path / "metrics.jsonl"
    params, history = train_toy(cfg, metrics_path=metrics_path, log=lines.append)
    assert len(history) == 8
    assert history[-1]["total"] < history[0]["total"]
    assert lines and lines[0].startswith("step ")
    logged = [json.loads(l) for l in metrics_path.read_text().splitlines()]
    assert [m["step"] for m in logged] == list(range(8))
    assert logged[-1]["total"] == history[-1]["total"]


def test_train_toy_creates_metrics_directory(tmp_path):
    cfg = micro_config(steps=1)
    metrics_path = tmp_path / "not" / "yet" / "there" / "metrics.jsonl"
    train_toy(cfg, metrics_path=metrics_path)
    assert json.loads(metrics_path.read_text())["step"] == 0


def test_train_toy_runs_are_bitwise_identical():
    cfg = micro_config(steps=4)
    p1, h1 = train_toy(cfg)
    p2, h2 = train_toy(cfg)
    assert [m["total"] for m in h1] == [m["total"] for m in h2]
    for (_, a), (_, b) in zip(tree_leaves(p1), tree_leaves(p2)):
        np.testing.assert_array_equal(a.data, b.data)


def test_train_toy_seed_changes_trajectory():
    cfg = micro_config(steps=2)
    other = dataclasses.replace(cfg, seed=1)
    _, h1 = train_toy(cfg)
    _, h2 = train_toy(other)
    assert h1[0]["total"] != h2[0]["total"]


# ---- checkpoints -------------------------------------------------------------------


def test_checkpoint_round_trip(tmp_path):
    cfg = micro_config()
    params = init_params(cfg)
    save_checkpoint(params, tmp_path / "ckpt", extra={"step": 7})
    manifest = json.loads((tmp_path / "ckpt" / "manifest.json").read_text())
    assert manifest["step"] == 7
    restored = load_checkpoint(init_params(cfg), tmp_path / "ckpt")
    for (name, a), (_, b) in zip(tree_leaves(params), tree_leaves(restored)):
        np.testing.assert_allclose(
            b.data, a.data.astype(np.float32), atol=0, err_msg=name
        )
        assert b.requires_grad


def test_checkpoint_detects_tree_mismatch(tmp_path):
    cfg = micro_config()
    save_checkpoint(init_params(cfg), tmp_path / "ckpt")
    other = dataclasses.replace(cfg, detr=dataclasses.replace(cfg.detr, variant="dc"))
    with pytest.raises(ValueError, match="mismatch"):
        load_checkpoint(init_params(other), tmp_path / "ckpt")


def test_checkpoint_detects_shape_mismatch(tmp_path):
    cfg = micro_config()
    params = init_params(cfg)
    save_checkpoint(params, tmp_path / "ckpt")
    name0 = tree_leaves(params)[0][0]
    fname = name0.replace(".", "__") + ".crt1"
    from cred.crt1 import write_tensor

    write_tensor(tmp_path / "ckpt" / fname, np.zeros((2, 2), dtype=np.float32))
    with pytest.raises(ValueError, match="shape"):
        load_checkpoint(init_params(cfg), tmp_path / "ckpt")
