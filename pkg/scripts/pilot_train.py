#!/usr/bin/env python3
"""Train the toy detector and report final loss and recall.

    python scripts/pilot_train.py                          # pinned default recipe
    python scripts/pilot_train.py --variant dcx025 --seed 1
    python scripts/pilot_train.py --compare --steps 200    # default vs dcx025 vs
                                                           # quarter-res baseline

``--compare`` runs the resolution study at an equal step budget and seed:
the cross-resolution variants against a baseline whose encoder tokens are
bilinearly downsampled 2x per axis with no fine-map reconstruction.
"""

import argparse
import dataclasses
import time

from cred.config import toy_config
from cred.data import shapes_dataset
from cred.train import eval_recall, train_toy


def quarter_res_baseline(seed: int):
    cfg = toy_config("baseline", seed=seed)
    detr = dataclasses.replace(cfg.detr, baseline_downsample=2)
    return dataclasses.replace(cfg, detr=detr).validate()


def sized(cfg, image: str | None, lr: float | None = None):
    if image is not None:
        h, w = (int(v) for v in image.lower().split("x"))
        cfg = dataclasses.replace(cfg, image=(h, w))
    if lr is not None:
        cfg = dataclasses.replace(cfg, train=dataclasses.replace(cfg.train, lr=lr))
    return cfg.validate()


def run_one(cfg, steps, dataset_size, label, verbose=False):
    if dataset_size:
        cfg = dataclasses.replace(
            cfg, train=dataclasses.replace(cfg.train, dataset_size=dataset_size)
        ).validate()
    t0 = time.time()
    params, history = train_toy(cfg, steps=steps, log=print if verbose else None)
    h, w = cfg.image
    samples = shapes_dataset(
        cfg.seed, cfg.train.dataset_size, h, w, cfg.detr.num_classes,
        min_size=cfg.train.min_size,
    )
    rec = eval_recall(samples, params, cfg, iou_threshold=cfg.train.eval_iou)
    final = history[-1]["total"]
    print(
        f"{label:<12} final loss {final:.4f}  loss@10 {history[9]['total']:.4f}  "
        f"recall@{cfg.train.eval_iou:.1f} {rec['recall']:.3f}  "
        f"({time.time() - t0:.0f}s)"
    )
    return final


def run(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--variant", default="default")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--steps", type=int, default=None)
    parser.add_argument("--image", default=None, help="HxW input size override")
    parser.add_argument("--lr", type=float, default=None, help="peak rate override")
    parser.add_argument("--dataset-size", type=int, default=None)
    parser.add_argument("--compare", action="store_true",
                        help="equal-budget study: default vs dcx025 vs quarter baseline")
    parser.add_argument("--verbose", action="store_true", help="per-step log lines")
    args = parser.parse_args(argv)

    if not args.compare:
        run_one(sized(toy_config(args.variant, seed=args.seed), args.image, args.lr),
                args.steps, args.dataset_size, args.variant, verbose=args.verbose)
        return 0

    fd = run_one(sized(toy_config("default", seed=args.seed), args.image, args.lr),
                 args.steps, args.dataset_size, "default")
    fx = run_one(sized(toy_config("dcx025", seed=args.seed), args.image, args.lr),
                 args.steps, args.dataset_size, "dcx025")
    fb = run_one(sized(quarter_res_baseline(args.seed), args.image, args.lr),
                 args.steps, args.dataset_size, "baseline-q")
    print(f"\nloss gap |dcx025 - default| / default = {abs(fx - fd) / fd:.1%}")
    print(f"quarter-res baseline worse than both: {fb > max(fd, fx)}")
    return 0


if __name__ == "__main__":
    raise SystemExit(run())
