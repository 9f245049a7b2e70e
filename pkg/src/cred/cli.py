"""Command-line harness.

Exit codes: 0 success, 1 numeric/golden/assertion failure, 2 usage or config
errors (argparse also exits 2 on bad flags).
"""

from __future__ import annotations

import argparse
import sys
import time
from pathlib import Path

import numpy as np

from . import crt1
from .config import (
    ConfigError,
    PipelineConfig,
    VARIANTS,
    config_to_dict,
    for_variant,
    load_config,
    paper_config,
    toy_config,
)
from .data import shapes_dataset, shapes_sample
from .detr import cred_detr_forward, init_params
from .flops import MacCounter, budget_report, format_budget_table, measure
from .gradsuite import module_checks, op_checks, pipeline_check
from .tensor import no_grad
from .train import eval_recall, load_checkpoint, save_checkpoint, train_toy


def _parse_resolution(text: str) -> tuple[int, int]:
    try:
        h, w = (int(v) for v in text.lower().split("x"))
    except ValueError:
        raise ConfigError(f"resolution: expected HxW like 800x1280, got {text!r}")
    return (h, w)


def _load(args, default=None) -> PipelineConfig:
    if args.config:
        cfg = load_config(args.config)
    elif default is not None:
        cfg = default
    else:
        cfg = PipelineConfig().validate()
    if getattr(args, "variant", None):
        cfg = for_variant(args.variant, cfg)
    if getattr(args, "seed", None) is not None:
        import dataclasses

        cfg = dataclasses.replace(cfg, seed=args.seed).validate()
    if getattr(args, "resolution", None):
        import dataclasses

        cfg = dataclasses.replace(cfg, image=_parse_resolution(args.resolution)).validate()
    return cfg


# ---- gradcheck ----------------------------------------------------------------


def cmd_gradcheck(args) -> int:
    checks = op_checks(seed=args.seed or 0, tol=args.tol)
    checks += module_checks(seed=args.seed or 0, tol=args.tol)
    failures = 0
    t0 = time.time()
    for name, run in checks:
        report = run()
        status = "ok " if report.ok else "FAIL"
        print(f"[{status}] {name:<18} max rel err {report.max_rel_err:.3e}")
        failures += 0 if report.ok else 1
    if not args.ops_only:
        report = pipeline_check(seed=args.seed or 0, tol=args.tol)
        status = "ok " if report.ok else "FAIL"
        print(
            f"[{status}] {'full_pipeline':<18} max rel err {report.max_rel_err:.3e} "
            f"({report.coords_checked} coords)"
        )
        failures += 0 if report.ok else 1
    print(f"{len(checks) + (0 if args.ops_only else 1)} checks in {time.time() - t0:.1f}s")
    return 1 if failures else 0


# ---- forward / goldens ----------------------------------------------------------


def _golden_tensors(cfg: PipelineConfig) -> dict[str, np.ndarray]:
    params = init_params(cfg)
    h, w = cfg.image
    sample = shapes_sample(cfg.seed, 0, h, w, cfg.detr.num_classes)
    capture: dict = {}
    with no_grad():
        pred = cred_detr_forward(sample.image, params, cfg, capture=capture)
    out = {
        "logits": pred.class_logits.data,
        "boxes": pred.boxes.data,
        "encoder_input": capture["encoder_input"].data,
    }
    if "decoder_memory" in capture:
        out["decoder_memory"] = capture["decoder_memory"].data
    return out


def _golden_path(root: Path, cfg: PipelineConfig, name: str) -> Path:
    h, w = cfg.image
    return root / f"{cfg.variant}_{h}x{w}_{name}.crt1"


def cmd_forward(args) -> int:
    cfg = _load(args)
    tensors = _golden_tensors(cfg)
    for name, arr in tensors.items():
        print(f"{name:<16} shape {tuple(arr.shape)}  mean {arr.mean():+.6f}")
    if args.write_goldens:
        root = Path(args.write_goldens)
        root.mkdir(parents=True, exist_ok=True)
        for name, arr in tensors.items():
            crt1.write_tensor(_golden_path(root, cfg, name), arr)
        print(f"wrote {len(tensors)} goldens to {root}")
    if args.check_goldens:
        root = Path(args.check_goldens)
        worst = 0.0
        for name, arr in tensors.items():
            path = _golden_path(root, cfg, name)
            if not path.exists():
                print(f"missing golden: {path}", file=sys.stderr)
                return 1
            diff = crt1.max_abs_diff(arr, crt1.read_tensor(path))
            worst = max(worst, diff)
            print(f"{name:<16} max abs diff {diff:.2e}")
        if worst > args.golden_tol:
            print(f"golden mismatch: {worst:.2e} > {args.golden_tol:.0e}", file=sys.stderr)
            return 1
        print(f"goldens match within {args.golden_tol:.0e}")
    return 0


# ---- budget ----------------------------------------------------------------------


def cmd_budget(args) -> int:
    if args.config:
        base = load_config(args.config)
    elif args.toy_scale:
        base = PipelineConfig().validate()
    else:
        base = paper_config()
    if args.resolution:
        import dataclasses

        base = dataclasses.replace(base, image=_parse_resolution(args.resolution))
    budgets = []
    for slug in args.variant.split(","):
        slug = slug.strip()
        if slug not in VARIANTS:
            raise ConfigError(f"variant: {slug!r} not in {VARIANTS}")
        budgets.append(budget_report(for_variant(slug, base)))
    print(format_budget_table(budgets, csv=args.csv))
    return 0


# ---- training ----------------------------------------------------------------------


def cmd_train_toy(args) -> int:
    cfg = _load(args, default=toy_config())
    if args.steps:
        import dataclasses

        cfg = dataclasses.replace(
            cfg, train=dataclasses.replace(cfg.train, steps=args.steps)
        ).validate()
    params, history = train_toy(cfg, metrics_path=args.metrics, log=print)
    h, w = cfg.image
    samples = shapes_dataset(
        cfg.seed, cfg.train.dataset_size, h, w, cfg.detr.num_classes,
        min_size=cfg.train.min_size,
    )
    rec = eval_recall(samples, params, cfg, iou_threshold=cfg.train.eval_iou)
    print(
        f"final loss {history[-1]['total']:.4f}  "
        f"recall@{cfg.train.eval_iou:.2f} {rec['recall']:.3f} "
        f"({rec['hits']}/{rec['gt_boxes']})"
    )
    if args.checkpoint:
        save_checkpoint(params, args.checkpoint, extra={"config": config_to_dict(cfg)})
        print(f"checkpoint written to {args.checkpoint}")
    return 0


def cmd_eval_toy(args) -> int:
    cfg = _load(args, default=toy_config())
    params = init_params(cfg)
    if args.checkpoint:
        params = load_checkpoint(params, args.checkpoint)
    h, w = cfg.image
    count = args.count or cfg.train.dataset_size
    samples = shapes_dataset(
        cfg.seed, count, h, w, cfg.detr.num_classes, min_size=cfg.train.min_size
    )
    rec = eval_recall(samples, params, cfg, iou_threshold=args.iou)
    print(f"recall@{args.iou:.2f} {rec['recall']:.3f} ({rec['hits']}/{rec['gt_boxes']})")
    return 0


# ---- MAC measurement (analytic vs instrumented) -------------------------------------


def cmd_macs(args) -> int:
    cfg = _load(args)
    params = init_params(cfg)
    h, w = cfg.image
    sample = shapes_sample(cfg.seed, 0, h, w, cfg.detr.num_classes)
    counter = MacCounter()
    with no_grad(), measure(counter):
        cred_detr_forward(sample.image, params, cfg)
    budget = budget_report(cfg)
    analytic = budget.components()
    print(f"{'component':<10} {'instrumented':>14} {'analytic':>14} {'rel diff':>9}")
    worst = 0.0
    for name in ("backbone", "encoder", "decoder", "cram", "osma"):
        measured = counter.get(name)
        expect = analytic[name] / cfg.flops.scale
        if measured == 0 and expect == 0:
            continue
        rel = abs(measured - expect) / max(expect, 1.0)
        worst = max(worst, rel)
        print(f"{name:<10} {measured:>14} {int(expect):>14} {rel:>8.2%}")
    print(f"worst relative difference {worst:.2%}")
    return 0 if worst <= args.tol else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cred",
        description="Cross-resolution detection transformer: checks, budgets, toy training.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gradcheck", help="verify tape gradients against central differences")
    p.add_argument("--tol", type=float, default=1e-4)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--ops-only", action="store_true", help="skip the full-pipeline check")
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("forward", help="run one forward pass; write or verify goldens")
    p.add_argument("--config", default=None)
    p.add_argument("--variant", choices=VARIANTS, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--resolution", default=None, help="HxW, e.g. 64x64")
    p.add_argument("--write-goldens", metavar="DIR", default=None)
    p.add_argument("--check-goldens", metavar="DIR", default=None)
    p.add_argument("--golden-tol", type=float, default=1e-5)
    p.set_defaults(func=cmd_forward)

    p = sub.add_parser("budget", help="analytic per-component compute budgets")
    p.add_argument("--config", default=None)
    p.add_argument("--resolution", default=None, help="HxW, e.g. 800x1280")
    p.add_argument(
        "--variant",
        default="baseline,dc,default,dcx025,oo",
        help="comma-separated variant list",
    )
    p.add_argument("--csv", action="store_true")
    p.add_argument(
        "--toy-scale",
        action="store_true",
        help="use the small default model instead of the full-scale one",
    )
    p.set_defaults(func=cmd_budget)

    p = sub.add_parser("macs", help="compare instrumented forward MACs to the analytic budget")
    p.add_argument("--config", default=None)
    p.add_argument("--variant", choices=VARIANTS, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--resolution", default=None)
    p.add_argument("--tol", type=float, default=0.02)
    p.set_defaults(func=cmd_macs)

    p = sub.add_parser("train-toy", help="train on the synthetic shapes set")
    p.add_argument("--config", default=None)
    p.add_argument("--variant", choices=VARIANTS, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--steps", type=int, default=None)
    p.add_argument("--metrics", default=None, help="append JSONL metrics here")
    p.add_argument("--checkpoint", default=None, help="directory for the final checkpoint")
    p.set_defaults(func=cmd_train_toy)

    p = sub.add_parser("eval-toy", help="recall of a checkpoint on seeded data")
    p.add_argument("--config", default=None)
    p.add_argument("--variant", choices=VARIANTS, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--checkpoint", default=None)
    p.add_argument("--count", type=int, default=None)
    p.add_argument("--iou", type=float, default=0.5)
    p.set_defaults(func=cmd_eval_toy)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return 2
    except (AssertionError, crt1.FormatError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 1


def entrypoint() -> None:
    sys.exit(main())
