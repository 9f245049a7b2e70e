"""Central-difference verification of tape gradients."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import ShapeError, Tensor


@dataclass
class GradCheckReport:
    max_rel_err: float
    worst_leaf: int
    worst_coord: int
    coords_checked: int
    tol: float

    @property
    def ok(self) -> bool:
        return self.max_rel_err < self.tol

    def __str__(self) -> str:
        status = "ok" if self.ok else "FAIL"
        return (
            f"grad_check {status}: max rel err {self.max_rel_err:.3e} "
            f"(tol {self.tol:.1e}) over {self.coords_checked} coords, "
            f"worst leaf {self.worst_leaf} coord {self.worst_coord}"
        )


def grad_check(
    f,
    leaves,
    h: float = 1e-5,
    tol: float = 1e-4,
    max_coords_per_leaf: int | None = None,
    seed: int = 0,
) -> GradCheckReport:
    """Compare tape gradients of ``f(*leaves)`` against central differences.

    ``f`` must be a pure function returning a scalar Tensor. Relative error
    per coordinate is ``|a - n| / max(|a|, |n|, 1e-8)``. When
    ``max_coords_per_leaf`` is set, a seeded subset of coordinates is probed
    per leaf instead of every entry.
    """
    leaves = [t if isinstance(t, Tensor) else Tensor(t, requires_grad=True) for t in leaves]
    probes = [Tensor(t.data, requires_grad=True) for t in leaves]

    out = f(*probes)
    if not isinstance(out, Tensor) or out.size != 1:
        raise ShapeError("grad_check: f must return a scalar Tensor")
    out.backward()
    analytic = [
        p.grad if p.grad is not None else np.zeros_like(p.data) for p in probes
    ]

    rng = np.random.default_rng(seed)
    worst = (0.0, -1, -1)
    checked = 0
    for li, leaf in enumerate(leaves):
        n = leaf.size
        if n == 0:
            continue
        if max_coords_per_leaf is not None and n > max_coords_per_leaf:
            coords = rng.choice(n, size=max_coords_per_leaf, replace=False)
        else:
            coords = range(n)
        base = leaf.data
        for c in coords:
            args_plus = list(leaves)
            args_minus = list(leaves)
            bumped = base.copy()
            bumped.flat[c] += h
            args_plus[li] = Tensor(bumped)
            bumped = base.copy()
            bumped.flat[c] -= h
            args_minus[li] = Tensor(bumped)
            numeric = (f(*args_plus).item() - f(*args_minus).item()) / (2.0 * h)
            a = float(analytic[li].flat[c])
            rel = abs(a - numeric) / max(abs(a), abs(numeric), 1e-8)
            checked += 1
            if rel > worst[0]:
                worst = (rel, li, int(c))
    return GradCheckReport(
        max_rel_err=worst[0],
        worst_leaf=worst[1],
        worst_coord=worst[2],
        coords_checked=checked,
        tol=tol,
    )
