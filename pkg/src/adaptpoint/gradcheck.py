"""Finite-difference verification of analytic gradients.

Central differences at step h compare against the backward pass, coordinate
by coordinate. Large tensors are subsampled deterministically. The reported
error is |analytic - numeric| / max(|analytic|, |numeric|, floor): a relative
error with an absolute floor so that true-zero gradients are not drowned by
finite-difference roundoff.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .autograd import Tensor


class GradcheckError(RuntimeError):
    """Raised when a closure evaluates to a non-finite loss."""


@dataclass
class GradcheckReport:
    max_rel_err: float = 0.0
    worst: tuple[str, int, float, float] | None = None  # (param, coord, analytic, numeric)
    per_param: dict[str, float] = field(default_factory=dict)

    def __str__(self) -> str:
        lines = [f"max_rel_err={self.max_rel_err:.3e}"]
        if self.worst is not None:
            name, coord, a, n = self.worst
            lines.append(f"worst: {name}[{coord}] analytic={a:.6e} numeric={n:.6e}")
        return "\n".join(lines)


def gradcheck(
    loss_fn: Callable[[], Tensor],
    params: list[Tensor] | dict[str, Tensor],
    h: float = 1e-5,
    max_coords: int = 200,
    seed: int = 0,
    floor: float = 1e-4,
) -> GradcheckReport:
    """Compare backward gradients of `loss_fn` against central differences.

    `loss_fn` must be a deterministic scalar closure over `params` (freeze any
    noise before calling). Each parameter contributes at most `max_coords`
    coordinates, chosen by a seeded draw.
    """
    if isinstance(params, dict):
        named = list(params.items())
    else:
        named = [(f"param{i}", p) for i, p in enumerate(params)]

    for _, p in named:
        p.grad = None
    loss = loss_fn()
    if not np.isfinite(loss.data).all():
        raise GradcheckError("loss is non-finite at the evaluation point")
    loss.backward()
    analytic = {name: (p.grad.copy() if p.grad is not None else np.zeros_like(p.data)) for name, p in named}

    rng = np.random.default_rng(seed)
    report = GradcheckReport()
    for name, p in named:
        flat = p.data.reshape(-1)
        n = flat.size
        coords = np.arange(n) if n <= max_coords else np.sort(rng.choice(n, size=max_coords, replace=False))
        worst_here = 0.0
        a_flat = analytic[name].reshape(-1)
        for c in coords:
            orig = flat[c]
            flat[c] = orig + h
            up = loss_fn().item()
            flat[c] = orig - h
            down = loss_fn().item()
            flat[c] = orig
            if not (np.isfinite(up) and np.isfinite(down)):
                raise GradcheckError(f"non-finite loss while perturbing {name}[{c}]")
            numeric = (up - down) / (2.0 * h)
            a = float(a_flat[c])
            err = abs(a - numeric) / max(abs(a), abs(numeric), floor)
            if err > worst_here:
                worst_here = err
            if err > report.max_rel_err:
                report.max_rel_err = err
                report.worst = (name, int(c), a, numeric)
        report.per_param[name] = worst_here
    return report
