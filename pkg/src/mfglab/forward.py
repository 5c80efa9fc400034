"""Forward mild equation for the limit density under a given feedback.

    p(t) = P_t p0 - ∫_0^t div P_{t-s}(p(s)(α(s) + b(·, p(s)))) ds

Quadrature, padding and the clip-and-renormalise policy are those of the
MFG solver, so feeding in ``α* = -θ`` from a converged solution reproduces
its density as a fixed point of the same discrete map.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .grid import FieldFlow, Grid
from .model import ModelSpec
from .semigroup import HeatOperator
from .solver import CLIP_ABORT, Ladder, SolverError, _check_finite, _Picard, clip_density

__all__ = ["LimitDensity", "solve_forward", "resample_feedback"]

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class LimitDensity:
    p: FieldFlow
    alpha_used: FieldFlow
    residual: float
    residual_history: tuple = ()
    converged: bool = False
    iterations: int = 0


def resample_feedback(alpha: FieldFlow, steps: int) -> np.ndarray:
    """Frames of ``alpha`` on a ladder with ``steps`` steps, left-constant in time."""
    src = alpha.steps
    if src == steps:
        return np.asarray(alpha.frames)
    idx = [(k * src) // steps for k in range(steps + 1)]
    return np.asarray(alpha.frames)[idx]


def solve_forward(
    m: ModelSpec,
    alpha: FieldFlow,
    grid: Grid,
    steps: int = 50,
    tol: float = 1e-8,
    max_iter: int = 200,
    damping: float = 1.0,
    init: str = "heat",
    bound: float | None = None,
    heat: HeatOperator | None = None,
) -> LimitDensity:
    """Picard iteration for the density driven by the feedback ``alpha``.

    Parameters
    ----------
    alpha : FieldFlow
        Vector feedback on ``grid``; resampled left-constant if its ladder differs.
    init : {"heat", "constant"}
        First iterate: ``P_t p0`` or ``p0`` frozen in time.
    bound : float, optional
        Admissibility bound; a feedback exceeding it is rejected.
    """
    if not alpha.vector:
        raise ValueError("alpha must be a vector FieldFlow")
    if alpha.grid != grid:
        raise ValueError("alpha grid does not match the solver grid")
    lad = Ladder(m, grid, steps, heat)
    a = resample_feedback(alpha, lad.M)
    if bound is not None:
        amax = float(np.sqrt(np.sum(a * a, axis=1)).max())
        if amax > bound:
            raise ValueError(f"feedback sup {amax:.4g} exceeds admissibility bound {bound:.4g}")

    p0 = m.p0_field(grid).values
    p_free = lad.heat_flow(p0, "zero")
    if init == "heat":
        p = p_free.copy()
    elif init == "constant":
        p = np.broadcast_to(p0, p_free.shape).copy()
    else:
        raise ValueError("init must be 'heat' or 'constant'")
    p, _ = clip_density(p, grid.cell_volume)

    loop = _Picard(tol, max_iter, damping)
    converged = False
    flux = np.empty_like(a)
    for it in range(1, loop.max_iter + 1):
        for j in range(lad.M + 1):
            flux[j] = p[j] * (a[j] + lad.drift(p[j]))
        gp = p_free - lad.forward_duhamel(flux)
        _check_finite(gp, "density", it)
        lam = loop.damping
        p_next, clipped = clip_density((1 - lam) * p + lam * gp, grid.cell_volume)
        if clipped > CLIP_ABORT:
            raise SolverError(f"clipped density mass {clipped:.3g} at iteration {it} exceeds {CLIP_ABORT}")
        res = float(np.abs(p_next - p).max())
        p = p_next
        if loop.update(res):
            converged = True
            break
    if not converged:
        log.warning("forward Picard stopped after %d iterations, residual %.3g", len(loop.history), loop.history[-1])
    return LimitDensity(
        p=lad.flow(p),
        alpha_used=lad.flow(a, vector=True),
        residual=loop.history[-1],
        residual_history=tuple(loop.history),
        converged=converged,
        iterations=len(loop.history),
    )
