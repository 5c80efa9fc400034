"""Mild-form solvers for the coupled backward/forward MFG system.

The unknowns live on the ladder ``t_k = k Δt``, ``k = 0..M``.  With
``θ = ∇u`` and velocity ``v = b(·, p) - θ`` the contraction map reads

    p'(t_k) = P_{t_k} p0 - Δt Σ_{j<k} div P_{t_k - t_j} (p_j v_j)
    θ'(t_k) = ∇P_{T - t_k} g + Δt Σ_{j>k} ∇P_{t_j - t_k} F_j
    F_j     = f(·, p_j) + b(·, p_j)·θ_j - ½|θ_j|²

Both sums are left-endpoint rules in their own time direction, so every lag
is at least ``Δt`` and the singular factor of ``∇P`` is absorbed by the
operator itself.  All sums are accumulated in Fourier space against the
precomputed kernel ladder, which keeps one sweep at ``O(M²)`` pointwise
multiply-adds plus ``O(M)`` FFTs.

Backward quantities (``g``, ``u``, ``θ``, ``w``) do not vanish at infinity and
are convolved with edge padding; densities use zero padding.
"""
from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .grid import Field, FieldFlow, Grid, gradient, write_fields
from .model import ModelSpec
from .semigroup import HeatOperator

__all__ = [
    "SolverError",
    "MfgSolution",
    "HopfColeSolution",
    "gamma_step",
    "solve_mfg",
    "solve_hopf_cole",
    "verify_mild_residual",
    "hopf_cole_floor",
    "clip_density",
]

log = logging.getLogger(__name__)

CLIP_ABORT = 1e-2
W_FLOOR = 1e-12


class SolverError(RuntimeError):
    """Numerical failure: non-finite iterate, lost positivity, excessive clipping."""


# -- shared machinery --------------------------------------------------------


class Ladder:
    """Grid, time ladder and Fourier kernels shared by every sweep."""

    def __init__(self, m: ModelSpec, grid: Grid, steps: int, heat: HeatOperator | None = None):
        if steps < 1:
            raise ValueError("need at least one time step")
        if grid.dim != m.dim:
            raise ValueError(f"grid dim {grid.dim} does not match model dim {m.dim}")
        self.m = m
        self.grid = grid
        self.M = int(steps)
        self.dt = m.T / self.M
        self.heat = heat if heat is not None else HeatOperator(grid, self.dt, self.M)
        lags = [k * self.dt for k in range(1, self.M + 1)]
        self.H = np.stack([self.heat.heat_multiplier(t) for t in lags])
        self.G = np.stack([self.heat.grad_multiplier(t) for t in lags])
        self.points = grid.points()
        self.times = np.arange(self.M + 1) * self.dt

    # pointwise coefficients on the grid; vectors carry the component first
    def drift(self, rho):
        return np.moveaxis(np.asarray(self.m.drift(self.points, rho), dtype=float), -1, 0)

    def running(self, rho):
        return np.asarray(self.m.running_cost(self.points, rho), dtype=float)

    def fft(self, values, pad):
        return self.heat.transform(values, pad)

    def ifft(self, hats):
        return self.heat.inverse(hats)

    def heat_flow(self, f0, pad):
        """Frames ``P_{t_k} f0`` for ``k = 0..M``."""
        fh = self.fft(f0, pad)
        return np.concatenate([f0[None], self.ifft(self.H * fh)])

    def backward_heat(self, gv, pad="edge"):
        """Frames ``P_{T - t_k} g``: reverse of the forward flow."""
        return self.heat_flow(gv, pad)[::-1].copy()

    def backward_grad(self, gv, pad="edge"):
        """Frames ``∇P_{T - t_k} g``; the last frame is the finite-difference gradient."""
        gh = self.fft(gv, pad)
        inner = self.ifft(self.G * gh)  # lag (k+1)Δt, k = 0..M-1
        last = gradient(Field(self.grid, gv)).components
        return np.concatenate([inner[::-1], last[None]])

    def forward_duhamel(self, flux):
        """``Δt Σ_{j<k} div P_{t_k - t_j} flux_j`` for every k (zero at k=0).

        ``flux`` has shape ``(M+1, d, *shape)``; frame M is never used.
        """
        M = self.M
        src = self.fft(flux[:M], "zero")  # (M, d, *rfft)
        acc = np.empty((M,) + src.shape[2:], dtype=complex)
        for k in range(1, M + 1):
            acc[k - 1] = np.einsum("jd...,jd...->...", self.G[:k][::-1], src[:k])
        out = np.zeros((M + 1,) + self.grid.shape)
        out[1:] = self.dt * self.ifft(acc)
        return out

    def backward_duhamel(self, source, grad: bool, pad="edge"):
        """``Δt Σ_{j>k} K_{t_j - t_k} source_j`` with ``K = ∇P`` or ``P``.

        Zero at k = M.  Returns ``(M+1, d, *shape)`` when ``grad`` else
        ``(M+1, *shape)``.
        """
        M = self.M
        src = self.fft(source[1:], pad)  # j = 1..M
        kern = self.G if grad else self.H
        head = kern.shape[1:2] if grad else ()
        acc = np.empty((M,) + head + src.shape[1:], dtype=complex)
        for k in range(M):
            # j = k+1..M, lags 1..M-k
            s = src[k:, None] if grad else src[k:]
            acc[k] = (kern[: M - k] * s).sum(axis=0)
        body = self.dt * self.ifft(acc)
        zero = np.zeros((1,) + body.shape[1:])
        return np.concatenate([body, zero])

    def flow(self, frames, vector=False):
        return FieldFlow(self.grid, 0.0, self.m.T, np.ascontiguousarray(frames), vector=vector)


def _check_finite(arr, what, iteration):
    if not np.all(np.isfinite(arr)):
        bad = np.argwhere(~np.isfinite(arr.reshape(arr.shape[0], -1)))[0][0]
        raise SolverError(f"non-finite {what} at iteration {iteration}, frame {bad}")


def _vec_sup(a):
    """Sup over frames and nodes of the Euclidean norm along axis 1."""
    return float(np.sqrt(np.sum(a * a, axis=1)).max())


def clip_density(p, cell_volume):
    """Clip at zero and renormalise each frame to unit mass; returns clipped mass."""
    neg = np.minimum(p, 0.0)
    axes = tuple(range(1, p.ndim))
    clipped = float((-neg).sum(axis=axes).max() * cell_volume)
    q = p - neg
    mass = q.sum(axis=axes, keepdims=True) * cell_volume
    return q / mass, clipped


class _Picard:
    """Damped fixed-point loop with the halve-on-oscillation rule."""

    def __init__(self, tol, max_iter, damping):
        if not tol > 0:
            raise ValueError("tol must be positive")
        if not 0.0 < damping <= 1.0:
            raise ValueError("damping must lie in (0, 1]")
        self.tol = tol
        self.max_iter = int(max_iter)
        self.damping = float(damping)
        self.history: list[float] = []
        self.damping_history: list[float] = []
        self._rises = 0

    def update(self, res):
        if self.history and res > self.history[-1]:
            self._rises += 1
            if self._rises >= 2 and self.damping > 0.25:
                self.damping = max(0.25, self.damping / 2)
                log.info("residual rose twice; damping -> %g", self.damping)
                self._rises = 0
        else:
            self._rises = 0
        self.history.append(res)
        self.damping_history.append(self.damping)
        return res <= self.tol


# -- MFG system --------------------------------------------------------------


@dataclass(frozen=True)
class MfgSolution:
    """Converged (or last) iterate of the coupled system.

    ``alpha_star`` is ``-θ``, the gradient flow carried by the iteration, so
    the feedback and the density are one fixed point of the same scheme.
    """

    u: FieldFlow
    p: FieldFlow
    alpha_star: FieldFlow
    k_bound: float
    residual_history: tuple
    converged: bool
    iterations: int
    clipped_mass: float = 0.0
    damping: float = 1.0
    model_name: str = ""

    @property
    def grid(self) -> Grid:
        return self.u.grid

    @property
    def steps(self) -> int:
        return self.u.steps

    @property
    def theta(self) -> FieldFlow:
        return FieldFlow(self.grid, self.u.t0, self.u.t1, -self.alpha_star.frames, vector=True)

    @property
    def mass_drift(self) -> float:
        axes = tuple(range(1, self.p.frames.ndim))
        mass = self.p.frames.sum(axis=axes) * self.grid.cell_volume
        return float(np.abs(mass - 1.0).max())

    def summary(self) -> dict:
        return {
            "model": self.model_name,
            "iterations": self.iterations,
            "residuals": list(self.residual_history),
            "k_bound": self.k_bound,
            "mass_drift": self.mass_drift,
            "converged": self.converged,
            "clipped_mass": self.clipped_mass,
            "damping": self.damping,
            "grid": {"dim": self.grid.dim, "L": self.grid.half_width, "n": self.grid.n},
            "steps": self.steps,
        }

    def write(self, outdir: str | Path) -> None:
        out = Path(outdir)
        out.mkdir(parents=True, exist_ok=True)
        write_fields(out / "u.mfgf", self.grid, list(self.u.frames))
        write_fields(out / "p.mfgf", self.grid, list(self.p.frames))
        comps = [self.alpha_star.frames[:, i] for i in range(self.grid.dim)]
        for i, c in enumerate(comps):
            write_fields(out / f"alpha_{i + 1}.mfgf", self.grid, list(c))
        (out / "summary.json").write_text(json.dumps(self.summary(), indent=2))


def _coerce_state(lad: Ladder, p, theta):
    pa = p.frames if isinstance(p, FieldFlow) else np.asarray(p, dtype=float)
    ta = theta.frames if isinstance(theta, FieldFlow) else np.asarray(theta, dtype=float)
    want_p = (lad.M + 1,) + lad.grid.shape
    want_t = (lad.M + 1, lad.grid.dim) + lad.grid.shape
    if pa.shape != want_p or ta.shape != want_t:
        raise ValueError(f"state shapes {pa.shape}, {ta.shape} do not match ladder {want_p}, {want_t}")
    return pa, ta


def _backward_source(lad: Ladder, p, theta):
    F = np.empty_like(p)
    for j in range(p.shape[0]):
        b = lad.drift(p[j])
        F[j] = lad.running(p[j]) + np.sum(b * theta[j], axis=0) - 0.5 * np.sum(theta[j] ** 2, axis=0)
    return F


def _flux(lad: Ladder, p, theta):
    """``p (b(·, p) - θ)`` per frame."""
    out = np.empty_like(theta)
    for j in range(p.shape[0]):
        out[j] = p[j] * (lad.drift(p[j]) - theta[j])
    return out


class _MfgFrames:
    """Data-independent parts of Γ for one model, grid and ladder."""

    def __init__(self, lad: Ladder, p0: np.ndarray):
        self.lad = lad
        self.p0 = p0
        self.g = lad.m.g_field(lad.grid).values
        self.p_free = lad.heat_flow(p0, "zero")
        self.theta_free = lad.backward_grad(self.g)
        self.u_free = lad.backward_heat(self.g)

    def gamma(self, p, theta):
        lad = self.lad
        p_new = self.p_free - lad.forward_duhamel(_flux(lad, p, theta))
        theta_new = self.theta_free + lad.backward_duhamel(_backward_source(lad, p, theta), grad=True)
        return p_new, theta_new

    def value(self, p, theta):
        """``u`` from the mild value equation with the converged ``(p, θ)``."""
        return self.u_free + self.lad.backward_duhamel(_backward_source(self.lad, p, theta), grad=False)


def gamma_step(m: ModelSpec, heat: HeatOperator, current, steps: int | None = None):
    """One application of Γ to ``current = (p, theta)`` (FieldFlows or arrays).

    Returns the image as a pair of FieldFlows on the same ladder.
    """
    p, theta = current
    M = steps if steps is not None else (p.steps if isinstance(p, FieldFlow) else np.shape(p)[0] - 1)
    lad = Ladder(m, heat.grid, M, heat)
    pa, ta = _coerce_state(lad, p, theta)
    frames = _MfgFrames(lad, pa[0])
    p_new, t_new = frames.gamma(pa, ta)
    _check_finite(p_new, "density", 0)
    _check_finite(t_new, "value gradient", 0)
    return lad.flow(p_new), lad.flow(t_new, vector=True)


def solve_mfg(
    m: ModelSpec,
    grid: Grid,
    steps: int = 50,
    tol: float = 1e-8,
    max_iter: int = 200,
    damping: float = 1.0,
    init: str = "heat",
    p0: Field | None = None,
    heat: HeatOperator | None = None,
) -> MfgSolution:
    """Damped Picard iteration on Γ, then one backward pass for ``u``.

    Parameters
    ----------
    init : {"heat", "constant"}
        Initial density iterate: the heat flow of ``p0`` or ``p0`` frozen in
        time.  The gradient iterate always starts at ``∇P_{T-t} g``.
    p0 : Field, optional
        Overrides the model's initial density (used to restart mid-horizon).
    """
    lad = Ladder(m, grid, steps, heat)
    p0v = (m.p0_field(grid) if p0 is None else p0).values
    frames = _MfgFrames(lad, p0v)
    if init == "heat":
        p = frames.p_free.copy()
    elif init == "constant":
        p = np.broadcast_to(p0v, frames.p_free.shape).copy()
    else:
        raise ValueError("init must be 'heat' or 'constant'")
    p, clipped = clip_density(p, grid.cell_volume)
    theta = frames.theta_free.copy()

    loop = _Picard(tol, max_iter, damping)
    converged = False
    worst_clip = clipped
    for it in range(1, loop.max_iter + 1):
        gp, gt = frames.gamma(p, theta)
        _check_finite(gp, "density", it)
        _check_finite(gt, "value gradient", it)
        lam = loop.damping
        p_next = (1 - lam) * p + lam * gp
        t_next = (1 - lam) * theta + lam * gt
        p_next, clipped = clip_density(p_next, grid.cell_volume)
        worst_clip = max(worst_clip, clipped)
        if clipped > CLIP_ABORT:
            raise SolverError(f"clipped density mass {clipped:.3g} at iteration {it} exceeds {CLIP_ABORT}")
        res = float(np.abs(p_next - p).max()) + _vec_sup(t_next - theta)
        p, theta = p_next, t_next
        if loop.update(res):
            converged = True
            break
    iterations = len(loop.history)
    if not converged:
        log.warning("Picard stopped after %d iterations, residual %.3g", iterations, loop.history[-1])

    u = frames.value(p, theta)
    _check_finite(u, "value", iterations)
    k_bound = float(np.sqrt(np.sum(theta**2, axis=1)).max())
    return MfgSolution(
        u=lad.flow(u),
        p=lad.flow(p),
        alpha_star=lad.flow(-theta, vector=True),
        k_bound=k_bound,
        residual_history=tuple(loop.history),
        converged=converged,
        iterations=iterations,
        clipped_mass=worst_clip,
        damping=loop.damping,
        model_name=m.name,
    )


# -- Hopf-Cole route ---------------------------------------------------------


@dataclass(frozen=True)
class HopfColeSolution:
    w: FieldFlow
    u_from_w: FieldFlow
    p: FieldFlow
    residual_history: tuple = ()
    converged: bool = False
    iterations: int = 0

    @property
    def min_w(self) -> float:
        return float(self.w.frames.min())


def solve_hopf_cole(
    m: ModelSpec,
    grid: Grid,
    steps: int = 50,
    tol: float = 1e-8,
    max_iter: int = 200,
    damping: float = 1.0,
    heat: HeatOperator | None = None,
) -> HopfColeSolution:
    """Picard iteration on the linearised pair ``w = exp(-u)``, ``p``.

        w(t)  = P_{T-t} e^{-g} + ∫_t^T P_{s-t}(b·∇w - f w) ds
        p(t)  = P_t p0 - ∫_0^t div P_{t-s}(p (∇w/w + b)) ds

    ``∇w`` is carried alongside ``w`` through the same mild formula with ``∇P``.
    """
    lad = Ladder(m, grid, steps, heat)
    p0v = m.p0_field(grid).values
    wT = np.exp(-m.g_field(grid).values)
    p_free = lad.heat_flow(p0v, "zero")
    w_free = lad.backward_heat(wT)
    s_free = lad.backward_grad(wT)

    p, _ = clip_density(p_free.copy(), grid.cell_volume)
    w, s = w_free.copy(), s_free.copy()
    loop = _Picard(tol, max_iter, damping)
    converged = False
    for it in range(1, loop.max_iter + 1):
        if w.min() < W_FLOOR:
            k = int(np.argmin(w.reshape(w.shape[0], -1).min(axis=1)))
            raise SolverError(f"w fell below {W_FLOOR} at iteration {it}, frame {k}; enlarge the domain or grid")
        src = np.empty_like(w)
        flux = np.empty_like(s)
        for j in range(lad.M + 1):
            b = lad.drift(p[j])
            src[j] = np.sum(b * s[j], axis=0) - lad.running(p[j]) * w[j]
            flux[j] = p[j] * (s[j] / w[j] + b)
        gw = w_free + lad.backward_duhamel(src, grad=False)
        gs = s_free + lad.backward_duhamel(src, grad=True)
        gp = p_free - lad.forward_duhamel(flux)
        for arr, what in ((gw, "w"), (gs, "grad w"), (gp, "density")):
            _check_finite(arr, what, it)
        lam = loop.damping
        w_next = (1 - lam) * w + lam * gw
        s_next = (1 - lam) * s + lam * gs
        p_next, clipped = clip_density((1 - lam) * p + lam * gp, grid.cell_volume)
        if clipped > CLIP_ABORT:
            raise SolverError(f"clipped density mass {clipped:.3g} at iteration {it} exceeds {CLIP_ABORT}")
        res = float(np.abs(p_next - p).max()) + float(np.abs(w_next - w).max())
        p, w, s = p_next, w_next, s_next
        if loop.update(res):
            converged = True
            break
    if w.min() < W_FLOOR:
        raise SolverError(f"w fell below {W_FLOOR}; enlarge the domain or grid")
    return HopfColeSolution(
        w=lad.flow(w),
        u_from_w=lad.flow(-np.log(w)),
        p=lad.flow(p),
        residual_history=tuple(loop.history),
        converged=converged,
        iterations=len(loop.history),
    )


def hopf_cole_floor(m: ModelSpec, grid: Grid, p: FieldFlow | None = None) -> float:
    """Maximum-principle lower bound ``exp(-(‖g‖∞ + T‖f‖∞))`` on the grid.

    ``‖f‖∞`` is taken over the density frames in ``p`` when given, else over
    the declared bound ``C``.
    """
    g = float(np.abs(m.g_field(grid).values).max())
    if p is None:
        fmax = m.bound_C
    else:
        pts = grid.points()
        fmax = max(float(np.abs(m.running_cost(pts, fr)).max()) for fr in p.frames)
    return math.exp(-(g + m.T * fmax))


# -- residual check ----------------------------------------------------------


def verify_mild_residual(m: ModelSpec, heat: HeatOperator, sol: MfgSolution) -> tuple[float, float]:
    """Sup-norm defects of ``(u, p)`` in the mild equations under midpoint quadrature.

    Each Duhamel integral is re-evaluated with one midpoint node per step,
    frames linearly interpolated to the midpoint.  The value gradient is the
    solution's own ``θ = -α*``.  Returns ``(r_u, r_p)``.
    """
    grid = sol.grid
    M = sol.steps
    dt = m.T / M
    u = sol.u.frames
    p = sol.p.frames
    theta = -sol.alpha_star.frames
    lad = Ladder(m, grid, M, heat)
    pm = 0.5 * (p[1:] + p[:-1])
    tm = 0.5 * (theta[1:] + theta[:-1])
    F = _backward_source(lad, pm, tm)  # midpoints j + 1/2, j = 0..M-1
    flux = _flux(lad, pm, tm)
    Fh = heat.transform(F, "edge")
    Qh = heat.transform(flux, "zero")
    g = m.g_field(grid).values
    gh = heat.transform(g, "edge")
    p0 = m.p0_field(grid).values
    p0h = heat.transform(p0, "zero")

    r_u = float(np.abs(u[M] - g).max())
    r_p = 0.0
    for k in range(M + 1):
        if k < M:
            acc = heat.heat_multiplier(m.T - k * dt) * gh
            for j in range(k, M):
                acc = acc + dt * heat.heat_multiplier((j + 0.5 - k) * dt) * Fh[j]
            r_u = max(r_u, float(np.abs(heat.inverse(acc) - u[k]).max()))
        if k > 0:
            acc = heat.heat_multiplier(k * dt) * p0h
            for j in range(k):
                acc = acc - dt * np.sum(heat.grad_multiplier((k - j - 0.5) * dt) * Qh[j], axis=0)
            r_p = max(r_p, float(np.abs(heat.inverse(acc) - p[k]).max()))
        else:
            r_p = max(r_p, float(np.abs(p[0] - p0).max()))
    return r_u, r_p
