"""Cost functionals, weak distances, convergence curves and the ε-Nash study."""
from __future__ import annotations

import csv
import io
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np
from scipy import signal, stats

from .grid import Field, FieldFlow, Grid, holder_seminorm, sup_norm
from .model import ModelSpec
from .particles import (
    FeedbackProfile,
    ParticleEnsemble,
    SimConfig,
    empirical_density,
    interpolate,
    player_streams,
    simulate,
    substream,
)
from .solver import Ladder, MfgSolution, SolverError, _Picard

__all__ = [
    "CostEstimate",
    "cost_nplayer",
    "cost_limit",
    "paired_difference",
    "dw_proxy",
    "w1",
    "ConvergenceReport",
    "convergence_study",
    "NashGapReport",
    "nash_gap_study",
    "default_candidates",
    "admissibility_bound",
    "run_jobs",
    "spearman_trend",
    "best_response",
    "limit_path_costs",
]

LOWER_BOUND_LABEL = "lower-bound estimate of required epsilon"


# -- costs -------------------------------------------------------------------


@dataclass(frozen=True)
class CostEstimate:
    """Monte Carlo cost with its standard error.

    ``samples`` holds the per-replication totals (kept for paired comparisons).
    ``std_error`` is NaN and ``flagged`` is set when fewer than two samples exist.
    """

    mean: float
    std_error: float
    n_samples: int
    breakdown: Mapping[str, float]
    samples: np.ndarray = field(repr=False, default=None)
    flagged: bool = False

    @classmethod
    def from_components(cls, energy, running, terminal) -> "CostEstimate":
        e, r, t = (np.asarray(a, dtype=float).reshape(-1) for a in (energy, running, terminal))
        total = e + r + t
        n = total.size
        se = float(np.std(total, ddof=1) / math.sqrt(n)) if n >= 2 else float("nan")
        brk = {"energy": float(e.mean()), "running": float(r.mean()), "terminal": float(t.mean())}
        return cls(
            mean=brk["energy"] + brk["running"] + brk["terminal"],
            std_error=se,
            n_samples=n,
            breakdown=brk,
            samples=total,
            flagged=n < 2,
        )

    def to_dict(self) -> dict:
        return {
            "mean": self.mean,
            "std_error": self.std_error,
            "n_samples": self.n_samples,
            "breakdown": dict(self.breakdown),
            "flagged": self.flagged,
        }


def paired_difference(a: CostEstimate, b: CostEstimate) -> tuple[float, float]:
    """Mean and standard error of ``a - b`` over common-random-number pairs."""
    if a.n_samples != b.n_samples:
        raise ValueError("paired estimates need equal sample counts")
    d = a.samples - b.samples
    se = float(np.std(d, ddof=1) / math.sqrt(d.size)) if d.size >= 2 else float("nan")
    return float(d.mean()), se


def cost_nplayer(ensembles: ParticleEnsemble | Sequence[ParticleEnsemble], player_index: int) -> CostEstimate:
    """``J_i^N`` of one player over independent replications.

    Uses the cost components recorded during simulation, so the interaction
    density is exactly the one that drove the dynamics.
    """
    if isinstance(ensembles, ParticleEnsemble):
        ensembles = [ensembles]
    return CostEstimate.from_components(
        [e.energy[player_index] for e in ensembles],
        [e.running[player_index] for e in ensembles],
        [e.terminal[player_index] for e in ensembles],
    )


def _scalar_interp(frame: np.ndarray, grid: Grid, pts: np.ndarray) -> np.ndarray:
    return interpolate(frame[None], grid, pts)[:, 0]


def cost_limit(
    m: ModelSpec,
    alpha: FieldFlow,
    density: FieldFlow,
    mc_paths: int = 10_000,
    seed: int = 0,
    steps: int = 200,
    stream: str = "mc-paths",
) -> CostEstimate:
    """``J(α)`` for one agent facing the frozen density flow ``density``.

    Paths follow ``dX = (α + b(X, p(t, X))) dt + dW`` by Euler-Maruyama; ``α`` and
    ``p`` are read multilinearly in space and left-constant in time.  Equal
    ``(seed, stream)`` give common random numbers across controls.
    """
    grid = density.grid
    if alpha.grid != grid:
        raise ValueError("alpha and density live on different grids")
    rng = substream(seed, stream)
    x0 = np.asarray(m.sample_initial(rng, mc_paths, grid), dtype=float)
    xi = rng.standard_normal((int(steps), mc_paths, m.dim))
    return CostEstimate.from_components(*limit_path_costs(m, alpha, density, x0, xi))


def limit_path_costs(m: ModelSpec, alpha: FieldFlow, density: FieldFlow, x0: np.ndarray, xi: np.ndarray):
    """Cost components of single-agent paths driven by given noise.

    ``xi`` holds standard normal increments, shape ``(M, K, d)``.  Returns the
    per-path ``(energy, running, terminal)``.
    """
    grid = density.grid
    M = xi.shape[0]
    dt = m.T / M
    sq = math.sqrt(dt)
    x = np.array(x0, dtype=float)
    energy = np.zeros(len(x))
    running = np.zeros(len(x))
    for k in range(M):
        a = interpolate(alpha.frames[(k * alpha.steps) // M], grid, x)
        rho = np.maximum(_scalar_interp(density.frames[(k * density.steps) // M], grid, x), 0.0)
        energy += dt * 0.5 * np.sum(a * a, axis=1)
        running += dt * np.asarray(m.running_cost(x, rho), dtype=float)
        x = x + dt * (a + np.asarray(m.drift(x, rho), dtype=float)) + sq * xi[k]
    if not np.all(np.isfinite(x)):
        raise FloatingPointError("non-finite Monte Carlo path")
    return energy, running, np.asarray(m.terminal_cost(x), dtype=float)


# -- distances ---------------------------------------------------------------


def _as_measure(obj, dim: int | None = None):
    """``(points (K, d), weights (K,))`` from a point set, a Field or a pair."""
    if isinstance(obj, Field):
        g = obj.grid
        return g.points().reshape(-1, g.dim), obj.values.reshape(-1) * g.cell_volume
    if isinstance(obj, tuple):
        pts, w = obj
        pts = np.asarray(pts, dtype=float)
        pts = pts.reshape(len(pts), -1)
        return pts, np.asarray(w, dtype=float).reshape(-1)
    pts = np.asarray(obj, dtype=float)
    if pts.ndim == 1:
        pts = pts[:, None]
    return pts, np.full(len(pts), 1.0 / len(pts))


def _hat_sums_1d(x, w, centers):
    """``Σ_i w_i max(0, 1 - |x_i - c|)`` for every center, via sorted prefix sums."""
    order = np.argsort(x)
    xs, ws = x[order], w[order]
    cw = np.concatenate(([0.0], np.cumsum(ws)))
    cxw = np.concatenate(([0.0], np.cumsum(ws * xs)))
    lo = np.searchsorted(xs, centers - 1.0, side="right")
    mid = np.searchsorted(xs, centers, side="right")
    hi = np.searchsorted(xs, centers + 1.0, side="left")
    left = (1.0 - centers) * (cw[mid] - cw[lo]) + (cxw[mid] - cxw[lo])
    right = (1.0 + centers) * (cw[hi] - cw[mid]) - (cxw[hi] - cxw[mid])
    return left + right


def _hat_sums_nd(x, w, centers, chunk=256):
    out = np.empty(len(centers))
    for s in range(0, len(centers), chunk):
        c = centers[s : s + chunk]
        r = np.sqrt(((x[None, :, :] - c[:, None, :]) ** 2).sum(axis=-1))
        out[s : s + chunk] = (np.maximum(0.0, 1.0 - r) * w[None, :]).sum(axis=1)
    return out


def _hat_sums_grid(f: Field):
    """Hat sums of a field's node masses at its own nodes, by FFT convolution."""
    g = f.grid
    r = int(math.floor(1.0 / g.h))
    off = np.arange(-r, r + 1) * g.h
    mesh = np.meshgrid(*([off] * g.dim), indexing="ij")
    hat = np.maximum(0.0, 1.0 - np.sqrt(sum(o * o for o in mesh)))
    return signal.fftconvolve(f.values * g.cell_volume, hat, mode="same").reshape(-1)


def _default_centers(pts: np.ndarray, spacing: float):
    lo = np.floor(pts.min(axis=0)) - 1.0
    hi = np.ceil(pts.max(axis=0)) + 1.0
    axes = [np.arange(a, b + spacing / 2, spacing) for a, b in zip(lo, hi)]
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([mm.reshape(-1) for mm in mesh], axis=-1)


RAMP_SCALES = (1.0, 0.5, 0.25)
RAMP_OFFSETS = 16


def dw_proxy(mu, nu, centers: np.ndarray | None = None) -> float:
    """Dictionary lower bound of the bounded-Lipschitz distance ``d_w(μ, ν)``.

    The dictionary holds ``±max(0, 1 - |x - c|)`` for every center ``c`` and
    ``±a tanh((x_i - o)/a)`` ramps along each axis at 16 offsets and scales
    ``a ∈ {1, 1/2, 1/4}``; all are 1-Lipschitz and bounded by 1, so the
    maximum of ``⟨μ - ν, f⟩`` over them never exceeds ``d_w``.

    Parameters
    ----------
    mu, nu : array (K, d) | Field | (points, weights)
        Point sets carry uniform weights; fields become node masses ``values·h^d``.
    centers : array (C, d), optional
        Hat centers.  Defaults to the grid nodes of a Field argument, otherwise a
        lattice of spacing 1/64 (1D) or 1/16 (2D) covering the supports.
    """
    px, pw = _as_measure(mu)
    qx, qw = _as_measure(nu)
    if px.shape[1] != qx.shape[1]:
        raise ValueError("measures of different dimension")
    d = px.shape[1]
    x = np.concatenate([px, qx])
    w = np.concatenate([pw, -qw])
    on_nodes = None
    if centers is None:
        ref = mu if isinstance(mu, Field) else nu if isinstance(nu, Field) else None
        if ref is not None:
            on_nodes = ref.grid
            centers = ref.grid.points().reshape(-1, d)
        else:
            centers = _default_centers(x, 1 / 64 if d == 1 else 1 / 16)
    centers = np.asarray(centers, dtype=float).reshape(-1, d)
    if d == 1:
        hats = _hat_sums_1d(x[:, 0], w, centers[:, 0])
    else:
        # a field sampled on the center nodes is a discrete convolution away
        hats = np.zeros(len(centers))
        for obj, (ox, ow), sign in ((mu, (px, pw), 1.0), (nu, (qx, qw), -1.0)):
            if isinstance(obj, Field) and obj.grid == on_nodes:
                hats += sign * _hat_sums_grid(obj)
            else:
                hats += sign * _hat_sums_nd(ox, ow, centers)
    best = float(np.abs(hats).max())
    lo, hi = x.min(axis=0), x.max(axis=0)
    for axis in range(d):
        for o in np.linspace(lo[axis], hi[axis], RAMP_OFFSETS):
            for a in RAMP_SCALES:
                best = max(best, abs(float(np.dot(w, a * np.tanh((x[:, axis] - o) / a)))))
    return best


def w1(mu, nu) -> float:
    """Wasserstein-1 distance in one dimension (points or fields)."""
    px, pw = _as_measure(mu)
    qx, qw = _as_measure(nu)
    if px.shape[1] != 1:
        raise ValueError("w1 is only available in one dimension")
    return float(stats.wasserstein_distance(px[:, 0], qx[:, 0], np.maximum(pw, 0), np.maximum(qw, 0)))


# -- job scheduling ----------------------------------------------------------


def run_jobs(fn: Callable, jobs: Iterable, threads: int = 1) -> list:
    """Apply ``fn`` to every job; results come back in job order."""
    jobs = list(jobs)
    if threads <= 1 or len(jobs) <= 1:
        return [fn(j) for j in jobs]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, jobs))


# -- convergence -------------------------------------------------------------

CONVERGENCE_METRICS = ("sup_density_gap", "dw_proxy", "w1", "holder_norm", "escaped")


@dataclass(frozen=True)
class ConvergenceReport:
    N_values: tuple
    seeds: tuple
    rows: tuple  # (N, seed, metric, value), sorted by (N, seed, metric order)
    model: str = ""
    gamma: float = 0.4

    def values(self, metric: str, N: int) -> np.ndarray:
        return np.array([r[3] for r in self.rows if r[0] == N and r[2] == metric])

    def median(self, metric: str) -> np.ndarray:
        return np.array([float(np.median(self.values(metric, N))) for N in self.N_values])

    def fitted_slope(self, metric: str) -> float:
        """Descriptive log-log slope of the medians in N."""
        y = self.median(metric)
        if np.any(y <= 0):
            return float("nan")
        return float(np.polyfit(np.log(self.N_values), np.log(y), 1)[0])

    def to_csv(self) -> str:
        buf = io.StringIO()
        wr = csv.writer(buf, lineterminator="\n")
        wr.writerow(["N", "seed", "metric", "value"])
        for N, s, k, v in self.rows:
            wr.writerow([N, s, k, repr(float(v))])
        return buf.getvalue()

    def to_dict(self) -> dict:
        metrics = sorted({r[2] for r in self.rows}, key=CONVERGENCE_METRICS.index)
        return {
            "model": self.model,
            "N_values": list(self.N_values),
            "seeds": list(self.seeds),
            "gamma": self.gamma,
            "medians": {k: self.median(k).tolist() for k in metrics},
            "fitted_slopes": {k: self.fitted_slope(k) for k in metrics if k != "escaped"},
        }


def _convergence_job(args):
    m, sol, grid, N, seed, root_seed, steps, stride, gamma, threads = args
    cfg = SimConfig(N, steps, root_seed, threads=threads, stream_name=f"sim-N{N}-seed{seed}")
    ens = simulate(m, cfg, FeedbackProfile(sol.alpha_star))
    emp = empirical_density(ens, m, grid, stride)
    ref = sol.p.frames
    pn = emp.frames.frames
    sup_gap = float(np.abs(pn - ref).max())
    dw = 0.0
    wd = 0.0
    hold = 0.0
    for k in range(ref.shape[0]):
        target = Field(grid, ref[k])
        pts = ens.positions[:, k * stride]
        dw = max(dw, dw_proxy(pts, target))
        if m.dim == 1:
            wd = max(wd, w1(pts, target))
        fk = Field(grid, pn[k])
        hold = max(hold, holder_seminorm(fk, gamma) + sup_norm(fk))
    out = [(N, seed, "sup_density_gap", sup_gap), (N, seed, "dw_proxy", dw)]
    if m.dim == 1:
        out.append((N, seed, "w1", wd))
    out += [(N, seed, "holder_norm", hold), (N, seed, "escaped", float(ens.escaped))]
    return out


def convergence_study(
    m: ModelSpec,
    sol: MfgSolution,
    N_values: Sequence[int],
    seeds_per_N: int,
    steps: int = 200,
    root_seed: int = 0,
    gamma: float = 0.4,
    threads: int = 1,
) -> ConvergenceReport:
    """Particle densities under the shared feedback ``α*`` against the MFG density.

    Every (N, seed) job simulates on its own named substream; the particle step
    count must be a multiple of the solution's so frames align.
    """
    if not sol.converged:
        raise SolverError("convergence study needs a converged MFG solution")
    if steps % sol.steps:
        raise ValueError(f"particle steps {steps} must be a multiple of solver steps {sol.steps}")
    stride = steps // sol.steps
    grid = sol.grid
    jobs = [
        (m, sol, grid, int(N), s, root_seed, steps, stride, gamma, 1)
        for N in sorted(N_values)
        for s in range(seeds_per_N)
    ]
    results = run_jobs(_convergence_job, jobs, threads)
    rows = tuple(r for res in results for r in res)
    return ConvergenceReport(tuple(sorted(int(n) for n in N_values)), tuple(range(seeds_per_N)), rows, m.name, gamma)


# -- epsilon-Nash ------------------------------------------------------------


def admissibility_bound(sol: MfgSolution, slack: float = 2.0, margin: float = 0.5) -> float:
    """Bound ``slack·K + margin`` on deviation feedbacks, ``K`` the value-gradient bound."""
    return slack * sol.k_bound + margin


def default_candidates(sol: MfgSolution) -> dict[str, FieldFlow]:
    """The standard deviation battery around ``α*``."""
    a = sol.alpha_star
    g = a.grid
    e1 = np.zeros((g.dim,) + g.shape)
    e1[0] = 1.0

    def flow(frames):
        return FieldFlow(g, a.t0, a.t1, frames, vector=True)

    out = {
        "zero": flow(np.zeros_like(a.frames)),
        "0.5*alpha": flow(0.5 * a.frames),
        "1.5*alpha": flow(1.5 * a.frames),
    }
    for c in (-0.5, -0.25, 0.25, 0.5):
        out[f"alpha{c:+g}e1"] = flow(a.frames + c * e1)
    for c in (-0.5, 0.5):
        out[f"const{c:+g}e1"] = flow(np.broadcast_to(c * e1, a.frames.shape).copy())
    return out


def best_response(m: ModelSpec, crowd: FieldFlow, steps: int, tol: float = 1e-10, max_iter: int = 200) -> FieldFlow:
    """Feedback ``-∇u`` of a single agent facing the frozen density flow ``crowd``."""
    from .solver import _backward_source  # local: private helper

    lad = Ladder(m, crowd.grid, steps)
    p = np.asarray(crowd.frames)[[(k * crowd.steps) // steps for k in range(steps + 1)]]
    g = m.g_field(crowd.grid).values
    theta_free = lad.backward_grad(g)
    theta = theta_free.copy()
    loop = _Picard(tol, max_iter, 1.0)
    for _ in range(max_iter):
        nxt = theta_free + lad.backward_duhamel(_backward_source(lad, p, theta), grad=True)
        res = float(np.abs(nxt - theta).max())
        theta = nxt
        if loop.update(res):
            break
    return lad.flow(-theta, vector=True)


@dataclass(frozen=True)
class NashGapReport:
    N_values: tuple
    per_N: tuple  # dicts, one per N
    rows: tuple  # (N, seed, metric, value)
    label: str = LOWER_BOUND_LABEL

    def gap_medians(self) -> np.ndarray:
        return np.array([e["candidate_gap_median"] for e in self.per_N])

    def to_csv(self) -> str:
        buf = io.StringIO()
        wr = csv.writer(buf, lineterminator="\n")
        wr.writerow(["N", "seed", "metric", "value"])
        for N, s, k, v in self.rows:
            wr.writerow([N, s, k, repr(float(v))])
        return buf.getvalue()

    def to_dict(self) -> dict:
        return {"label": self.label, "N_values": list(self.N_values), "per_N": list(self.per_N)}


def _nash_job(args):
    m, sol, profiles, N, seed, R, steps, root_seed, bound, use_cv = args
    grid = sol.grid
    raw = {k: ([], [], []) for k in profiles}
    resid = {k: [] for k in profiles}
    for r in range(R):
        cfg = SimConfig(N, steps, root_seed, stream_name=f"nash-N{N}-seed{seed}-rep{r}")
        streams = player_streams(m, cfg, grid)
        for name, dev in profiles.items():
            if name == EQUILIBRIUM:
                prof = FeedbackProfile(sol.alpha_star)
            else:
                prof = FeedbackProfile(sol.alpha_star, 0, dev, name)
            ens = simulate(m, cfg, prof, bound=bound, streams=streams)
            for acc, v in zip(raw[name], (ens.energy[0], ens.running[0], ens.terminal[0])):
                acc.append(v)
            if use_cv:
                # the deviator's own noise path through the mean-field dynamics
                e, ru, t = limit_path_costs(m, dev, sol.p, streams[0][:1], streams[1][:1].transpose(1, 0, 2))
                resid[name].append(ens.cost(0) - float(e[0] + ru[0] + t[0]))
    est = {k: CostEstimate.from_components(*v) for k, v in raw.items()}
    res = {k: np.array(v) for k, v in resid.items()} if use_cv else None
    return est, res


EQUILIBRIUM = "equilibrium"


def _cv_means(m, sol, profiles, steps, paths, root_seed):
    """Mean-field costs of every profile on one common set of paths."""
    rng = substream(root_seed, "nash-cv")
    x0 = np.asarray(m.sample_initial(rng, paths, sol.grid), dtype=float)
    xi = rng.standard_normal((steps, paths, m.dim))
    return {k: CostEstimate.from_components(*limit_path_costs(m, a, sol.p, x0, xi)) for k, a in profiles.items()}


def nash_gap_study(
    m: ModelSpec,
    sol: MfgSolution,
    N_values: Sequence[int],
    candidate_deviations: Mapping[str, FieldFlow] | None = None,
    seeds_per_N: int = 4,
    R: int = 8,
    steps: int = 100,
    root_seed: int = 0,
    bound: float | None = None,
    threads: int = 1,
    control_variate: bool = True,
    cv_paths: int = 100_000,
) -> NashGapReport:
    """Cost of player 0 under the equilibrium profile and under single deviations.

    Every replication runs the equilibrium and all deviations on the same random
    streams, so gaps are paired differences.  ``candidate_gap`` is the
    equilibrium mean minus the best deviation mean: a lower-bound estimate of
    the ε needed for an ε-Nash equilibrium.

    With ``control_variate`` each N-player cost ``J`` is paired with the cost
    ``J_lim`` of the deviator's own noise path under the mean-field dynamics,
    and the estimate is ``mean(J - J_lim) + E[J_lim]`` with ``E[J_lim]`` taken
    over ``cv_paths`` common paths.  This is unbiased and removes the noise the
    finite-N system shares with its limit.
    """
    cands = default_candidates(sol) if candidate_deviations is None else dict(candidate_deviations)
    if EQUILIBRIUM in cands:
        raise ValueError(f"candidate name {EQUILIBRIUM!r} is reserved")
    bound = admissibility_bound(sol) if bound is None else bound
    for name, c in cands.items():
        s = float(np.sqrt(np.sum(np.asarray(c.frames) ** 2, axis=1)).max())
        if s > bound:
            raise ValueError(f"candidate {name!r} has sup {s:.4g} above the admissibility bound {bound:.4g}")
    profiles = {EQUILIBRIUM: sol.alpha_star} | cands
    cv = _cv_means(m, sol, profiles, steps, cv_paths, root_seed) if control_variate else None
    Ns = sorted(int(n) for n in N_values)
    jobs = [(m, sol, profiles, N, s, R, steps, root_seed, bound, control_variate) for N in Ns for s in range(seeds_per_N)]
    results = run_jobs(_nash_job, jobs, threads)

    rows = []
    per_N = []
    for N in Ns:
        seeds = []
        for job, (est, res) in zip(jobs, results):
            if job[3] != N:
                continue
            s = job[4]
            if control_variate:
                means = {k: float(res[k].mean()) + cv[k].mean for k in profiles}
            else:
                means = {k: est[k].mean for k in profiles}
            winner = min(cands, key=lambda k: means[k])
            gap = means[EQUILIBRIUM] - means[winner]
            if control_variate:
                d = res[EQUILIBRIUM] - res[winner]
                _, cv_se = paired_difference(cv[EQUILIBRIUM], cv[winner])
                pse = math.hypot(float(np.std(d, ddof=1) / math.sqrt(R)), cv_se)
                se_eq = math.hypot(float(np.std(res[EQUILIBRIUM], ddof=1) / math.sqrt(R)), cv[EQUILIBRIUM].std_error)
                se_w = math.hypot(float(np.std(res[winner], ddof=1) / math.sqrt(R)), cv[winner].std_error)
            else:
                _, pse = paired_difference(est[EQUILIBRIUM], est[winner])
                se_eq, se_w = est[EQUILIBRIUM].std_error, est[winner].std_error
            comb = math.hypot(se_eq, se_w)
            seeds.append({"seed": s, "gap": gap, "paired_se": pse, "combined_se": comb, "winner": winner,
                          "J_eq": means[EQUILIBRIUM], "J_dev": means[winner], "se_eq": se_eq, "se_dev": se_w,
                          "raw_eq": est[EQUILIBRIUM], "raw_dev": est[winner]})
            rows += [
                (N, s, "J_equilibrium", means[EQUILIBRIUM]),
                (N, s, "J_best_deviation", means[winner]),
                (N, s, "candidate_gap", gap),
                (N, s, "paired_se", pse),
                (N, s, "combined_se", comb),
                (N, s, "raw_J_equilibrium", est[EQUILIBRIUM].mean),
                (N, s, "raw_J_best_deviation", est[winner].mean),
            ]
        gaps = [e["gap"] for e in seeds]
        mid = seeds[int(np.argsort(gaps)[len(gaps) // 2])]

        def _est(mean, se, raw):
            return {"mean": mean, "std_error": se, "n_samples": raw.n_samples, "raw": raw.to_dict()}

        per_N.append({
            "N": N,
            "J_equilibrium": _est(mid["J_eq"], mid["se_eq"], mid["raw_eq"]),
            "J_best_deviation": _est(mid["J_dev"], mid["se_dev"], mid["raw_dev"]),
            "candidate_gap": mid["gap"],
            "candidate_gap_median": float(np.median(gaps)),
            "paired_se_median": float(np.median([e["paired_se"] for e in seeds])),
            "combined_se_median": float(np.median([e["combined_se"] for e in seeds])),
            "deviation_winner": mid["winner"],
            "winners": [e["winner"] for e in seeds],
        })
    return NashGapReport(tuple(Ns), tuple(per_N), tuple(rows))


def spearman_trend(values: Sequence[float]) -> float:
    """Spearman rank correlation of ``values`` against their position."""
    v = np.asarray(values, dtype=float)
    if v.size < 2 or np.all(v == v[0]):
        return 0.0
    return float(stats.spearmanr(np.arange(v.size), v).statistic)


def write_report(path, report) -> None:
    from pathlib import Path

    p = Path(path)
    p.mkdir(parents=True, exist_ok=True)
    (p / "report.json").write_text(json.dumps(report.to_dict(), indent=2))
    (p / "report.csv").write_text(report.to_csv())
