"""Euler-Maruyama simulation of the moderately interacting N-player system.

Each player ``i`` moves by

    X_{k+1} = X_k + Δt [α_i(t_k, X_k) + b(X_k, ρ_k^i)] + sqrt(Δt) ξ_k

with ``ρ_k^i = (1/N) Σ_j V^N(X_k^i - X_k^j)``, the self term included.  The
noise of particle ``i`` and its initial draw come from a counter-based
Philox stream keyed by ``(root seed, stream name, i)``, so trajectories do not
depend on thread count or on how many other particles exist.
"""
from __future__ import annotations

import math
import struct
import zlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import kernels
from .grid import Field, FieldFlow, Grid
from .model import ModelSpec, mollifier_for

__all__ = [
    "SimConfig",
    "FeedbackProfile",
    "ParticleEnsemble",
    "EmpiricalDensity",
    "simulate",
    "empirical_density",
    "deposit_points",
    "interaction_density",
    "interpolate",
    "substream",
    "player_streams",
    "write_trajectories",
    "read_trajectories",
]

TRAJ_MAGIC = b"MFGT"
_TRAJ_HEAD = struct.Struct("<4sIII")
# above this expected neighbour fraction the cell list buys nothing
_DIRECT_FRACTION = 0.5


def substream(seed: int, name: str, index: int = 0) -> np.random.Generator:
    """Philox generator for the named substream ``name`` of the root ``seed``.

    The key packs the root seed with a CRC of the name; ``index`` selects an
    independent counter-based stream within it.
    """
    tag = zlib.crc32(name.encode("utf-8"))
    key = np.array([(int(seed) & 0xFFFFFFFF) << 32 | tag, int(index)], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


@dataclass(frozen=True)
class SimConfig:
    """Particle run parameters.

    ``stream_order[i]`` is the RNG stream used by particle ``i`` (identity by
    default); ``zero_noise`` switches the Brownian increments off.
    """

    N: int
    steps: int = 200
    rng_seed: int = 0
    neighbor_cell_size: float | None = None
    threads: int = 1
    zero_noise: bool = False
    stream_order: tuple | None = None
    stream_name: str = ""

    def __post_init__(self):
        if self.N < 2:
            raise ValueError("need N >= 2 players")
        if self.steps < 1:
            raise ValueError("need at least one time step")
        if self.stream_order is not None and sorted(self.stream_order) != list(range(self.N)):
            raise ValueError("stream_order must be a permutation of range(N)")

    def dt(self, T: float) -> float:
        return T / self.steps

    @property
    def name(self) -> str:
        return self.stream_name or f"sim-N{self.N}-seed{self.rng_seed}"


@dataclass(frozen=True)
class FeedbackProfile:
    """Shared feedback ``alpha`` for everyone, optionally one deviator.

    Feedback flows are vector FieldFlows on a common grid, read multilinearly
    in space and left-constant in time.
    """

    alpha: FieldFlow
    deviator: int | None = None
    deviation: FieldFlow | None = None
    label: str = "shared"

    def __post_init__(self):
        if not self.alpha.vector:
            raise ValueError("feedback must be a vector FieldFlow")
        if (self.deviator is None) != (self.deviation is None):
            raise ValueError("deviator index and deviation feedback go together")
        if self.deviation is not None and self.deviation.grid != self.alpha.grid:
            raise ValueError("deviation feedback lives on a different grid")

    @property
    def grid(self) -> Grid:
        return self.alpha.grid

    def sup(self) -> float:
        flows = [self.alpha] + ([self.deviation] if self.deviation is not None else [])
        return max(float(np.sqrt(np.sum(f.frames**2, axis=1)).max()) for f in flows)


def interpolate(frame: np.ndarray, grid: Grid, pts: np.ndarray) -> np.ndarray:
    """Multilinear interpolation of a vector frame ``(d, *shape)`` at ``pts (K, d)``.

    Outside the grid the boundary value is held constant.
    """
    d = grid.dim
    s = (np.clip(pts, -grid.half_width, grid.half_width - grid.h) + grid.half_width) / grid.h
    i0 = np.minimum(np.floor(s).astype(np.intp), grid.n - 2)
    w = s - i0
    if d == 1:
        lo = frame[:, i0[:, 0]]
        hi = frame[:, i0[:, 0] + 1]
        return (lo * (1 - w[:, 0]) + hi * w[:, 0]).T
    a, b = i0[:, 0], i0[:, 1]
    wa, wb = w[:, 0], w[:, 1]
    v = (
        frame[:, a, b] * (1 - wa) * (1 - wb)
        + frame[:, a + 1, b] * wa * (1 - wb)
        + frame[:, a, b + 1] * (1 - wa) * wb
        + frame[:, a + 1, b + 1] * wa * wb
    )
    return v.T


def interaction_density(pos: np.ndarray, m: ModelSpec, cell: float | None = None, threads: int = 1,
                        method: str = "auto") -> np.ndarray:
    """``ρ^i = (1/N) Σ_j V^N(x_i - x_j)`` for every particle, self term included."""
    pos = np.ascontiguousarray(pos, dtype=float)
    N = pos.shape[0]
    mol = mollifier_for(m, N)
    cell = mol.eps if cell is None else float(cell)
    if cell < mol.eps:
        raise ValueError(f"neighbour cell {cell:.4g} smaller than the kernel radius {mol.eps:.4g}")
    if method == "auto":
        span = np.ptp(pos, axis=0)
        frac = np.prod(np.minimum(1.0, 3 * cell / np.maximum(span, 1e-300)))
        method = "direct" if frac > _DIRECT_FRACTION else "cells"
    if method == "direct":
        sums = kernels.profile_sums_direct(pos, mol.inv_eps, threads)
    elif method == "cells":
        sums = kernels.profile_sums_cells(pos, mol.inv_eps, cell, threads)
    else:
        raise ValueError("method must be 'auto', 'direct' or 'cells'")
    return mol.rho_scale * sums


@dataclass(frozen=True)
class ParticleEnsemble:
    """Trajectories plus the per-player cost ledger accumulated while simulating.

    ``rho[i, k]`` is the interaction density felt by player ``i`` at step ``k``
    (``k = 0..M-1``); ``energy``, ``running`` and ``terminal`` are the left
    rectangle cost components of each player.
    """

    positions: np.ndarray  # (N, M+1, d)
    T: float
    rho: np.ndarray
    energy: np.ndarray
    running: np.ndarray
    terminal: np.ndarray
    deviator_index: int | None
    profile_label: str
    escaped: int
    config: SimConfig

    @property
    def N(self) -> int:
        return self.positions.shape[0]

    @property
    def steps(self) -> int:
        return self.positions.shape[1] - 1

    @property
    def dim(self) -> int:
        return self.positions.shape[2]

    @property
    def dt(self) -> float:
        return self.T / self.steps

    def cost(self, i: int) -> float:
        return float(self.energy[i] + self.running[i] + self.terminal[i])


def player_streams(m: ModelSpec, cfg: SimConfig, grid: Grid, players=None):
    """Initial positions ``(K, d)`` and standard normal increments ``(K, M, d)``.

    ``players`` selects particle indices (all by default).  The draws of one
    particle are the same whatever else is requested.
    """
    N, M, d = cfg.N, cfg.steps, m.dim
    players = range(N) if players is None else players
    order = range(N) if cfg.stream_order is None else cfg.stream_order
    x0 = np.empty((len(players), d))
    xi = np.zeros((len(players), M, d))
    base = cfg.name
    for row, i in enumerate(players):
        s = order[i]
        x0[row] = m.sample_initial(substream(cfg.rng_seed, base + "/init", s), 1, grid)[0]
        if not cfg.zero_noise:
            xi[row] = substream(cfg.rng_seed, base + "/noise", s).standard_normal((M, d))
    return x0, xi


def simulate(m: ModelSpec, cfg: SimConfig, profile: FeedbackProfile, bound: float | None = None,
             initial: np.ndarray | None = None, streams: tuple | None = None) -> ParticleEnsemble:
    """Euler-Maruyama run of the N-player system under ``profile``.

    Parameters
    ----------
    bound : float, optional
        Admissibility bound on the feedback fields; exceeding it is an error.
    initial : array (N, d), optional
        Fixed initial positions instead of draws from ``p0``.
    streams : tuple, optional
        Precomputed ``player_streams(m, cfg, grid)`` output, reused across
        profiles that share a configuration.
    """
    if bound is not None and profile.sup() > bound:
        raise ValueError(f"feedback sup {profile.sup():.4g} exceeds admissibility bound {bound:.4g}")
    grid = profile.grid
    if grid.dim != m.dim:
        raise ValueError("feedback grid and model dimensions differ")
    N, M, d = cfg.N, cfg.steps, m.dim
    dt = cfg.dt(m.T)
    sq = math.sqrt(dt)
    x0, xi = player_streams(m, cfg, grid) if streams is None else streams
    if initial is not None:
        x0 = np.array(initial, dtype=float).reshape(N, d)
    dev = profile.deviator
    if dev is not None and not 0 <= dev < N:
        raise ValueError(f"deviator index {dev} outside 0..{N - 1}")

    X = np.empty((N, M + 1, d))
    X[:, 0] = x0
    rho = np.empty((N, M))
    energy = np.zeros(N)
    running = np.zeros(N)
    amax = profile.alpha.steps
    L = grid.half_width
    escaped = np.zeros(N, dtype=bool)
    for k in range(M):
        x = np.ascontiguousarray(X[:, k])
        escaped |= np.any(np.abs(x) > L, axis=1)
        r = interaction_density(x, m, cfg.neighbor_cell_size, cfg.threads)
        rho[:, k] = r
        fk = (k * amax) // M
        a = interpolate(profile.alpha.frames[fk], grid, x)
        if dev is not None:
            dk = (k * profile.deviation.steps) // M
            a[dev] = interpolate(profile.deviation.frames[dk], grid, x[dev : dev + 1])[0]
        energy += dt * 0.5 * np.sum(a * a, axis=1)
        running += dt * np.asarray(m.running_cost(x, r), dtype=float)
        drift = a + np.asarray(m.drift(x, r), dtype=float)
        nxt = x + dt * drift + sq * xi[:, k]
        if not np.all(np.isfinite(nxt)):
            bad = int(np.argwhere(~np.isfinite(nxt).all(axis=1))[0][0])
            raise FloatingPointError(f"non-finite position at step {k + 1}, particle {bad}")
        X[:, k + 1] = nxt
    escaped |= np.any(np.abs(X[:, M]) > L, axis=1)
    terminal = np.asarray(m.terminal_cost(X[:, M]), dtype=float)
    return ParticleEnsemble(
        positions=X,
        T=m.T,
        rho=rho,
        energy=energy,
        running=running,
        terminal=terminal,
        deviator_index=dev,
        profile_label=profile.label,
        escaped=int(escaped.sum()),
        config=cfg,
    )


# -- empirical density -------------------------------------------------------


@dataclass(frozen=True)
class EmpiricalDensity:
    grid: Grid
    frames: FieldFlow
    N: int

    def masses(self) -> np.ndarray:
        axes = tuple(range(1, self.frames.frames.ndim))
        return self.frames.frames.sum(axis=axes) * self.grid.cell_volume


def _check_resolution(mol, grid: Grid):
    if mol.eps < 4 * grid.h:
        need = 1 << math.ceil(math.log2(8 * grid.half_width / mol.eps))
        raise ValueError(
            f"grid spacing {grid.h:.4g} does not resolve the kernel radius {mol.eps:.4g} "
            f"with 4 nodes; use n >= {need}"
        )


def deposit_points(points: np.ndarray, m: ModelSpec, grid: Grid, normalize: bool = True) -> Field:
    """``(1/K) Σ_i V^K(x - x_i)`` on ``grid`` for ``K`` points; see :func:`empirical_density`."""
    pts = np.ascontiguousarray(np.reshape(points, (-1, m.dim)), dtype=float)
    mol = mollifier_for(m, pts.shape[0])
    vals = kernels.deposit(pts, grid.half_width, grid.h, grid.n, mol.eps, mol.inv_eps, normalize, mol.rho_scale)
    return Field(grid, vals)


def empirical_density(ens: ParticleEnsemble, m: ModelSpec, grid: Grid, frame_stride: int = 1,
                      normalize: bool = True) -> EmpiricalDensity:
    """Mollified empirical density ``(1/N) Σ_i V^N(x - X^i)`` on ``grid``.

    With ``normalize`` each particle deposits a unit discrete mass (its sampled
    kernel divided by the node sum), so frames integrate to one up to round-off
    even when ``h`` is a sizeable fraction of the kernel radius.  Without it the
    kernel values are deposited as they are.
    """
    _check_resolution(mollifier_for(m, ens.N), grid)
    if ens.steps % frame_stride:
        raise ValueError("frame_stride must divide the number of steps")
    ks = range(0, ens.steps + 1, frame_stride)
    frames = np.stack([deposit_points(ens.positions[:, k], m, grid, normalize).values for k in ks])
    return EmpiricalDensity(grid, FieldFlow(grid, 0.0, ens.T, frames), ens.N)


# -- trajectory dump ---------------------------------------------------------


def write_trajectories(path: str | Path, ens: ParticleEnsemble) -> None:
    with open(path, "wb") as fh:
        fh.write(_TRAJ_HEAD.pack(TRAJ_MAGIC, ens.N, ens.steps, ens.dim))
        fh.write(np.ascontiguousarray(ens.positions, dtype="<f8").tobytes())


def read_trajectories(path: str | Path) -> np.ndarray:
    raw = Path(path).read_bytes()
    magic, N, M, d = _TRAJ_HEAD.unpack_from(raw)
    if magic != TRAJ_MAGIC:
        raise ValueError("not a trajectory file")
    body = np.frombuffer(raw, dtype="<f8", offset=_TRAJ_HEAD.size)
    return body.reshape(N, M + 1, d).copy()
