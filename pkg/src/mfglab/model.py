"""Game data: coefficients, initial law, interaction kernel, and checks of (H1)-(H4).

Coefficient callables are vectorised.  Points carry the coordinate on the last
axis, so ``x`` has shape ``(..., d)`` and a density argument ``rho`` has shape
``(...)``:

* ``drift(x, rho) -> (..., d)``
* ``running_cost(x, rho) -> (...)``
* ``terminal_cost(x) -> (...)``
* ``initial_density(x) -> (...)``
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np

from .grid import Field, Grid, field_from_function, integrate

__all__ = [
    "BumpKernel",
    "Mollifier",
    "ModelSpec",
    "ValidationReport",
    "CATALOG",
    "builtin_model",
    "validate_hypotheses",
    "mollifier_for",
    "BETA_RANGE_MESSAGE",
]

BETA_RANGE_MESSAGE = "(H3) requires beta in (0, 1/2)"


@dataclass(frozen=True)
class BumpKernel:
    """Radial bump ``V(x) = c_d (1 - |x|^2)^2`` on the unit ball.

    C¹ with compact support and unit mass.  ``c_d`` is the exact
    normalisation ``Γ(3 + d/2) / (π^{d/2} Γ(3))``.
    """

    dim: int

    @property
    def support_radius(self) -> float:
        return 1.0

    @property
    def norm(self) -> float:
        d = self.dim
        return math.gamma(3 + d / 2) / (math.pi ** (d / 2) * math.gamma(3))

    @staticmethod
    def profile(r2):
        """Unnormalised ``(1 - r²)²``, zero for ``r² >= 1``."""
        t = 1.0 - np.asarray(r2, dtype=float)
        return np.where(t > 0.0, t * t, 0.0)

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        return self.norm * self.profile(np.sum(x * x, axis=-1))


@dataclass(frozen=True)
class Mollifier:
    """``V^N(x) = N^β V(N^{β/d} x)`` with support radius ``eps = N^{-β/d}``."""

    N: int
    beta: float
    kernel: BumpKernel

    def __post_init__(self):
        if self.N < 1:
            raise ValueError("N must be >= 1")

    @property
    def dim(self) -> int:
        return self.kernel.dim

    @property
    def eps(self) -> float:
        return float(self.N) ** (-self.beta / self.dim)

    @property
    def inv_eps(self) -> float:
        return float(self.N) ** (self.beta / self.dim)

    @property
    def amplitude(self) -> float:
        return float(self.N) ** self.beta

    @property
    def peak(self) -> float:
        return self.amplitude * self.kernel.norm

    @property
    def rho_scale(self) -> float:
        """Factor turning a sum of raw profiles into ``(1/N) Σ_j V^N``."""
        return self.amplitude * self.kernel.norm / self.N

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        return self.amplitude * self.kernel(x * self.inv_eps)


@dataclass(frozen=True)
class ModelSpec:
    dim: int
    T: float
    drift: Callable
    running_cost: Callable
    terminal_cost: Callable
    initial_density: Callable
    beta: float = 0.3
    bound_C: float = 0.0
    bound_L: float = 0.0
    name: str = "custom"
    params: Mapping = field(default_factory=dict)
    # draws N initial points from p0 given a Generator; grid inverse-CDF when absent
    p0_sampler: Callable | None = None
    p0_radius: float = 4.0

    def __post_init__(self):
        if not 0.0 < self.beta < 0.5:
            raise ValueError(f"{BETA_RANGE_MESSAGE}, got {self.beta}")
        if self.dim not in (1, 2):
            raise ValueError("dim must be 1 or 2")
        if not self.T > 0:
            raise ValueError("T must be positive")

    @property
    def kernel(self) -> BumpKernel:
        return BumpKernel(self.dim)

    def p0_field(self, grid: Grid) -> Field:
        """Initial density on ``grid``, renormalised to unit discrete mass."""
        f = field_from_function(grid, self.initial_density)
        if (f.values < 0).any():
            raise ValueError("initial density takes negative values")
        return f * (1.0 / integrate(f))

    def g_field(self, grid: Grid) -> Field:
        return field_from_function(grid, self.terminal_cost)

    def sample_initial(self, rng: np.random.Generator, N: int, grid: Grid | None = None) -> np.ndarray:
        if self.p0_sampler is not None:
            return np.asarray(self.p0_sampler(rng, N), dtype=float).reshape(N, self.dim)
        if grid is None:
            raise ValueError("model has no exact sampler; pass a grid for inverse-CDF sampling")
        return _grid_sample(self.p0_field(grid), rng, N)

    def suggested_half_width(self, control_bound: float = 0.0) -> float:
        """Domain rule ``L >= radius(p0) + (C + K) T + 4 sqrt(T)``."""
        return self.p0_radius + (self.bound_C + control_bound) * self.T + 4.0 * math.sqrt(self.T)


def _grid_sample(p0: Field, rng: np.random.Generator, N: int) -> np.ndarray:
    g = p0.grid
    w = p0.values.reshape(-1)
    cdf = np.cumsum(w)
    cdf /= cdf[-1]
    u = rng.random((N, 1 + g.dim))
    idx = np.minimum(np.searchsorted(cdf, u[:, 0], side="right"), cdf.size - 1)
    nodes = np.stack(np.unravel_index(idx, g.shape), axis=-1)
    return -g.half_width + (nodes + u[:, 1:] - 0.5) * g.h


def mollifier_for(m: ModelSpec, N: int) -> Mollifier:
    return Mollifier(int(N), m.beta, m.kernel)


# -- catalogue ---------------------------------------------------------------

_COMMON = {
    "dim": 1,
    "T": 0.5,
    "beta": 0.3,
    "p0_mean": 0.0,
    "p0_std": 0.5,
    "g_amp": 1.0,
    "g_center": 1.0,
    "g_width": 1.0,
}
_SPECIFIC = {
    "free": {"g_amp": 0.0},
    "congestion": {"c": 1.0},
    "drift-congestion": {"kappa": 0.5, "c": 1.0},
}
CATALOG = tuple(_SPECIFIC)


def _gaussian_p0(dim, mean, std):
    mu = np.zeros(dim)
    mu[0] = mean
    norm = (2 * math.pi * std * std) ** (-dim / 2)

    def density(x):
        x = np.asarray(x, dtype=float)
        return norm * np.exp(-np.sum((x - mu) ** 2, axis=-1) / (2 * std * std))

    def sampler(rng, N):
        return mu + std * rng.standard_normal((N, dim))

    return density, sampler


def _target_cost(dim, amp, center, width):
    c = np.zeros(dim)
    c[0] = center

    def g(x):
        x = np.asarray(x, dtype=float)
        return amp * (1.0 - np.exp(-np.sum((x - c) ** 2, axis=-1) / (2 * width * width)))

    return g


def builtin_model(name: str, params: Mapping | None = None) -> ModelSpec:
    """Concrete models with analytically known (H1) constants.

    ``free``: ``b = f = 0``.  ``congestion``: ``f(x, ρ) = c ρ/(1+ρ)``, ``b = 0``.
    ``drift-congestion``: ``b(x, ρ) = -κ tanh(ρ) x/(1+|x|)`` plus the congestion
    cost.  All share a Gaussian ``p0`` and the target cost
    ``g(x) = a (1 - exp(-|x - c e1|²/2w²))``.
    """
    if name not in _SPECIFIC:
        raise ValueError(f"unknown model {name!r}; catalog: {', '.join(CATALOG)}")
    cfg = dict(_COMMON)
    cfg.update(_SPECIFIC[name])
    for key, val in (params or {}).items():
        if key not in cfg:
            raise ValueError(f"unknown parameter {key!r} for model {name!r}; allowed: {sorted(cfg)}")
        cfg[key] = val
    d = int(cfg["dim"])
    density, sampler = _gaussian_p0(d, float(cfg["p0_mean"]), float(cfg["p0_std"]))
    g = _target_cost(d, float(cfg["g_amp"]), float(cfg["g_center"]), float(cfg["g_width"]))

    def zero_drift(x, rho):
        return np.zeros(np.shape(x))

    def zero_cost(x, rho):
        return np.zeros(np.shape(x)[:-1])

    if name == "free":
        b, f, C, L = zero_drift, zero_cost, 0.0, 0.0
    else:
        c = float(cfg["c"])

        def f(x, rho, c=c):
            rho = np.asarray(rho, dtype=float)
            return c * rho / (1.0 + rho)

        if name == "congestion":
            b, C, L = zero_drift, abs(c), abs(c)
        else:
            kappa = float(cfg["kappa"])

            def b(x, rho, kappa=kappa):
                x = np.asarray(x, dtype=float)
                r = np.sqrt(np.sum(x * x, axis=-1, keepdims=True))
                return -kappa * np.tanh(np.asarray(rho, dtype=float))[..., None] * x / (1.0 + r)

            C = L = abs(kappa) + abs(c)

    return ModelSpec(
        dim=d,
        T=float(cfg["T"]),
        drift=b,
        running_cost=f,
        terminal_cost=g,
        initial_density=density,
        beta=float(cfg["beta"]),
        bound_C=C,
        bound_L=L,
        name=name,
        params=cfg,
        p0_sampler=sampler,
        p0_radius=abs(float(cfg["p0_mean"])) + 4.0 * float(cfg["p0_std"]),
    )


# -- hypothesis checks -------------------------------------------------------


@dataclass
class Check:
    name: str
    passed: bool
    value: float
    bound: float | None
    message: str = ""


@dataclass
class ValidationReport:
    checks: list[Check]

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def failures(self) -> list[Check]:
        return [c for c in self.checks if not c.passed]

    def __getitem__(self, name: str) -> Check:
        for c in self.checks:
            if c.name == name:
                return c
        raise KeyError(name)

    def to_dict(self) -> dict:
        return {
            "passed": self.passed,
            "checks": [vars(c) for c in self.checks],
        }


def _bf(m: ModelSpec, x, rho):
    b = np.asarray(m.drift(x, rho), dtype=float)
    f = np.asarray(m.running_cost(x, rho), dtype=float)
    return b, f


def validate_hypotheses(
    m: ModelSpec, samples: int = 4096, rng_seed: int = 0, radius: float = 8.0, slack: float = 1.01
) -> ValidationReport:
    """Monte Carlo certificates of the declared (H1) constants plus spot checks of (H2)-(H4).

    Sup and Lipschitz estimates are lower bounds of the true constants, so a
    PASS means "no counterexample found"; a FAIL is a genuine counterexample.
    The exponential-moment condition of (H4) is checked for λ ∈ {0.5, 1, 2}
    only, by comparing quadratures on two nested boxes.
    """
    if samples < 1000:
        raise ValueError("samples must be >= 1000")
    rng = np.random.default_rng(rng_seed)
    d = m.dim
    checks: list[Check] = []

    checks.append(Check("H3.beta", 0.0 < m.beta < 0.5, m.beta, 0.5, BETA_RANGE_MESSAGE))

    x = rng.uniform(-radius, radius, (samples, d))
    rho = np.concatenate(
        [
            np.zeros(samples // 8),
            rng.uniform(0.0, 10.0, samples // 2),
            10.0 ** rng.uniform(-3, 5, samples - samples // 8 - samples // 2),
        ]
    )
    b, f = _bf(m, x, rho)
    sup = float(np.max(np.sqrt(np.sum(b * b, axis=-1)) + np.abs(f)))
    checks.append(
        Check("H1.sup", sup <= m.bound_C * slack + 1e-12, sup, m.bound_C, "sampled sup of |b| + |f|")
    )

    scale = 10.0 ** rng.uniform(-4, 0, (samples, 1))
    dx = rng.standard_normal((samples, d)) * scale
    drho = rng.standard_normal(samples) * scale[:, 0] * 10.0 ** rng.uniform(-1, 1, samples)
    y = x + dx
    q = np.abs(rho + drho)
    b2, f2 = _bf(m, y, q)
    num = np.sqrt(np.sum((b - b2) ** 2, axis=-1)) + np.abs(f - f2)
    den = np.sqrt(np.sum(dx * dx, axis=-1)) + np.abs(rho - q)
    lip = float(np.max(num / den))
    checks.append(
        Check("H1.lipschitz", lip <= m.bound_L * slack + 1e-12, lip, m.bound_L, "sampled Lipschitz quotient")
    )

    gx = np.asarray(m.terminal_cost(x), dtype=float)
    step = 1e-6
    grad = np.stack(
        [(np.asarray(m.terminal_cost(x + step * e), dtype=float) - gx) / step for e in np.eye(d)], axis=-1
    )
    gsup = float(np.max(np.abs(gx)))
    gradsup = float(np.max(np.sqrt(np.sum(grad * grad, axis=-1))))
    checks.append(
        Check("H2.g", bool(np.isfinite(gsup) and np.isfinite(gradsup)), max(gsup, gradsup), None,
              "sup of |g| and |grad g| (finite)")
    )

    kmass = _kernel_mass(m.kernel)
    checks.append(Check("H3.kernel_mass", abs(kmass - 1.0) <= 1e-8, kmass, 1.0, "integral of V"))

    inner = Grid(d, radius, 1024 if d == 1 else 256)
    outer = Grid(d, 2 * radius, 2048 if d == 1 else 512)
    p_in = field_from_function(inner, m.initial_density)
    mass = integrate(p_in)
    checks.append(Check("H4.mass", abs(mass - 1.0) <= 1e-6, mass, 1.0, "integral of p0"))
    checks.append(Check("H4.nonnegative", bool((p_in.values >= 0).all()), float(p_in.values.min()), 0.0))
    p_out = field_from_function(outer, m.initial_density)
    r_in = np.sqrt(np.sum(inner.points() ** 2, axis=-1))
    r_out = np.sqrt(np.sum(outer.points() ** 2, axis=-1))
    for lam in (0.5, 1.0, 2.0):
        a = integrate(p_in * np.exp(lam * r_in))
        b_ = integrate(p_out * np.exp(lam * r_out))
        ok = bool(np.isfinite(a) and np.isfinite(b_) and abs(b_ - a) <= 1e-6 * max(abs(b_), 1.0))
        checks.append(
            Check(f"H4.exp_moment[{lam}]", ok, b_, None, "quadrature stable between nested boxes")
        )
    return ValidationReport(checks)


def _kernel_mass(kernel: BumpKernel) -> float:
    # fine grid: the quartic's rectangle-rule error decays like h^4
    grid = Grid(kernel.dim, 1.5, 4096 if kernel.dim == 1 else 1024)
    return integrate(field_from_function(grid, kernel))
