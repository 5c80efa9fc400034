"""Quick oracle battery behind ``mfglab selftest``.

Every check compares against an exact or independently computed answer and
runs in seconds on one core.
"""
from __future__ import annotations

import math
import time
from typing import Callable

import numpy as np

from . import kernels
from .analysis import cost_nplayer, dw_proxy
from .forward import solve_forward
from .grid import Field, FieldFlow, Grid, field_from_function, integrate, sup_norm
from .model import BumpKernel, Mollifier, builtin_model
from .particles import FeedbackProfile, SimConfig, empirical_density, simulate
from .semigroup import HeatOperator
from .solver import gamma_step, hopf_cole_floor, solve_hopf_cole, solve_mfg, verify_mild_residual


def _gauss(var):
    return lambda x: np.exp(-np.sum(x * x, axis=-1) / (2 * var)) / np.sqrt(2 * np.pi * var)


def check_semigroup_gaussian():
    g = Grid(1, 8.0, 512)
    H = HeatOperator(g)
    err = float(np.abs(H.apply(0.5, field_from_function(g, _gauss(0.25))).values
                       - field_from_function(g, _gauss(0.75)).values).max())
    return err <= 1e-8, f"sup error {err:.2e}"


def check_semigroup_law():
    g = Grid(1, 8.0, 512)
    H = HeatOperator(g)
    f = field_from_function(g, lambda x: np.exp(-x[..., 0] ** 2) * np.cos(3 * x[..., 0]))
    err = float(np.abs(H.apply(0.2, H.apply(0.3, f)).values - H.apply(0.5, f).values).max())
    return err <= 1e-9, f"sup error {err:.2e}"


def check_gradient_bound():
    g = Grid(1, 8.0, 256)
    H = HeatOperator(g)
    rng = np.random.default_rng(0)
    worst = 0.0
    for _ in range(20):
        f = Field(g, rng.uniform(-1, 1, g.shape))
        t = rng.uniform(0.01, 1.0)
        worst = max(worst, sup_norm(H.apply_gradient(t, f)) * math.sqrt(t) / sup_norm(f))
    return worst <= 1.0, f"max ratio {worst:.3f}"


def check_mollifier_mass():
    g = Grid(1, 2.0, 1 << 14)
    errs = []
    for N in (1, 100, 10_000):
        mol = Mollifier(N, 0.3, BumpKernel(1))
        errs.append(abs(integrate(Field(g, mol(g.points()))) - 1.0))
    v1 = Mollifier(1, 0.3, BumpKernel(1))
    x = np.linspace(-1, 1, 41)[:, None]
    same = np.array_equal(v1(x), BumpKernel(1)(x))
    return max(errs) <= 1e-8 and same, f"mass errors {max(errs):.1e}, V^1 == V: {same}"


def check_free_solve():
    m = builtin_model("free")
    sol = solve_mfg(m, Grid(1, 8.0, 256), 20)
    ok = sol.converged and sol.iterations <= 2 and sol.k_bound == 0.0 and float(np.abs(sol.u.frames).max()) == 0.0
    return ok, f"iterations {sol.iterations}, k_bound {sol.k_bound}"


def check_gamma_fixed_point():
    m = builtin_model("free")
    g = Grid(1, 8.0, 256)
    H = HeatOperator(g)
    p = H.flow(m.p0_field(g), 20, m.T)
    th = FieldFlow(g, 0.0, m.T, np.zeros((21, 1, 256)), vector=True)
    p2, t2 = gamma_step(m, H, (p, th))
    err = max(float(np.abs(p2.frames - p.frames).max()), float(np.abs(t2.frames).max()))
    return err <= 1e-10, f"sup change {err:.1e}"


def check_forward_heat():
    m = builtin_model("free")
    g = Grid(1, 8.0, 256)
    a = FieldFlow(g, 0.0, m.T, np.zeros((21, 1, 256)), vector=True)
    lim = solve_forward(m, a, g, 20)
    ref = HeatOperator(g).flow(m.p0_field(g), 20, m.T)
    err = float(np.abs(lim.p.frames - ref.frames).max())
    return err <= 1e-8 and lim.iterations == 1, f"sup error {err:.1e}, iterations {lim.iterations}"


def check_cell_list():
    rng = np.random.default_rng(1)
    m = builtin_model("congestion")
    ok = True
    for _ in range(10):
        N = int(rng.integers(2, 257))
        pos = rng.normal(size=(N, 1))
        eps = N ** (-m.beta)
        ok &= np.array_equal(kernels.profile_sums_cells(pos, 1 / eps, eps), kernels.profile_sums_direct(pos, 1 / eps))
    return bool(ok), f"backend {kernels.BACKEND}"


def check_particles_deterministic():
    m = builtin_model("free")
    g = Grid(1, 8.0, 256)
    a = FieldFlow(g, 0.0, m.T, np.full((11, 1, 256), 0.3), vector=True)
    ens = simulate(m, SimConfig(5, 10, 3, zero_noise=True), FeedbackProfile(a))
    x0 = ens.positions[:, 0]
    lines = x0[:, None, :] + 0.3 * (np.arange(11) * (m.T / 10))[None, :, None]
    err = float(np.abs(ens.positions - lines).max())
    J = cost_nplayer(ens, 0)
    return err <= 1e-12 and abs(J.mean - 0.5 * 0.09 * m.T) <= 1e-12, f"path error {err:.1e}, cost {J.mean:.6f}"


def check_density_mass():
    m = builtin_model("congestion")
    g = Grid(1, 8.0, 1024)
    a = FieldFlow(g, 0.0, m.T, np.zeros((5, 1, 1024)), vector=True)
    ens = simulate(m, SimConfig(400, 20, 0), FeedbackProfile(a))
    emp = empirical_density(ens, m, g, 5)
    err = float(np.abs(emp.masses() - 1).max())
    return err <= 1e-8 and float(emp.frames.frames.min()) >= 0, f"mass error {err:.1e}"


def check_dw_dirac():
    a = 0.37
    v = dw_proxy(np.array([[0.0]]), np.array([[a]]))
    return abs(v - a) <= 1 / 64, f"proxy {v:.4f} for separation {a}"


def check_hopf_cole_trivial():
    m = builtin_model("free")
    g = Grid(1, 8.0, 256)
    hc = solve_hopf_cole(m, g, 20)
    err = float(np.abs(hc.w.frames - 1).max())
    return err <= 1e-12, f"max |w - 1| {err:.1e}"


def check_congestion_solve():
    m = builtin_model("congestion")
    g = Grid(1, 8.0, 256)
    sol = solve_mfg(m, g, 50)
    hc = solve_hopf_cole(m, g, 50)
    disc = float(np.abs(hc.u_from_w.frames - sol.u.frames).max())
    floor = hopf_cole_floor(m, g, sol.p)
    r_u, r_p = verify_mild_residual(m, HeatOperator(g), sol)
    ok = sol.converged and disc <= 1e-3 and hc.min_w >= floor - 1e-6 and max(r_u, r_p) < 1e-2
    return ok, f"iterations {sol.iterations}, Hopf-Cole gap {disc:.1e}, r_u {r_u:.1e}, r_p {r_p:.1e}"


def check_shipped_configs():
    from .cli import load_config, shipped_configs

    lines = []
    ok = True
    for name in sorted(shipped_configs()):
        cfg, _ = load_config(name)
        m = cfg.build_model()
        g = cfg.build_grid(m)
        sol = solve_mfg(m, g, cfg.solver.M, cfg.solver.tol, cfg.solver.max_iter, cfg.solver.damping)
        ok &= sol.converged and sol.mass_drift <= 1e-10
        lines.append(f"{name}: {sol.iterations} it")
    return bool(ok), ", ".join(lines)


CHECKS: list[tuple[str, Callable]] = [
    ("semigroup gaussian oracle", check_semigroup_gaussian),
    ("semigroup law", check_semigroup_law),
    ("heat gradient bound", check_gradient_bound),
    ("mollifier mass", check_mollifier_mass),
    ("free model solve", check_free_solve),
    ("gamma fixed point", check_gamma_fixed_point),
    ("forward heat flow", check_forward_heat),
    ("cell list vs direct sum", check_cell_list),
    ("deterministic particles", check_particles_deterministic),
    ("empirical density mass", check_density_mass),
    ("dw proxy dirac pair", check_dw_dirac),
    ("hopf-cole trivial data", check_hopf_cole_trivial),
    ("congestion solve", check_congestion_solve),
    ("shipped configs solve", check_shipped_configs),
]


def run_selftest(out: Callable[[str], None] = print) -> bool:
    """Run every check, report one line each; True when all pass."""
    all_ok = True
    for name, fn in CHECKS:
        t = time.perf_counter()
        try:
            ok, detail = fn()
        except Exception as exc:  # a crash is a failure, reported like one
            ok, detail = False, f"{type(exc).__name__}: {exc}"
        all_ok &= bool(ok)
        out(f"{'PASS' if ok else 'FAIL'}  {name:<28} {detail}  ({time.perf_counter() - t:.2f}s)")
    out("selftest " + ("passed" if all_ok else "FAILED"))
    return all_ok
