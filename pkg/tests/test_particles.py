from __future__ import annotations

import numpy as np
import pytest

from mfglab.grid import FieldFlow, Grid, integrate
from mfglab.model import builtin_model, mollifier_for
from mfglab.particles import (
    FeedbackProfile,
    SimConfig,
    deposit_points,
    empirical_density,
    interaction_density,
    interpolate,
    player_streams,
    read_trajectories,
    simulate,
    substream,
    write_trajectories,
)


def const_flow(g, T, value, steps=10):
    return FieldFlow(g, 0.0, T, np.full((steps + 1, g.dim) + g.shape, value), vector=True)


def test_substreams_are_deterministic_and_distinct():
    a = substream(3, "x", 0).standard_normal(5)
    assert np.array_equal(a, substream(3, "x", 0).standard_normal(5))
    for other in (substream(3, "x", 1), substream(3, "y", 0), substream(4, "x", 0)):
        assert not np.array_equal(a, other.standard_normal(5))


def test_sim_config_validation():
    assert SimConfig(10, rng_seed=4).name == "sim-N10-seed4"
    assert SimConfig(10, stream_name="abc").name == "abc"
    with pytest.raises(ValueError):
        SimConfig(1)
    with pytest.raises(ValueError):
        SimConfig(3, stream_order=(0, 0, 1))


def test_interpolation_exact_on_linear_fields():
    g = Grid(2, 2.0, 32)
    pts = g.points()
    frame = np.stack([pts[..., 0] + 2 * pts[..., 1], 3 - pts[..., 1]])
    q = np.random.default_rng(0).uniform(-1.9, 1.8, (50, 2))
    out = interpolate(frame, g, q)
    assert np.allclose(out[:, 0], q[:, 0] + 2 * q[:, 1]) and np.allclose(out[:, 1], 3 - q[:, 1])
    # constant extrapolation outside the box
    far = interpolate(frame, g, np.array([[10.0, 0.0]]))
    assert far[0, 0] == pytest.approx(g.axis[-1])


def test_interaction_density_matches_definition():
    m = builtin_model("congestion")
    pos = np.random.default_rng(1).normal(size=(60, 1))
    mol = mollifier_for(m, 60)
    ref = np.array([mol(p - pos).sum() / 60 for p in pos])
    for method in ("direct", "cells", "auto"):
        assert np.allclose(interaction_density(pos, m, method=method), ref, rtol=1e-12)
    with pytest.raises(ValueError):
        interaction_density(pos, m, cell=mol.eps / 2)


def test_zero_noise_particles_follow_lines(free):
    g = Grid(1, 8.0, 256)
    ens = simulate(free, SimConfig(7, 20, 0, zero_noise=True), FeedbackProfile(const_flow(g, free.T, -0.4)))
    t = np.arange(21) * free.T / 20
    assert np.abs(ens.positions[:, :, 0] - (ens.positions[:, :1, 0] - 0.4 * t)).max() < 1e-13
    assert np.allclose(ens.energy, 0.5 * 0.16 * free.T)
    assert np.array_equal(ens.terminal, free.terminal_cost(ens.positions[:, -1]))


def test_diffusive_variance(free):
    g = Grid(1, 8.0, 256)
    ens = simulate(free, SimConfig(4000, 10, 1), FeedbackProfile(const_flow(g, free.T, 0.0)),
                   initial=np.zeros((4000, 1)))
    v = ens.positions[:, -1, 0].var()
    assert v == pytest.approx(free.T, rel=0.08)


def test_simulation_reproducible_and_thread_invariant(cong_sol, congestion):
    prof = FeedbackProfile(cong_sol.alpha_star)
    a = simulate(congestion, SimConfig(300, 50, 5), prof)
    b = simulate(congestion, SimConfig(300, 50, 5, threads=3), prof)
    c = simulate(congestion, SimConfig(300, 50, 6), prof)
    assert np.array_equal(a.positions, b.positions) and np.array_equal(a.rho, b.rho)
    assert not np.array_equal(a.positions, c.positions)


def test_streams_follow_particles(congestion, grid256):
    cfg = SimConfig(6, 5, 2)
    x0, xi = player_streams(congestion, cfg, grid256)
    sub_x0, sub_xi = player_streams(congestion, cfg, grid256, players=[4, 1])
    assert np.array_equal(sub_x0, x0[[4, 1]]) and np.array_equal(sub_xi, xi[[4, 1]])
    perm = (5, 4, 3, 2, 1, 0)
    px0, _ = player_streams(congestion, SimConfig(6, 5, 2, stream_order=perm), grid256)
    assert np.array_equal(px0, x0[list(perm)])


def test_deviator_changes_only_its_control(cong_sol, congestion):
    g = cong_sol.grid
    dev = const_flow(g, congestion.T, 0.5, cong_sol.steps)
    cfg = SimConfig(50, 20, 0)
    base = simulate(congestion, cfg, FeedbackProfile(cong_sol.alpha_star))
    alt = simulate(congestion, cfg, FeedbackProfile(cong_sol.alpha_star, 3, dev, "push"))
    assert np.allclose(alt.energy[3], 0.5 * 0.25 * congestion.T)
    assert np.array_equal(alt.positions[:, 1], base.positions[:, 1] + np.where(np.arange(50) == 3, 1, 0)[:, None]
                          * (alt.positions[3, 1] - base.positions[3, 1]))
    with pytest.raises(ValueError):
        simulate(congestion, cfg, FeedbackProfile(cong_sol.alpha_star, 99, dev))


def test_feedback_profile_checks(grid256):
    a = const_flow(grid256, 0.5, 1.0)
    with pytest.raises(ValueError):
        FeedbackProfile(a, 0, None)
    with pytest.raises(ValueError):
        FeedbackProfile(FieldFlow(grid256, 0.0, 0.5, np.zeros((11, 256))))
    assert FeedbackProfile(a, 0, const_flow(grid256, 0.5, -2.0)).sup() == 2.0


def test_admissibility_bound_enforced(congestion, grid256):
    with pytest.raises(ValueError, match="admissibility"):
        simulate(congestion, SimConfig(5, 5), FeedbackProfile(const_flow(grid256, congestion.T, 3.0)), bound=1.0)


def test_escape_counter(free, grid256):
    ens = simulate(free, SimConfig(5, 10, zero_noise=True), FeedbackProfile(const_flow(grid256, free.T, 40.0)))
    assert ens.escaped == 5


@pytest.mark.parametrize("normalize", [True, False])
def test_empirical_density_mass(congestion, cong_sol, normalize):
    g = Grid(1, 8.0, 1024)
    ens = simulate(congestion, SimConfig(400, 50, 3), FeedbackProfile(cong_sol.alpha_star))
    emp = empirical_density(ens, congestion, g, 10, normalize)
    assert emp.frames.steps == 5 and emp.frames.frames.min() >= 0
    tol = 1e-12 if normalize else 1e-3
    assert np.abs(emp.masses() - 1).max() < tol


def test_deposit_matches_mollifier(congestion):
    g = Grid(1, 4.0, 1024)
    pts = np.array([[0.3], [-1.1], [0.45]])
    raw = deposit_points(pts, congestion, g, normalize=False)
    mol = mollifier_for(congestion, 3)
    ref = sum(mol(g.points() - p) for p in pts) / 3
    assert np.allclose(raw.values, ref, atol=1e-12)
    assert integrate(deposit_points(pts, congestion, g)) == pytest.approx(1.0, abs=1e-14)


def test_resolution_check(congestion):
    ens = simulate(congestion, SimConfig(1000, 5), FeedbackProfile(const_flow(Grid(1, 8.0, 256), congestion.T, 0.0)))
    with pytest.raises(ValueError, match="use n >="):
        empirical_density(ens, congestion, Grid(1, 8.0, 64))


def test_trajectory_round_trip(tmp_path, free, grid256):
    ens = simulate(free, SimConfig(9, 4, 1), FeedbackProfile(const_flow(grid256, free.T, 0.1)))
    write_trajectories(tmp_path / "t.mfgt", ens)
    assert np.array_equal(read_trajectories(tmp_path / "t.mfgt"), ens.positions)
    (tmp_path / "x").write_bytes(b"NOPE" + bytes(12))
    with pytest.raises(ValueError):
        read_trajectories(tmp_path / "x")


def test_two_dimensional_simulation():
    m = builtin_model("congestion", {"dim": 2})
    g = Grid(2, 4.0, 128)
    ens = simulate(m, SimConfig(200, 10, 0), FeedbackProfile(const_flow(g, m.T, 0.0)))
    emp = empirical_density(ens, m, g, 5)
    assert ens.positions.shape == (200, 11, 2)
    assert np.abs(emp.masses() - 1).max() < 1e-12
