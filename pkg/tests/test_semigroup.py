from __future__ import annotations

import math

import numpy as np
import pytest

from mfglab.grid import Field, Grid, VectorField, field_from_function, integrate
from mfglab.semigroup import HeatOperator


def gauss(var, mean=0.0):
    return lambda x: np.exp(-np.sum((x - mean) ** 2, axis=-1) / (2 * var)) / (2 * np.pi * var) ** (x.shape[-1] / 2)


def test_gaussian_variance_adds():
    g = Grid(1, 8.0, 512)
    H = HeatOperator(g)
    out = H.apply(0.3, field_from_function(g, gauss(0.2, 1.0)))
    assert np.abs(out.values - field_from_function(g, gauss(0.5, 1.0)).values).max() < 1e-12


def test_gaussian_2d():
    g = Grid(2, 6.0, 128)
    H = HeatOperator(g)
    out = H.apply(0.25, field_from_function(g, gauss(0.25)))
    assert np.abs(out.values - field_from_function(g, gauss(0.5)).values).max() < 1e-10


def test_gradient_of_gaussian_is_analytic():
    g = Grid(1, 8.0, 512)
    H = HeatOperator(g)
    grad = H.apply_gradient(0.3, field_from_function(g, gauss(0.2)))
    x = g.axis
    exact = -x / 0.5 * np.exp(-x * x / 1.0) / np.sqrt(2 * np.pi * 0.5)
    assert np.abs(grad.components[0] - exact).max() < 1e-10


def test_mass_and_positivity_preserved():
    g = Grid(1, 8.0, 256)
    H = HeatOperator(g)
    f = field_from_function(g, lambda x: (np.abs(x[..., 0]) < 1).astype(float))
    out = H.apply(0.1, f)
    assert integrate(out) == pytest.approx(integrate(f), abs=1e-12)
    assert out.values.min() > -1e-14


def test_edge_padding_keeps_constants():
    g = Grid(1, 4.0, 128)
    H = HeatOperator(g)
    c = g.constant(2.5)
    assert np.abs(H.apply(0.7, c, pad="edge").values - 2.5).max() < 1e-12
    assert np.abs(H.apply_gradient(0.7, c, pad="edge").components).max() < 1e-12


def test_divergence_is_adjoint_of_gradient():
    g = Grid(1, 8.0, 256)
    H = HeatOperator(g)
    rng = np.random.default_rng(3)
    w = np.exp(-g.axis**2 / 4)
    f = Field(g, w * rng.normal(size=g.shape))
    v = VectorField(g, (w * rng.normal(size=g.shape))[None])
    lhs = np.sum(H.apply_gradient(0.2, f).components * v.components)
    rhs = -np.sum(f.values * H.apply_divergence(0.2, v).values)
    assert lhs == pytest.approx(rhs, rel=1e-10)


def test_flow_frames_and_zero_time():
    g = Grid(1, 8.0, 128)
    H = HeatOperator(g, dt=0.1, steps=5)
    f = field_from_function(g, gauss(0.3))
    fl = H.flow(f, 5, 0.5)
    assert fl.steps == 5 and np.array_equal(fl.frames[0], f.values)
    assert np.allclose(fl.frames[3], H.apply(0.3, f).values, atol=1e-15)
    assert H.apply(0.0, f) is not f and np.array_equal(H.apply(0.0, f).values, f.values)


def test_invalid_times_and_grids():
    g = Grid(1, 8.0, 64)
    H = HeatOperator(g)
    with pytest.raises(ValueError):
        H.apply(-0.1, g.zeros())
    with pytest.raises(ValueError):
        H.apply_gradient(0.0, g.zeros())
    with pytest.raises(ValueError):
        H.apply(0.1, Grid(1, 4.0, 64).zeros())
    with pytest.raises(ValueError):
        H.transform(np.zeros(64), pad="reflect")


def test_gradient_bound_sharp_constant():
    # ‖∇P_t f‖ ≤ √(2/π) t^{-1/2}‖f‖ in 1D; the sign function attains it at 0
    g = Grid(1, 8.0, 1024)
    H = HeatOperator(g)
    f = Field(g, np.sign(g.axis + g.h / 2))
    t = 0.5
    ratio = np.abs(H.apply_gradient(t, f).components).max() * math.sqrt(t)
    assert ratio == pytest.approx(math.sqrt(2 / math.pi), rel=1e-2)


def test_constant_survives_away_from_boundary_layer():
    g = Grid(1, 8.0, 256)
    H = HeatOperator(g)
    t = 0.3
    out = H.apply(t, g.constant(1.7))
    interior = np.abs(g.axis) < 8.0 - 5 * math.sqrt(t)
    assert np.abs(out.values[interior] - 1.7).max() <= 1e-6
