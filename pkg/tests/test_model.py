from __future__ import annotations

import numpy as np
import pytest

from mfglab.grid import Grid, field_from_function, integrate
from mfglab.model import (
    BETA_RANGE_MESSAGE,
    BumpKernel,
    Mollifier,
    builtin_model,
    mollifier_for,
    validate_hypotheses,
)


@pytest.mark.parametrize("d", [1, 2])
def test_bump_kernel_unit_mass(d):
    g = Grid(d, 1.5, 4096 if d == 1 else 1024)
    assert integrate(field_from_function(g, BumpKernel(d))) == pytest.approx(1.0, abs=1e-8)


def test_kernel_support_and_peak():
    k = BumpKernel(1)
    assert k(np.array([[1.0]]))[0] == 0.0 and k(np.array([[1.5]]))[0] == 0.0
    assert k(np.array([[0.0]]))[0] == pytest.approx(15 / 16)


def test_mollifier_scaling():
    mol = Mollifier(10_000, 0.3, BumpKernel(2))
    assert mol.eps == pytest.approx(10_000 ** (-0.15))
    assert mol.peak == pytest.approx(10_000**0.3 * BumpKernel(2).norm)
    assert mol.rho_scale == pytest.approx(mol.peak / 10_000)
    with pytest.raises(ValueError):
        Mollifier(0, 0.3, BumpKernel(1))


@pytest.mark.parametrize("beta", [0.0, 0.5, 0.7, -0.1])
def test_beta_outside_range_is_rejected(beta):
    with pytest.raises(ValueError, match=r"\(H3\) requires beta in \(0, 1/2\)"):
        builtin_model("congestion", {"beta": beta})
    assert "(H3)" in BETA_RANGE_MESSAGE


def test_unknown_model_and_parameter():
    with pytest.raises(ValueError, match="unknown model"):
        builtin_model("nope")
    with pytest.raises(ValueError, match="unknown parameter"):
        builtin_model("free", {"colour": 1})


@pytest.mark.parametrize("name", ["free", "congestion", "drift-congestion"])
@pytest.mark.parametrize("dim", [1, 2])
def test_builtin_models_satisfy_declared_constants(name, dim):
    m = builtin_model(name, {"dim": dim})
    rep = validate_hypotheses(m, samples=2000)
    assert rep.passed, [c.name for c in rep.failures()]
    assert rep["H3.beta"].passed


def test_validation_catches_understated_constant():
    import dataclasses

    m = dataclasses.replace(builtin_model("congestion"), bound_C=0.1)
    rep = validate_hypotheses(m, samples=2000)
    assert not rep.passed and rep.failures()[0].name == "H1.sup"


def test_p0_field_and_sampler():
    m = builtin_model("congestion")
    g = Grid(1, 8.0, 256)
    assert integrate(m.p0_field(g)) == pytest.approx(1.0, abs=1e-14)
    x = m.sample_initial(np.random.default_rng(0), 20_000)
    mean, std = m.params["p0_mean"], m.params["p0_std"]
    assert x.shape == (20_000, 1)
    assert abs(x.mean() - mean) < 4 * std / np.sqrt(20_000)
    assert x.std() == pytest.approx(std, rel=0.03)


def test_domain_rule():
    m = builtin_model("congestion")
    L = m.suggested_half_width(1.0)
    assert L == pytest.approx(m.p0_radius + (m.bound_C + 1.0) * m.T + 4 * np.sqrt(m.T))
    assert L < 8.0


def test_mollifier_for_uses_model_beta():
    m = builtin_model("congestion", {"beta": 0.2, "dim": 2})
    mol = mollifier_for(m, 100)
    assert mol.beta == 0.2 and mol.dim == 2
