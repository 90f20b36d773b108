import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from chrflow.errors import DomainError, RateRangeError
from chrflow.mesh import build_grid
from chrflow.physics import (
    ElasticParams,
    FreeEnergy,
    ModelParams,
    ReactionRate,
    energy_array,
    potential_array,
    rate_root,
)

RATES = [
    ReactionRate("butler_volmer", 1.0, 0.7, 1.3, 0.2),
    ReactionRate("linear", kappa=0.8),
    ReactionRate("truncated_bv", 1.0, 1.0, 1.0, 0.0, w_max=2.0),
]


@settings(max_examples=50, deadline=None)
@given(s=st.floats(0.02, 0.98), order=st.integers(0, 2))
def test_regular_solution_derivatives(s, order):
    fe = FreeEnergy("regular_solution", 3.0, 1.0)
    h = 1e-6
    fd = (fe.evaluate(s + h, order) - fe.evaluate(s - h, order)) / (2 * h)
    assert fd == pytest.approx(float(fe.evaluate(s, order + 1)), rel=1e-5, abs=1e-6)


def test_regular_solution_domain():
    fe = FreeEnergy()
    with pytest.raises(DomainError) as info:
        fe.evaluate(np.array([0.5, 1.2]))
    assert info.value.node == 1


def test_clamped_double_well_has_bounded_curvature():
    fe = FreeEnergy("double_well", s_lo=-1.2, s_hi=1.2)
    s = np.linspace(-50, 50, 1001)
    f2 = fe.evaluate(s, 2)
    assert np.ptp(f2[s > 1.2]) == 0.0
    assert np.all(fe.evaluate(s, 3)[np.abs(s) > 1.2] == 0.0)


def test_invalid_parameters():
    with pytest.raises(ValueError):
        FreeEnergy("regular_solution", kt=0.0)
    with pytest.raises(ValueError):
        ReactionRate("butler_volmer", k_ins=0.0)
    with pytest.raises(ValueError):
        ElasticParams(e0=((0.0, 0.1), (0.2, 0.0)))
    with pytest.raises(ValueError):
        ModelParams(rho=-1.0)


@pytest.mark.parametrize("r", RATES, ids=lambda r: r.kind)
@settings(max_examples=30, deadline=None)
@given(s=st.floats(0.0, 1.0), w1=st.floats(-8.0, 8.0), w2=st.floats(-8.0, 8.0))
def test_rate_nonincreasing_in_w(r, s, w1, w2):
    lo, hi = min(w1, w2), max(w1, w2)
    assert r.rate(s, hi) <= r.rate(s, lo) + 1e-12


@pytest.mark.parametrize("r", RATES, ids=lambda r: r.kind)
def test_antiderivative(r):
    s = np.linspace(0.05, 0.95, 7)[:, None]
    w = np.linspace(-3, 3, 13)[None, :]
    h = 1e-6
    fd = (r.antiderivative(s, w + h) - r.antiderivative(s, w - h)) / (2 * h)
    assert np.allclose(fd, r.rate(s, w), rtol=1e-6, atol=1e-7)


def test_truncated_bv_grows_linearly():
    r = ReactionRate("truncated_bv", w_max=2.0)
    w = np.array([10.0, 20.0, 30.0])
    d = np.diff(r.rate(0.5, w))
    assert d[0] == pytest.approx(d[1])
    assert r.rate(0.5, 1e6) < 0 and np.isfinite(r.rate(0.5, 1e6))


def test_bv_overflow_guard():
    with pytest.raises(RateRangeError):
        ReactionRate().rate(0.5, 800.0)


def test_rate_root():
    r = ReactionRate("butler_volmer")
    # k_ins e^{-w} = s e^{w}  =>  w = -ln(s)/2
    assert rate_root(r, 0.5) == pytest.approx(0.5 * math.log(2.0), abs=1e-12)


def test_energy_and_potential_consistent():
    g = build_grid(1, 1.0, 33)
    p = ModelParams(FreeEnergy("regular_solution", 3.0, 1.0))
    c = 0.5 + 0.1 * np.cos(np.pi * g.coords[:, 0])
    v = np.sin(2.0 * g.coords[:, 0])
    eps = 1e-6
    fd = (energy_array(g, c + eps * v, None, p) - energy_array(g, c - eps * v, None, p)) / (2 * eps)
    assert fd == pytest.approx(g.integrate(potential_array(g, c, None, p) * v), rel=1e-7)


def test_elastic_moduli():
    ep = ElasticParams(1.0, 2.0, ((0.1, 0.0), (0.0, 0.1)))
    assert ep.voigt_stiffness[0, 0] == 5.0
    assert ep.k0 == pytest.approx(0.1 * 0.1 * (5 + 1) * 2)


def test_digest_stable():
    assert ModelParams().digest() == ModelParams().digest()
    assert ModelParams().digest() != ModelParams(rho=2.0).digest()
