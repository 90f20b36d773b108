import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from chrflow import _kernels, sobolev
from chrflow.gradientflow import TimeGrid, run_weak
from chrflow.mesh import Field, build_grid
from chrflow.physics import ModelParams, ReactionRate


def linear_seminorm_sq(s, T):
    # |t|^2_{H^s(0,T)} = int int |x - y|^{1-2s}
    return 2.0 * T ** (3 - 2 * s) / ((2 - 2 * s) * (3 - 2 * s))


@pytest.mark.parametrize("s", [0.1, 0.25, 0.5, 0.75])
@pytest.mark.parametrize("T", [0.5, 2.0])
def test_seminorm_of_linear_function(s, T):
    u = sobolev.TimeSeries.sample(lambda t: t, T, 1025)
    assert sobolev.gagliardo_seminorm(u, s) ** 2 == pytest.approx(linear_seminorm_sq(s, T), rel=2e-5)


@pytest.mark.parametrize("s", [0.85, 0.9])
def test_seminorm_converges_for_large_s(s):
    # the first uncorrected term is O(h^(3-2s)), slow as s -> 1
    errs = [
        abs(sobolev.gagliardo_seminorm(sobolev.TimeSeries.sample(lambda t: t, 1.0, m), s) ** 2 / linear_seminorm_sq(s, 1.0) - 1)
        for m in (513, 1025, 2049)
    ]
    assert errs[-1] < 1e-4
    assert np.log2(errs[1] / errs[2]) == pytest.approx(3 - 2 * s, abs=0.15)


def test_constant_has_zero_seminorm():
    u = sobolev.TimeSeries(np.full(65, 3.0), 1.0)
    assert sobolev.gagliardo_seminorm(u, 0.4) == 0.0
    assert sobolev.hs_norm(u, 0.4) == pytest.approx(3.0)


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 10_000), s=st.floats(0.05, 0.8), a=st.floats(-5, 5))
def test_homogeneity_and_triangle(seed, s, a):
    rng = np.random.default_rng(seed)
    u = sobolev.random_smooth_series(rng, 1.0, 129)
    v = sobolev.random_smooth_series(rng, 1.0, 129)
    su = sobolev.gagliardo_seminorm(u, s)
    assert sobolev.gagliardo_seminorm(sobolev.TimeSeries(a * u.values, 1.0), s) == pytest.approx(abs(a) * su, rel=1e-9, abs=1e-12)
    suv = sobolev.gagliardo_seminorm(sobolev.TimeSeries(u.values + v.values, 1.0), s)
    assert suv <= su + sobolev.gagliardo_seminorm(v, s) + 1e-9


@pytest.mark.parametrize("s", [0.125, 0.5, 0.75])
def test_besov_bound_holds(s):
    rng = np.random.default_rng(0)
    for _ in range(10):
        bc = sobolev.besov_check(sobolev.random_smooth_series(rng, 1.0, 257), s)
        assert bc.margin >= 0


def test_besov_bound_fails_near_one():
    # for u = t the squared ratio is 2 s^2 / (3 - 2 s), above 1 once s > ~0.82
    bc = sobolev.besov_check(sobolev.TimeSeries.sample(lambda t: t, 1.0, 513), 0.9)
    assert bc.margin < 0


def test_stretch_identity_exact_for_power():
    s, T = 0.3, 2.0
    ref = np.sqrt(linear_seminorm_sq(s, 1.0)) * T  # u(t) = t, so u_T(x) = T x
    bc = sobolev.stretch_check(lambda t: t, s, T, 1025, ref)
    assert abs(bc.lhs - bc.rhs) / bc.rhs < 1e-4


@pytest.mark.parametrize("target", [1.5, 2.0, 3.7])
def test_extension_bound(target):
    u = sobolev.random_smooth_series(np.random.default_rng(1), 1.0, 257)
    ext = sobolev.reflect_extend(u, target)
    assert abs(ext.T - target) <= u.h
    assert np.allclose(ext.values[: u.m], u.values)
    assert sobolev.extension_check(u, target, 0.5).margin >= 0


def test_aniso_norm_of_trajectory():
    g = build_grid(1, 1.0, 17)
    c0 = Field(g, 0.5 + 0.05 * np.cos(np.pi * g.coords[:, 0]))
    traj = run_weak(c0, TimeGrid(0.01, 8), ModelParams(rate=ReactionRate("truncated_bv", w_max=3.0)))
    u = sobolev.TimeSeries(traj.concentrations(), 0.01, grid=g)
    a = sobolev.aniso_norm(u, 2, 0.5)
    b = sobolev.aniso_norm(u, 1, 0.5)
    assert a >= b > 0
    with pytest.raises(ValueError):
        sobolev.aniso_norm(u, 4, 0.5)


def test_kernel_backends_agree(monkeypatch):
    rng = np.random.default_rng(2)
    v = rng.normal(size=(200, 3))
    w = np.full(200, 0.01)
    a = _kernels.np_pair_sum(v, w, 0.01, 0.4)
    b = _kernels.nb_pair_sum(v, w, 0.01, 0.4)
    assert np.allclose(a, b, rtol=1e-12)
    monkeypatch.setenv("CHRFLOW_DISABLE_NUMBA", "1")
    assert _kernels.backend() == "numpy"
    u = sobolev.TimeSeries.sample(np.sin, 1.0, 257)
    slow = sobolev.gagliardo_seminorm(u, 0.4)
    monkeypatch.delenv("CHRFLOW_DISABLE_NUMBA")
    assert sobolev.gagliardo_seminorm(u, 0.4) == pytest.approx(slow, rel=1e-12)


def test_aniso_norm_of_constant_counts_l2_twice():
    # both the spatial and the temporal part carry the full L2 content
    g = build_grid(2, (1.0, 2.0), 5)
    u = sobolev.TimeSeries(np.full((9, g.n_nodes), 0.7), 0.5, grid=g)
    expected = np.sqrt(2.0 * g.volume * 0.5) * 0.7
    for r in (0, 2):
        assert sobolev.aniso_norm(u, r, 0.3) == pytest.approx(expected, rel=1e-12)
