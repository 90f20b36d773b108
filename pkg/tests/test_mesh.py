import io
import os
import tempfile

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from chrflow.mesh import Field, boundary_integrate, build_grid, integrate, read_field_csv, write_field_csv


def test_too_few_nodes_rejected():
    with pytest.raises(ValueError, match="at least 5"):
        build_grid(1, 1.0, 3)


@pytest.mark.parametrize("dim,ext,cnt", [(1, 1.0, 9), (1, 2.5, 17), (2, (1.0, 2.0), (5, 9)), (2, 1.0, 7)])
def test_weights_sum_to_volume(dim, ext, cnt):
    g = build_grid(dim, ext, cnt)
    assert g.quad_weights.sum() == pytest.approx(g.volume, rel=1e-14)
    assert g.quad_weights.shape == (g.n_nodes,)


def test_boundary_measure():
    assert build_grid(1, 1.0, 9).boundary_integrate(np.ones(9)) == pytest.approx(2.0)
    g = build_grid(2, (1.0, 2.0), (5, 9))
    assert g.boundary_integrate(np.ones(g.n_nodes)) == pytest.approx(6.0)


def test_trapezoid_exact_for_bilinear():
    g = build_grid(2, (1.0, 2.0), (9, 5))
    f = Field.from_function(g, lambda x, y: 1.0 + 2.0 * x + 3.0 * y + x * y)
    # integral of 1 + 2x + 3y + xy over [0,1]x[0,2]
    assert integrate(f) == pytest.approx(2.0 + 2.0 + 6.0 + 1.0, rel=1e-13)


def test_node_order_x_major():
    g = build_grid(2, (1.0, 1.0), (5, 7))
    k = g.node_id(2, 3)
    assert k == 2 * 7 + 3
    assert np.allclose(g.coords[k], [0.5, 0.5])


def test_field_validation():
    g = build_grid(1, 1.0, 9)
    with pytest.raises(ValueError, match="9 node values"):
        Field(g, np.zeros(8))
    bad = np.zeros(9)
    bad[4] = np.nan
    with pytest.raises(ValueError, match="node 4"):
        Field(g, bad)
    f = Field.constant(g, 2.0)
    with pytest.raises(ValueError):
        f.values[0] = 1.0


def test_normal_derivative_second_order():
    errs = []
    for n in (17, 33, 65):
        g = build_grid(1, 1.0, n)
        u = np.sin(1.3 * g.coords[:, 0])
        exact = np.array([-1.3 * np.cos(0.0), 1.3 * np.cos(1.3)])
        nd = g.normal_derivative(u)
        order = np.argsort(g.bnormal[:, 0])
        errs.append(np.max(np.abs(nd[order] - exact)))
    assert np.log2(errs[0] / errs[1]) > 1.8
    assert np.log2(errs[1] / errs[2]) > 1.8


def test_boundary_integrate_field_2d():
    g = build_grid(2, (1.0, 1.0), 9)
    f = Field.from_function(g, lambda x, y: x + y)
    # each face contributes the integral of a linear function
    assert boundary_integrate(f) == pytest.approx(0.5 + 1.5 + 0.5 + 1.5)


@settings(max_examples=25, deadline=None)
@given(
    dim=st.sampled_from([1, 2]),
    n=st.integers(5, 9),
    seed=st.integers(0, 2**31 - 1),
)
def test_csv_round_trip(dim, n, seed):
    g = build_grid(dim, (1.0, 1.5) if dim == 2 else 1.0, n)
    vals = np.random.default_rng(seed).normal(size=g.n_nodes)
    buf = io.StringIO()
    write_field_csv(Field(g, vals), buf)
    with tempfile.TemporaryDirectory() as d:
        p = os.path.join(d, "f.csv")
        with open(p, "w", encoding="utf-8") as fh:
            fh.write(buf.getvalue())
        back = read_field_csv(p)
    assert back.grid == g
    assert np.array_equal(back.values, vals)
