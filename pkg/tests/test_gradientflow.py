import math

import numpy as np
import pytest

from chrflow.config import equilibrium_concentration, random_cosine
from chrflow.gradientflow import STRONG_COLUMNS, WEAK_COLUMNS, TimeGrid, conjugate_array, functional_A_array, run_weak
from chrflow.mesh import Field, build_grid, read_field_csv
from chrflow.physics import ElasticParams, FreeEnergy, ModelParams, ReactionRate

FE = FreeEnergy("regular_solution", 3.0, 1.0)
RATE = ReactionRate("truncated_bv", 1.0, 1.0, 1.0, -0.5 * math.log(2.0), w_max=3.0)


@pytest.fixture(scope="module")
def random_run():
    g = build_grid(1, 1.0, 33)
    c0 = Field(g, random_cosine(g, np.random.default_rng(5), 0.5, 0.05, 4))
    return run_weak(c0, TimeGrid(0.02, 20), ModelParams(FE, RATE))


def test_timegrid():
    tg = TimeGrid(0.1, 4)
    assert tg.tau == pytest.approx(0.025)
    assert np.allclose(tg.times(), [0, 0.025, 0.05, 0.075, 0.1])
    with pytest.raises(ValueError):
        TimeGrid(0.1, -1)
    with pytest.raises(ValueError):
        TimeGrid(0.0, 4)


def test_zero_steps_returns_initial_state():
    g = build_grid(1, 1.0, 9)
    traj = run_weak(Field.constant(g, 0.5), TimeGrid(0.1, 0), ModelParams(FE, RATE))
    assert len(traj.states) == 1 and len(traj.reports) == 1


def test_energy_decreases(random_run):
    e = [r.energy for r in random_run.reports]
    assert random_run.ok
    assert all(b <= a + 1e-12 for a, b in zip(e, e[1:]))
    assert all(r.energy_ok and r.telescoped_ok for r in random_run.reports[1:])


def test_mass_flux_identity(random_run):
    tau = random_run.meta["tau"]
    for a, b in zip(random_run.reports, random_run.reports[1:]):
        assert abs(b.mass - a.mass - tau * b.flux) <= 1e-10 * (1 + abs(b.mass))


def test_deterministic(random_run):
    g = random_run.grid
    again = run_weak(Field(g, random_run.states[0].c), TimeGrid(0.02, 20), ModelParams(FE, RATE))
    assert np.array_equal(again.concentrations(), random_run.concentrations())


def test_equilibrium_is_stationary():
    p = ModelParams(FE, ReactionRate("butler_volmer"))
    cs = equilibrium_concentration(p)
    g = build_grid(2, (1.0, 1.0), 7)
    traj = run_weak(Field.constant(g, cs), TimeGrid(0.05, 10), p)
    assert np.max(np.abs(traj.concentrations() - cs)) < 1e-9


def test_fenchel_young_equality():
    g = build_grid(1, 1.0, 17)
    rng = np.random.default_rng(3)
    c = rng.uniform(0.3, 0.7, g.n_nodes)
    for r in (ReactionRate("linear", kappa=0.5), RATE):
        vstar = rng.normal(size=g.n_nodes)
        astar, mu, _ = conjugate_array(g, c, vstar, r)
        gap = astar + functional_A_array(g, c, mu, r) - g.integrate(vstar * mu)
        assert abs(gap) <= 1e-8 * (1 + abs(astar))


def test_csv_and_snapshots(random_run, tmp_path):
    text = random_run.to_csv(tmp_path / "t.csv")
    header, *rows = text.strip().splitlines()
    assert header.split(",") == WEAK_COLUMNS
    assert len(rows) == 21
    paths = random_run.write_snapshots(tmp_path, 10)
    assert [p.rsplit("_", 1)[-1] for p in paths] == ["000000.csv", "000010.csv", "000020.csv"]
    back = read_field_csv(paths[-1])
    assert np.array_equal(back.values, random_run.final.c)
    assert "detrunc_ok" in STRONG_COLUMNS


def test_elasticity_with_misfit_runs():
    g = build_grid(2, (1.0, 1.0), 7)
    c0 = Field(g, random_cosine(g, np.random.default_rng(2), 0.5, 0.05, 2))
    p = ModelParams(FreeEnergy("regular_solution", 2.0, 1.0), ReactionRate("truncated_bv", w_max=3.0), elasticity=ElasticParams(1.0, 1.0, ((0.02, 0.0), (0.0, 0.02))))
    traj = run_weak(c0, TimeGrid(0.01, 5), p)
    assert traj.ok
    assert traj.final.u is not None
    assert max(r.stress_residual for r in traj.reports[1:]) < 1e-8
    e = [r.energy for r in traj.reports]
    assert all(b <= a + 1e-12 for a, b in zip(e, e[1:]))
