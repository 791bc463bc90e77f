"""Grid Monte Carlo ground states checked against a continuous-optimizer oracle.

The frozen energies below come from multi-start scipy L-BFGS-B minimization of
the same validated potential in continuous coordinates (the grid search space
is a subset of it, so grid energies must land slightly above and within the
25 nm discretization penalty, measured at ~2e-7 relative).
"""

import math

import numpy as np
import pytest

from meltlab.energy import PlanarConfiguration, potential_energy
from meltlab.errors import DegenerateShell, NotConverged, UnstableTrap
from meltlab.groundstate import (
    Ellipse,
    GridSpec,
    RayConstraint,
    _Minimizer,
    _snap_to_ray,
    assign_shells,
    find_ground_state,
    fit_enclosing_ellipse,
)
from meltlab.trap import BA138, TrapModel, trap_from_frequencies

TWO_PI = 2.0 * math.pi

# round trap, 100 kHz in-plane secular frequency at mass 138
ROUND = trap_from_frequencies(TWO_PI * 400e3, TWO_PI * 100e3, TWO_PI * 100e3)

# continuous-coordinate minima (multi-start L-BFGS-B, 60 starts each)
D_TWO_ION = 1.721345661391775e-05  # analytic (2 alpha / m omega^2)^(1/3)
U_CONT = {
    2: 2.010413366580592e-23,
    4: 9.840011707050968e-23,
    7: 3.0387830029977474e-22,
    14: 1.1181349721589215e-21,
}
GRID_TOL = 5e-6  # relative headroom above the continuous minimum


def test_grid_spec_defaults_and_validation():
    g = GridSpec()
    assert g.n_cells == 4000
    # index -> coordinate -> index round-trips on every cell
    idx = np.arange(g.n_cells)
    assert np.array_equal(g.nearest_index(g.coordinates(idx)), idx)
    assert g.nearest_index(1e6) == g.n_cells - 1  # clipped
    with pytest.raises(ValueError):
        GridSpec(cell=-1e-9)
    with pytest.raises(ValueError):
        GridSpec(cell=30e-9, extent=100e-6)  # not an integer cell count
    with pytest.raises(ValueError):
        GridSpec(window=10)
    with pytest.raises(ValueError):
        GridSpec(window=1)
    with pytest.raises(ValueError):
        GridSpec(cell=25e-6, extent=100e-6, window=81)


def test_single_ion_sits_at_center():
    res = find_ground_state([BA138], ROUND, seed=0, restarts=2)
    y, z = res.config.positions[0]
    # the origin is a cell corner, so the best cell center is half a cell away
    assert abs(y) <= GridSpec().cell
    assert abs(z) <= GridSpec().cell
    assert res.energy == potential_energy(res.config, ROUND)


def test_two_ions_match_analytic_separation():
    res = find_ground_state([BA138] * 2, ROUND, seed=1)
    p = res.config.positions
    d = math.hypot(p[0, 0] - p[1, 0], p[0, 1] - p[1, 1])
    assert abs(d - D_TWO_ION) <= 2 * GridSpec().cell
    assert U_CONT[2] <= res.energy <= U_CONT[2] * (1 + GRID_TOL)
    # ions sit on opposite sides of the center
    assert np.allclose(p[0], -p[1], atol=2 * GridSpec().cell)


@pytest.mark.parametrize(
    "n,occ",
    [(4, (4,)), (7, (1, 6)), (14, (4, 10))],
)
def test_shell_filling_matches_oracle(n, occ):
    res = find_ground_state([BA138] * n, ROUND, seed=1)
    assert U_CONT[n] <= res.energy <= U_CONT[n] * (1 + GRID_TOL)
    assert assign_shells(res.config).occupancy == occ


def test_seed_determinism():
    a = find_ground_state([BA138] * 7, ROUND, seed=3)
    b = find_ground_state([BA138] * 7, ROUND, seed=3)
    assert np.array_equal(a.config.positions, b.config.positions)
    assert a.energy == b.energy
    assert a.sweep_count == b.sweep_count


def test_energy_trace_monotone():
    res = find_ground_state([BA138] * 5, ROUND, seed=0, restarts=2, record_trace=True)
    trace = np.asarray(res.energy_trace)
    assert len(trace) > 0
    assert np.all(np.diff(trace) <= 0)
    assert np.isclose(trace[-1], res.energy, rtol=1e-9)


def test_ground_energy_bounds_random_configurations():
    res = find_ground_state([BA138] * 6, ROUND, seed=0)
    rng = np.random.default_rng(7)
    for _ in range(20):
        pos = rng.uniform(-30e-6, 30e-6, size=(6, 2))
        trial = PlanarConfiguration([BA138] * 6, pos)
        assert potential_energy(trial, ROUND) >= res.energy


def test_budget_exhaustion_raises():
    with pytest.raises(NotConverged):
        find_ground_state([BA138] * 7, ROUND, seed=0, restarts=1, sweep_budget=3)


def test_input_validation():
    with pytest.raises(ValueError):
        find_ground_state([], ROUND)
    with pytest.raises(ValueError):
        find_ground_state([BA138] * 31, ROUND)
    with pytest.raises(ValueError):
        find_ground_state([BA138], ROUND, restarts=0)
    unstable = TrapModel(
        omega_rf=TWO_PI * 4.7e6, a=(-0.5, -0.5, 1.0), q=(0.0, 0.0, 0.0), reference_mass_u=138.0
    )
    with pytest.raises(UnstableTrap):
        find_ground_state([BA138], unstable)


# --- ray constraint -------------------------------------------------------------


def test_ray_mask_geometry():
    cell = 25e-9
    ray = RayConstraint(ion=0, angle=0.0)  # along +z
    y = np.array([0.0, cell, 0.0, 0.0])
    z = np.array([5e-6, 5e-6, -5e-6, 0.0])
    assert list(ray.mask(y, z, cell)) == [True, False, False, True]
    diag = RayConstraint(ion=0, angle=math.pi / 4)
    r = 7e-6 / math.sqrt(2)
    assert diag.mask(np.array([r]), np.array([r]), cell)[0]
    assert not diag.mask(np.array([r]), np.array([-r]), cell)[0]


def test_snap_to_ray_satisfies_mask():
    grid = GridSpec()
    for angle in np.linspace(0.0, TWO_PI, 17):
        ray = RayConstraint(ion=0, angle=float(angle))
        iy, iz = _snap_to_ray(grid, 15e-6, ray)
        cy, cz = grid.coordinates(iy), grid.coordinates(iz)
        assert ray.mask(np.array([cy]), np.array([cz]), grid.cell)[0]
        assert math.hypot(cy, cz) == pytest.approx(15e-6, rel=0.01)


def test_constrained_relax_keeps_ion_on_ray():
    grid = GridSpec()
    species = [BA138] * 3
    mini = _Minimizer(species, ROUND, grid)
    ray = RayConstraint(ion=0, angle=0.7)
    idx = np.array(
        [
            list(_snap_to_ray(grid, 12e-6, ray)),
            [grid.nearest_index(-10e-6), grid.nearest_index(-4e-6)],
            [grid.nearest_index(8e-6), grid.nearest_index(-9e-6)],
        ]
    )
    idx, steps, _ = mini.relax(idx, np.random.default_rng(0), 10_000, constraint=ray)
    cy, cz = grid.coordinates(idx[0, 0]), grid.coordinates(idx[0, 1])
    assert ray.mask(np.array([cy]), np.array([cz]), grid.cell)[0]
    assert steps > 0


def test_pinned_ions_do_not_move():
    grid = GridSpec()
    mini = _Minimizer([BA138] * 3, ROUND, grid)
    idx = np.array([[2100, 2100], [1800, 1950], [2050, 1800]])
    before = idx[0].copy()
    mini.relax(idx, np.random.default_rng(1), 10_000, movable=[1, 2])
    assert np.array_equal(idx[0], before)


# --- shells and ellipses ---------------------------------------------------------


def _ring(n, r, phase=0.0, center=(0.0, 0.0)):
    th = phase + TWO_PI * np.arange(n) / n
    return np.column_stack([center[0] + r * np.sin(th), center[1] + r * np.cos(th)])


def test_assign_shells_central_ion():
    pos = np.vstack([[[0.1e-6, -0.1e-6]], _ring(6, 20e-6)])
    config = PlanarConfiguration([BA138] * 7, pos)
    dec = assign_shells(config)
    assert dec.occupancy == (1, 6)
    assert dec.shells[0] == [0]
    assert sorted(dec.outer()) == [1, 2, 3, 4, 5, 6]
    assert dec.inner_indices() == [0]


def test_assign_shells_gap_split_and_single():
    two = np.vstack([_ring(4, 10e-6), _ring(8, 21e-6, phase=0.3)])
    dec = assign_shells(PlanarConfiguration([BA138] * 12, two))
    assert dec.occupancy == (4, 8)
    one = assign_shells(PlanarConfiguration([BA138] * 8, _ring(8, 15e-6)))
    assert one.occupancy == (8,)


def test_assign_shells_respects_given_ellipse():
    # squashed ring: without the ellipse the radii look spread, with it they are equal
    pos = _ring(8, 15e-6)
    pos[:, 1] *= 2.0
    config = PlanarConfiguration([BA138] * 8, pos)
    ell = Ellipse(o_y=0.0, o_z=0.0, r_y0=15e-6, r_z0=30e-6)
    dec = assign_shells(config, ellipse=ell)
    assert dec.occupancy == (8,)
    assert np.allclose(dec.radii, 1.0, rtol=1e-12)


def test_fit_enclosing_ellipse_exact_recovery():
    pos = _ring(9, 1.0, phase=0.15)
    pos[:, 0] *= 14e-6  # semi-axis along y
    pos[:, 1] *= 23e-6  # semi-axis along z
    config = PlanarConfiguration([BA138] * 9, pos)
    e = fit_enclosing_ellipse(config)
    assert e.r_y0 == pytest.approx(14e-6, rel=1e-9)
    assert e.r_z0 == pytest.approx(23e-6, rel=1e-9)
    assert e.aspect == pytest.approx(23.0 / 14.0, rel=1e-9)


def test_fit_enclosing_ellipse_shell_subset():
    pos = np.vstack([[[0.0, 0.2e-6]], _ring(6, 18e-6)])
    config = PlanarConfiguration([BA138] * 7, pos)
    dec = assign_shells(config)
    e = fit_enclosing_ellipse(config, dec.outer())
    assert e.r_y0 == pytest.approx(18e-6, rel=1e-9)
    assert e.r_z0 == pytest.approx(18e-6, rel=1e-9)


def test_fit_enclosing_ellipse_degenerate_and_small():
    chain = np.column_stack([np.zeros(5), np.linspace(-20e-6, 20e-6, 5)])
    with pytest.raises(DegenerateShell):
        fit_enclosing_ellipse(PlanarConfiguration([BA138] * 5, chain))
    with pytest.raises(DegenerateShell):
        fit_enclosing_ellipse(PlanarConfiguration([BA138] * 2, chain[:2]))


def test_strong_anisotropy_forms_chain():
    trap = trap_from_frequencies(TWO_PI * 400e3, TWO_PI * 390e3, TWO_PI * 100e3)
    res = find_ground_state([BA138] * 4, trap, seed=0, restarts=3)
    p = res.config.positions
    assert np.abs(p[:, 0]).max() <= GridSpec().cell  # flat along y
    assert np.abs(p[:, 1]).max() > 5e-6  # extended along z
    with pytest.raises(DegenerateShell):
        fit_enclosing_ellipse(res.config)


def test_mild_anisotropy_elongates_along_weak_axis():
    trap = trap_from_frequencies(TWO_PI * 400e3, TWO_PI * 140e3, TWO_PI * 100e3)
    res = find_ground_state([BA138] * 8, trap, seed=0, restarts=3)
    dec = assign_shells(res.config)
    e = fit_enclosing_ellipse(res.config, dec.outer())
    assert e.aspect > 1.2  # z is the soft axis here
