import math

import numpy as np
import pytest
from numpy.testing import assert_allclose

from gravlasov.errors import BoundaryConditionError, GridMismatchError
from gravlasov.kernel import ModelParams, make_polytrope
from gravlasov.radial import (PhaseDensity, RadialField, RadialGrid, SpeedGrid,
                              bump_density, density_moment,
                              distribution_function, ej_distance, functionals,
                              gradient_energy, poisson_solve,
                              read_phase_density, read_radial_field,
                              write_phase_density, write_radial_field)


def box_density(grid_r, grid_u, r_edge=1.0, u_edge=1.0, amp=1.0):
    rr, uu = np.meshgrid(grid_r.nodes, grid_u.nodes, indexing="ij")
    vals = amp * ((rr <= r_edge) & (uu <= u_edge)).astype(float)
    vals[-1, :] = 0.0
    vals[:, -1] = 0.0
    return PhaseDensity(grid_r=grid_r, grid_u=grid_u, values=vals)


@pytest.fixture(scope="module")
def grids():
    return RadialGrid(r_max=4.0, n=513), SpeedGrid(u_max=4.0, m=513)


def test_grid_invariants():
    g = RadialGrid(r_max=2.0, n=5)
    assert g.nodes[0] == 0.0
    assert g.nodes[-1] == 2.0
    assert np.all(np.diff(g.nodes) > 0)
    with pytest.raises(ValueError):
        RadialGrid(r_max=-1.0, n=5)


def test_phase_density_validation(grids):
    grid_r, grid_u = grids
    bad = np.ones((grid_r.n, grid_u.m))
    with pytest.raises(ValueError):
        PhaseDensity(grid_r=grid_r, grid_u=grid_u, values=bad)  # boundary not 0
    bad2 = np.zeros((grid_r.n, grid_u.m))
    bad2[3, 3] = -1.0
    with pytest.raises(ValueError):
        PhaseDensity(grid_r=grid_r, grid_u=grid_u, values=bad2)


def test_density_moment_zero(grids):
    grid_r, grid_u = grids
    f = PhaseDensity(grid_r=grid_r, grid_u=grid_u,
                     values=np.zeros((grid_r.n, grid_u.m)))
    assert np.all(density_moment(f).values == 0.0)


def test_density_moment_box(grids):
    grid_r, grid_u = grids
    f = box_density(*grids)
    rho = density_moment(f)
    h = grid_u.h
    inside = grid_r.nodes < 1.0
    # indicator integrand: the jump cell carries an O(h) binning error
    assert_allclose(rho.values[inside], 4.0 * math.pi / 3.0, rtol=4.0 * h)
    assert np.all(rho.values[grid_r.nodes > 1.0 + 2 * grid_r.h] == 0.0)


def test_poisson_uniform_ball():
    grid = RadialGrid(r_max=8.0, n=2049)
    rho_vals = np.where(grid.nodes < 1.0, 1.0, 0.0)
    phi = poisson_solve(RadialField(grid=grid, values=rho_vals))
    h = grid.h
    assert phi.values[0] == pytest.approx(-0.5, rel=4 * h)
    outside = grid.nodes > 1.5
    assert_allclose(phi.values[outside],
                    -1.0 / (3.0 * grid.nodes[outside]), rtol=4 * h)


def test_poisson_zero_and_shape_checks():
    grid = RadialGrid(r_max=2.0, n=65)
    phi = poisson_solve(RadialField(grid=grid, values=np.zeros(65)))
    assert np.all(phi.values == 0.0)
    touching = np.ones(65)
    with pytest.raises(BoundaryConditionError):
        poisson_solve(RadialField(grid=grid, values=touching))


def test_poisson_enclosed_mass_identity(grids):
    # phi'(r_max) r_max^2 equals the enclosed integral of s^2 rho
    grid_r, grid_u = grids
    f = bump_density(grid_r, grid_u, r_scale=0.4, u_scale=0.5)
    rho = density_moment(f)
    phi = poisson_solve(rho)
    from gravlasov.radial import _derivative4
    dphi = _derivative4(phi.values, grid_r.h)
    from scipy.integrate import simpson
    enclosed = simpson(grid_r.nodes ** 2 * rho.values, x=grid_r.nodes)
    # one-sided boundary stencil limits the derivative reconstruction
    assert dphi[-1] * grid_r.r_max ** 2 == pytest.approx(enclosed, rel=1e-6)


def test_poisson_output_monotone_nonpositive(grids):
    grid_r, grid_u = grids
    f = bump_density(grid_r, grid_u, r_scale=0.4, u_scale=0.5)
    phi = poisson_solve(density_moment(f))
    assert np.all(np.diff(phi.values) >= -1e-15)
    assert np.all(phi.values <= 1e-15)


def test_gradient_energy_ball_and_identity():
    grid = RadialGrid(r_max=8.0, n=2049)
    rho_vals = np.where(grid.nodes < 1.0, 1.0, 0.0)
    phi = poisson_solve(RadialField(grid=grid, values=rho_vals))
    # closed form for the unit ball: 4 pi / 15
    assert gradient_energy(phi) == pytest.approx(4.0 * math.pi / 15.0,
                                                 rel=4 * grid.h)


def test_gradient_energy_two_routes_agree():
    grid = RadialGrid(r_max=10.0, n=2049)
    r = grid.nodes
    rho_vals = np.exp(-((r / 0.8) ** 2))
    rho_vals[r > 5.0] = 0.0   # tail below 1e-16 there; keep support clear of r_max
    rho = RadialField(grid=grid, values=rho_vals)
    phi = poisson_solve(rho)
    e_grad = gradient_energy(phi)
    e_virial = -0.5 * 4.0 * math.pi * np.trapezoid(r * r * phi.values * rho_vals, r)
    assert e_grad == pytest.approx(e_virial, rel=1e-8)


def test_functionals_box(grids):
    grid_r, grid_u = grids
    spec = make_polytrope(2.0)
    f = box_density(*grids)
    rep = functionals(f, spec, ModelParams())
    h = max(grid_r.h, grid_u.h)
    assert rep.m1 == pytest.approx(16.0 * math.pi ** 2 / 9.0, rel=6 * h)
    assert rep.mj == pytest.approx(rep.m1, rel=1e-12)  # j(1) = 1
    assert rep.ekin == pytest.approx(16.0 * math.pi ** 2 / 30.0, rel=6 * h)
    assert rep.hc == rep.ekin - rep.epot
    assert rep.ej_norm == rep.m1 + rep.mj + rep.ekin


def test_functionals_zero(grids):
    grid_r, grid_u = grids
    spec = make_polytrope(2.0)
    f = PhaseDensity(grid_r=grid_r, grid_u=grid_u,
                     values=np.zeros((grid_r.n, grid_u.m)))
    rep = functionals(f, spec, ModelParams(c=2.0))
    assert rep.m1 == rep.mj == rep.ekin == rep.epot == 0.0


def test_refinement_order_on_smooth_density():
    # coarse grids keep the discretization error above roundoff
    spec = make_polytrope(2.0)
    params = ModelParams()
    values = {}
    for n in (17, 33, 1025):
        gr = RadialGrid(r_max=6.0, n=n)
        gu = SpeedGrid(u_max=6.0, m=n)
        rep = functionals(bump_density(gr, gu, 0.7, 0.7), spec, params)
        values[n] = np.array([rep.m1, rep.mj, rep.ekin, rep.epot])
    err_c = np.abs(values[17] - values[1025])
    err_f = np.abs(values[33] - values[1025])
    order = np.log2(err_c / np.maximum(err_f, 1e-300))
    assert np.all(order >= 1.8)


def test_distribution_function_examples(grids):
    grid_r, grid_u = grids
    f0 = PhaseDensity(grid_r=grid_r, grid_u=grid_u,
                      values=np.zeros((grid_r.n, grid_u.m)))
    assert np.all(distribution_function(f0, [0.5, 1.0]) == 0.0)
    f = box_density(grid_r, grid_u, amp=2.0)
    vol = distribution_function(f, [1.0])[0]
    h = max(grid_r.h, grid_u.h)
    assert vol == pytest.approx(16.0 * math.pi ** 2 / 9.0, rel=5 * h)


def test_distribution_function_monotone(grids):
    grid_r, grid_u = grids
    f = bump_density(grid_r, grid_u, 0.6, 0.8, amplitude=3.0)
    levels = np.geomspace(1e-3, 3.0, 40)
    dist = distribution_function(f, levels)
    assert np.all(np.diff(dist) <= 0.0)
    # right continuity: nudging the level up by epsilon cannot raise the volume
    nudged = distribution_function(f, levels * (1 + 1e-12))
    assert np.all(nudged <= dist + 1e-15)


def test_distribution_function_validates_levels(grids):
    f = bump_density(*grids, 0.6, 0.8)
    with pytest.raises(ValueError):
        distribution_function(f, [-1.0, 1.0])
    with pytest.raises(ValueError):
        distribution_function(f, [2.0, 1.0])


def test_ej_distance_properties(grids):
    grid_r, grid_u = grids
    spec = make_polytrope(2.0)
    params = ModelParams(c=1.0)
    f = bump_density(grid_r, grid_u, 0.5, 0.6)
    g = bump_density(grid_r, grid_u, 0.7, 0.4)
    zero = PhaseDensity(grid_r=grid_r, grid_u=grid_u,
                        values=np.zeros((grid_r.n, grid_u.m)))
    assert ej_distance(f, f, spec, params) == 0.0
    assert ej_distance(f, g, spec, params) == pytest.approx(
        ej_distance(g, f, spec, params), rel=1e-14)
    rep = functionals(f, spec, params)
    assert ej_distance(f, zero, spec, params) == pytest.approx(rep.ej_norm,
                                                               rel=1e-10)
    other = bump_density(RadialGrid(r_max=4.0, n=129),
                         SpeedGrid(u_max=4.0, m=129), 0.5, 0.6)
    with pytest.raises(GridMismatchError):
        ej_distance(f, other, spec, params)


def test_csv_roundtrip(tmp_path, grids):
    grid_r, grid_u = grids
    f = bump_density(grid_r, grid_u, 0.5, 0.6)
    rho = density_moment(f)
    path = tmp_path / "rho.csv"
    write_radial_field(path, rho)
    back = read_radial_field(path)
    assert_allclose(back.values, rho.values, rtol=0, atol=0)
    assert_allclose(back.grid.nodes, rho.grid.nodes)

    small = PhaseDensity.from_callable(RadialGrid(r_max=3.0, n=33),
                                       SpeedGrid(u_max=2.0, m=17),
                                       lambda r, u: np.maximum(
                                           (1 - r / 3.0) * (1 - u / 2.0)
                                           * (r < 2.5) * (u < 1.5), 0.0))
    fpath = tmp_path / "f.csv"
    write_phase_density(fpath, small)
    back_f = read_phase_density(fpath)
    assert_allclose(back_f.values, small.values, rtol=0, atol=0)
