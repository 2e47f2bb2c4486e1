"""3D reconstruction: profiles, vertical velocity, pressure, stress, CSV."""

import numpy as np
import pytest

from thinflow.closures import adaptive_quad
from thinflow.grid import divergence, forcing_from_angle
from thinflow.reconstruct import (
    Extrusion3D,
    chebyshev_layers,
    dz_nonuniform,
    extrude,
    profile_function,
    reconstruct_pressure,
    reconstruct_profile,
    reconstruct_uz,
    shear_function,
    write_extrusion,
)
from thinflow.state import ConformationState, Model, RheologyParams, ShallowState

from conftest import (
    flat_topo,
    make_grid,
    params_for,
    smooth_conf,
    smooth_state,
    smooth_topo,
    standard_forcing,
)

ALL_PROFILE_MODELS = [
    Model.NEWTONIAN_INERTIAL,
    Model.POWERLAW_INERTIAL,
    Model.VISCOELASTIC_INERTIAL,
    Model.VISCOELASTIC_INERTIAL_HW,
    Model.VISCOELASTIC_SLICES,
    Model.VISCOELASTIC_SLICES_HW,
    Model.NEWTONIAN_VISCOUS,
    Model.POWERLAW_VISCOUS,
    Model.VISCOELASTIC_VISCOUS,
]

INERTIAL_PROFILE_MODELS = ALL_PROFILE_MODELS[:6]


def _setting(nx=8, ny=5):
    grid = make_grid(nx, ny)
    return grid, smooth_state(grid), smooth_conf(grid), smooth_topo(grid), standard_forcing()


def depth_integral(profile, b, h, tol=1e-13):
    """Adaptive quadrature of a z-profile over [b, b+h], per cell and component."""

    def f(t):
        # t: (nodes,) in [0, 1]; sample z = b + h*t, node axis moved first so
        # the quadrature weight contraction hits the right axis
        z = b[..., None] + h[..., None] * t
        vals = profile(z)  # (nx, ny, nodes, 2)
        return np.moveaxis(vals, -2, 0) * h[None, ..., None]

    return adaptive_quad(f, 0.0, 1.0, tol=tol)


# ---------------------------------------------------------------------------
# layer geometry


def test_chebyshev_layers_span_the_column():
    grid, state, _, topo, _ = _setting()
    z = chebyshev_layers(topo, state, nz=10)
    assert z.shape == grid.shape + (10,)
    assert np.allclose(z[..., 0], topo.b, atol=1e-14)
    assert np.allclose(z[..., -1], topo.b + state.h, atol=1e-14)
    assert np.all(np.diff(z, axis=-1) > 0)
    # clustered toward both ends relative to uniform spacing
    d = np.diff(z, axis=-1)
    assert np.all(d[..., 0] < d[..., 4])


def test_extrusion_validation():
    nz = 5
    z = np.cumsum(np.ones((2, 2, nz)), axis=-1)
    fields = dict(
        uH3=np.zeros((2, 2, nz, 2)), uz3=np.zeros((2, 2, nz)),
        p3=np.zeros((2, 2, nz)), stress3=np.zeros((2, 2, nz, 6)),
    )
    Extrusion3D(nz=nz, z=z, **fields)
    with pytest.raises(ValueError, match="4 layers"):
        Extrusion3D(nz=3, z=z[..., :3], **fields)
    bad = z.copy()
    bad[..., 2] = bad[..., 1]
    with pytest.raises(ValueError, match="increasing"):
        Extrusion3D(nz=nz, z=bad, **fields)


# ---------------------------------------------------------------------------
# velocity profiles


@pytest.mark.parametrize("model", INERTIAL_PROFILE_MODELS)
def test_inertial_profile_depth_mean_is_u0(model):
    grid, state, conf, topo, forcing = _setting()
    params = params_for(model)
    f = profile_function(state, conf, topo, forcing, params, grid)
    u0 = state.velocity()
    mean = depth_integral(f, topo.b, state.h) / state.h[..., None]
    assert np.abs(mean - u0).max() <= 1e-10


@pytest.mark.parametrize(
    "model", [Model.NEWTONIAN_VISCOUS, Model.POWERLAW_VISCOUS, Model.VISCOELASTIC_VISCOUS]
)
def test_viscous_profile_depth_integral_is_lubrication_flux(model):
    from thinflow.models import effective_forcing
    from thinflow import closures

    grid, state, conf, topo, forcing = _setting()
    params = params_for(model)
    f = profile_function(state, conf, topo, forcing, params, grid, theta_small=True)
    flux = depth_integral(f, topo.b, state.h)
    a = effective_forcing(state, topo, forcing, params, grid, True)
    if model is Model.NEWTONIAN_VISCOUS:
        ref = closures.newtonian_discharge(state.h, params.re, params.k_friction, 1.0)
        ref = ref * (-a)  # closure takes the negated driving
    elif model is Model.POWERLAW_VISCOUS:
        ref = np.empty(grid.shape + (2,))
        for i in range(grid.nx):
            for j in range(grid.ny):
                ref[i, j] = closures.powerlaw_discharge(
                    float(state.h[i, j]), params.re, params.k_friction,
                    params.n_power, -a[i, j],
                )
    else:
        ref = closures.viscoelastic_viscous_flux(
            state.h, params.re, params.de, params.theta_ve, a, conf.s_hz
        )
    assert np.abs(flux - ref).max() <= 1e-9


@pytest.mark.parametrize("model", ALL_PROFILE_MODELS)
def test_shear_matches_numerical_profile_derivative(model):
    grid, state, conf, topo, forcing = _setting()
    params = params_for(model)
    f = profile_function(state, conf, topo, forcing, params, grid, theta_small=True)
    g = shear_function(state, conf, topo, forcing, params, grid, theta_small=True)
    zc = topo.b[..., None] + state.h[..., None] * np.array([0.25, 0.5, 0.75])
    eps = 1e-6
    fd = (f(zc + eps) - f(zc - eps)) / (2 * eps)
    assert np.abs(fd - g(zc)).max() <= 1e-6


def test_frictionless_inertial_profile_is_flat():
    grid, state, conf, topo, forcing = _setting()
    params = params_for(Model.NEWTONIAN_INERTIAL, k_friction=0.0)
    f = profile_function(state, conf, topo, forcing, params, grid)
    zc = topo.b[..., None] + state.h[..., None] * np.array([0.0, 0.5, 1.0])
    prof = f(zc)
    u0 = state.velocity()
    assert np.abs(prof - u0[..., None, :]).max() <= 1e-14


# ---------------------------------------------------------------------------
# vertical velocity and pressure


def test_reconstruct_uz_formula():
    grid, state, _, topo, _ = _setting()
    z = chebyshev_layers(topo, state, nz=6)
    uz = reconstruct_uz(state, topo, grid, z)
    u0 = state.velocity()
    expected = (
        np.sum(u0 * topo.grad_b, axis=-1)[..., None]
        + (topo.b[..., None] - z) * divergence(u0, grid)[..., None]
    )
    assert np.array_equal(uz, expected)


def test_pressure_vanishes_at_surface_for_uniform_flow():
    grid = make_grid(8, 5)
    topo = flat_topo(grid)
    forcing = standard_forcing()
    h = np.full(grid.shape, 0.4)
    q = np.zeros(grid.shape + (2,))
    q[..., 0] = 0.4 * 0.7  # uniform u: div u0 = 0
    state = ShallowState(h=h, q=q)
    params = params_for(Model.NEWTONIAN_INERTIAL)
    z_surf = (topo.b + state.h)[..., None]
    p = reconstruct_pressure(state, topo, forcing, params, grid, z_surf)
    assert np.abs(p).max() <= 1e-14
    # hydrostatic at the bed: p = -f_z h
    p_bed = reconstruct_pressure(state, topo, forcing, params, grid, topo.b[..., None])
    assert np.allclose(p_bed[..., 0], -forcing.f_z * state.h, atol=1e-14)


def test_pressure_includes_surface_tension_term():
    grid, state, _, topo, forcing = _setting()
    p0 = params_for(Model.VISCOELASTIC_INERTIAL, gamma=0.0)
    p1 = params_for(Model.VISCOELASTIC_INERTIAL, gamma=0.8)
    z = topo.b[..., None]
    from thinflow.grid import laplacian

    diff = (
        reconstruct_pressure(state, topo, forcing, p1, grid, z)
        - reconstruct_pressure(state, topo, forcing, p0, grid, z)
    )[..., 0]
    assert np.allclose(diff, -0.8 * laplacian(topo.b + state.h, grid), atol=1e-13)


# ---------------------------------------------------------------------------
# nonuniform z-derivative


def test_dz_nonuniform_exact_on_quadratics(rng):
    z = np.sort(rng.uniform(0.0, 1.0, size=(3, 2, 9)), axis=-1)
    f = 2.0 + 3.0 * z - 1.5 * z**2
    got = dz_nonuniform(f, z)
    assert np.allclose(got, 3.0 - 3.0 * z, atol=1e-10)
    # vector-valued variant
    fv = np.stack([f, -2.0 * f], axis=-1)
    gotv = dz_nonuniform(fv, z)
    assert np.allclose(gotv[..., 0], 3.0 - 3.0 * z, atol=1e-10)
    assert np.allclose(gotv[..., 1], -2.0 * (3.0 - 3.0 * z), atol=1e-9)


# ---------------------------------------------------------------------------
# stress


def test_stress_shear_component_linear_shear_oracle():
    # uniform depth, flat bed, velocity varying only through the profile:
    # Txz must equal solvent viscosity times the analytic shear
    grid = make_grid(8, 5)
    topo = flat_topo(grid)
    forcing = forcing_from_angle(1.0, 0.0)
    h = np.full(grid.shape, 0.5)
    q = np.zeros(grid.shape + (2,))
    q[..., 0] = 0.5 * 0.8
    state = ShallowState(h=h, q=q)
    conf = ConformationState.identity(grid)
    params = params_for(Model.VISCOELASTIC_INERTIAL, re=10.0, k_friction=0.4, theta_ve=0.3)
    ext = extrude(state, conf, topo, forcing, params, grid, nz=8)
    g = shear_function(state, conf, topo, forcing, params, grid)
    expected = ((1.0 - 0.3) / 10.0) * g(ext.z)[..., 0]
    # sigma = I: no elastic contribution; horizontal derivatives vanish
    assert np.abs(ext.stress3[..., 3] - expected).max() <= 1e-12
    assert np.abs(ext.stress3[..., 4]).max() <= 1e-12


def test_stress_elastic_block_from_conformation():
    grid = make_grid(8, 5)
    topo = flat_topo(grid)
    forcing = forcing_from_angle(1.0, 0.0)
    state = ShallowState(h=np.full(grid.shape, 0.5), q=np.zeros(grid.shape + (2,)))
    conf = ConformationState.identity(grid)
    conf.s_hh[..., 0] = 1.6
    params = params_for(
        Model.VISCOELASTIC_INERTIAL, re=10.0, de=0.5, theta_ve=0.3, k_friction=0.0
    )
    ext = extrude(state, conf, topo, forcing, params, grid, nz=6)
    coef = 0.3 / (10.0 * 0.5)
    assert np.allclose(ext.stress3[..., 0], coef * 0.6, atol=1e-12)
    assert np.abs(ext.stress3[..., 2]).max() <= 1e-12


def test_extrude_shapes_and_csv(tmp_path):
    grid, state, conf, topo, forcing = _setting(6, 4)
    params = params_for(Model.VISCOELASTIC_INERTIAL)
    ext = extrude(state, conf, topo, forcing, params, grid, nz=7)
    assert ext.uH3.shape == grid.shape + (7, 2)
    assert ext.stress3.shape == grid.shape + (7, 6)
    path = tmp_path / "ext.csv"
    write_extrusion(path, grid, ext)
    lines = path.read_text().splitlines()
    assert lines[0] == "x,y,z,ux,uy,uz,p,Txx,Txy,Tyy,Txz,Tyz,Tzz"
    assert len(lines) == 1 + grid.nx * grid.ny * 7
    # deterministic: writing again is byte-identical
    path2 = tmp_path / "ext2.csv"
    write_extrusion(path2, grid, ext)
    assert path.read_bytes() == path2.read_bytes()


def test_reconstruct_profile_delegates_to_profile_function():
    grid, state, conf, topo, forcing = _setting()
    params = params_for(Model.NEWTONIAN_INERTIAL)
    z = chebyshev_layers(topo, state, nz=5)
    a = reconstruct_profile(state, conf, topo, forcing, params, grid, z)
    b = profile_function(state, conf, topo, forcing, params, grid)(z)
    assert np.array_equal(a, b)
