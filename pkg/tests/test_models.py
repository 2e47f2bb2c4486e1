"""Model right-hand sides: consistency gates, equilibria and structure."""

import numpy as np
import pytest

from thinflow import models
from thinflow.closures import ClosureError
from thinflow.grid import build_topography, forcing_from_angle
from thinflow.models import (
    apply_fenep_factor,
    fenep_factor,
    newtonian_friction,
    rhs,
    rhs_newtonian_inertial,
    rhs_powerlaw_inertial,
    rhs_viscoelastic_inertial,
    viscoelastic_friction,
)
from thinflow.state import Closure, ConformationState, Model, RheologyParams, ShallowState

from conftest import (
    flat_topo,
    make_grid,
    params_for,
    smooth_conf,
    smooth_state,
    smooth_topo,
    standard_forcing,
)


def _setting(nx=10, ny=6):
    grid = make_grid(nx, ny)
    return grid, smooth_state(grid), smooth_conf(grid), smooth_topo(grid), standard_forcing()


# ---------------------------------------------------------------------------
# consistency gates


def test_powerlaw_n1_matches_newtonian_inertial():
    grid, state, _, topo, forcing = _setting()
    p_n = params_for(Model.NEWTONIAN_INERTIAL)
    p_p = params_for(Model.POWERLAW_INERTIAL, n_power=1.0)
    rn = rhs_newtonian_inertial(state, topo, forcing, p_n, grid)
    rp = rhs_powerlaw_inertial(state, topo, forcing, p_p, grid)
    assert np.abs(rp.dh_dt - rn.dh_dt).max() <= 1e-12
    assert np.abs(rp.dq_dt - rn.dq_dt).max() <= 1e-12


def test_powerlaw_n1_matches_newtonian_viscous():
    grid, state, _, topo, forcing = _setting()
    p_n = params_for(Model.NEWTONIAN_VISCOUS)
    p_p = params_for(Model.POWERLAW_VISCOUS, n_power=1.0)
    rn = rhs(state, None, topo, forcing, p_n, grid, theta_small=True)
    rp = rhs(state, None, topo, forcing, p_p, grid, theta_small=True)
    assert np.abs(rp.dh_dt - rn.dh_dt).max() <= 1e-12


def test_theta_zero_viscoelastic_momentum_matches_newtonian():
    grid, state, conf, topo, forcing = _setting()
    conf = ConformationState.identity(grid)
    p_n = params_for(Model.NEWTONIAN_INERTIAL, re=50.0, k_friction=0.2)
    p_v = params_for(
        Model.VISCOELASTIC_INERTIAL, re=50.0, k_friction=0.2, de=0.5, theta_ve=1e-8
    )
    rn = rhs_newtonian_inertial(state, topo, forcing, p_n, grid)
    rv = rhs_viscoelastic_inertial(state, conf, topo, forcing, p_v, grid)
    scale = np.abs(rn.dq_dt).max()
    assert np.abs(rv.dq_dt - rn.dq_dt).max() <= 1e-6 * max(scale, 1.0)
    assert np.abs(rv.dh_dt - rn.dh_dt).max() <= 1e-12


def test_fenep_infinite_extensibility_matches_ucm():
    grid, state, conf, topo, forcing = _setting()
    p_u = params_for(Model.VISCOELASTIC_INERTIAL)
    p_f = p_u.with_(closure=Closure.FENEP, b_fene=float("inf"))
    ru = rhs_viscoelastic_inertial(state, conf, topo, forcing, p_u, grid)
    rf = rhs_viscoelastic_inertial(state, conf, topo, forcing, p_f, grid)
    for name in ("dh_dt", "dq_dt", "ds_hh", "ds_hz", "ds_zz"):
        assert np.abs(getattr(rf, name) - getattr(ru, name)).max() <= 1e-12


def test_fenep_finite_extensibility_differs_from_ucm():
    grid, state, conf, topo, forcing = _setting()
    p_u = params_for(Model.VISCOELASTIC_INERTIAL)
    p_f = p_u.with_(closure=Closure.FENEP, b_fene=6.0)
    ru = rhs_viscoelastic_inertial(state, conf, topo, forcing, p_u, grid)
    rf = rhs_viscoelastic_inertial(state, conf, topo, forcing, p_f, grid)
    assert np.abs(rf.dq_dt - ru.dq_dt).max() > 1e-6


# ---------------------------------------------------------------------------
# friction closures


def test_newtonian_friction_slip_factor():
    grid = make_grid(4, 4)
    state = ShallowState(h=np.full(grid.shape, 0.1), q=np.zeros(grid.shape + (2,)))
    u = np.zeros(grid.shape + (2,))
    u[..., 0] = 2.0
    p = RheologyParams(model=Model.NEWTONIAN_INERTIAL, re=10.0, k_friction=0.3)
    f = newtonian_friction(state, u, p)
    # 1 - h Re k / 3 = 1 - 0.1*10*0.3/3 = 0.9
    assert np.allclose(f[..., 0], -0.3 * 0.9 * 2.0, atol=1e-14)
    assert np.all(newtonian_friction(state, u, p.with_(k_friction=0.0)) == 0.0)
    plain = newtonian_friction(state, u, p, include_slip_correction=False)
    assert np.allclose(plain[..., 0], -0.6, atol=1e-14)


def test_viscoelastic_friction_cross_term():
    grid = make_grid(4, 4)
    h = np.full(grid.shape, 0.2)
    state = ShallowState(h=h, q=np.zeros(grid.shape + (2,)))
    conf = ConformationState.identity(grid)
    conf.s_hz[..., 0] = 0.5
    u = np.zeros(grid.shape + (2,))
    u[..., 0] = 1.0
    p = RheologyParams(
        model=Model.VISCOELASTIC_INERTIAL, re=10.0, de=2.0, theta_ve=0.5, k_friction=0.3
    )
    f = viscoelastic_friction(state, conf, u, p)
    c = 1.0 / (1.0 - 0.5)
    expect = -0.3 * (1.0 - c * 10.0 * 0.3 * 0.2 / 3.0) * 1.0 - 0.3 * c * (
        0.5 * 0.2 / (2.0 * 2.0)
    ) * 0.5
    assert np.allclose(f[..., 0], expect, atol=1e-14)
    # slices variant uses plain -k u
    plain = viscoelastic_friction(state, conf, u, p, include_slip_correction=False)
    assert np.allclose(plain[..., 0], -0.3, atol=1e-14)


def test_viscoelastic_friction_bed_offset_switch():
    grid = make_grid(4, 4)
    h = np.full(grid.shape, 0.2)
    b = np.full(grid.shape, 0.1)
    state = ShallowState(h=h, q=np.zeros(grid.shape + (2,)))
    conf = ConformationState.identity(grid)
    u = np.ones(grid.shape + (2,))
    p = params_for(Model.VISCOELASTIC_INERTIAL, bed_offset_in_friction=True)
    with pytest.raises(ValueError, match="bed"):
        viscoelastic_friction(state, conf, u, p)
    shifted = viscoelastic_friction(state, conf, u, p, b=b)
    # equals the plain variant evaluated at depth h + b
    ref_state = ShallowState(h=h + b, q=state.q)
    ref = viscoelastic_friction(
        ref_state, conf, u, p.with_(bed_offset_in_friction=False)
    )
    assert np.allclose(shifted, ref, atol=1e-14)


# ---------------------------------------------------------------------------
# FENE-P bookkeeping


def test_fenep_factor_values():
    grid = make_grid(4, 4)
    conf = ConformationState.identity(grid)
    p = params_for(Model.VISCOELASTIC_INERTIAL, closure=Closure.FENEP, b_fene=6.0)
    # tr sigma = 3 = b/2 -> factor 2
    assert np.allclose(fenep_factor(conf, p), 2.0, atol=1e-14)
    conf.s_zz += 4.0  # trace 7 >= 6
    with pytest.raises(ClosureError, match="extensibility"):
        fenep_factor(conf, p)


def test_apply_fenep_factor_identity_at_infinity():
    grid, state, conf, topo, forcing = _setting()
    p = params_for(Model.VISCOELASTIC_INERTIAL, closure=Closure.FENEP, b_fene=float("inf"))
    r = rhs_viscoelastic_inertial(state, conf, topo, forcing, p, grid)
    r2 = apply_fenep_factor(r, conf, p)
    assert r2 is r


def test_apply_fenep_factor_rejects_underived_models():
    grid, state, conf, topo, forcing = _setting()
    p = params_for(Model.VISCOELASTIC_INERTIAL_HW)
    r = rhs_viscoelastic_inertial(state, conf, topo, forcing, p, grid)
    with pytest.raises(ValueError, match="not derived"):
        apply_fenep_factor(r, conf, p)


# ---------------------------------------------------------------------------
# equilibria and structure


INERTIAL_MODELS = [
    Model.NEWTONIAN_INERTIAL,
    Model.POWERLAW_INERTIAL,
    Model.VISCOELASTIC_INERTIAL,
    Model.VISCOELASTIC_INERTIAL_HW,
    Model.VISCOELASTIC_SLICES,
    Model.VISCOELASTIC_SLICES_HW,
]

ALL_MODELS = INERTIAL_MODELS + [
    Model.NEWTONIAN_VISCOUS,
    Model.POWERLAW_VISCOUS,
    Model.VISCOELASTIC_VISCOUS,
]


@pytest.mark.parametrize("model", ALL_MODELS)
def test_rest_state_on_flat_bed_is_equilibrium(model):
    grid = make_grid(8, 6)
    topo = flat_topo(grid)
    forcing = forcing_from_angle(1.0, 0.0)
    h = np.full(grid.shape, 0.4)
    state = ShallowState(h=h, q=np.zeros(grid.shape + (2,)))
    conf = ConformationState.identity(grid)
    p = params_for(model)
    theta_small = model in (Model.NEWTONIAN_VISCOUS, Model.POWERLAW_VISCOUS)
    r = rhs(state, conf, topo, forcing, p, grid, theta_small=theta_small)
    assert np.abs(r.dh_dt).max() <= 1e-14
    if r.dq_dt is not None:
        assert np.abs(r.dq_dt).max() <= 1e-14
    for ds in (r.ds_hh, r.ds_hz, r.ds_zz):
        if ds is not None:
            assert np.abs(ds).max() <= 1e-14


@pytest.mark.parametrize("model", INERTIAL_MODELS)
def test_mass_rate_integrates_to_zero_on_periodic_domain(model):
    grid, state, conf, topo, forcing = _setting()
    r = rhs(state, conf, topo, forcing, params_for(model), grid)
    assert abs(r.dh_dt.sum()) <= 1e-12 * np.abs(state.q).max() / min(grid.dx, grid.dy)


def test_powerlaw_shear_thinning_admissibility_error():
    grid, state, _, topo, forcing = _setting()
    p = params_for(Model.POWERLAW_INERTIAL, n_power=0.5, re=50.0, k_friction=1.0)
    # |u| ~ 0.3 exceeds sqrt(2)/(k Re) = 0.028
    with pytest.raises(ClosureError, match="admissibility"):
        rhs_powerlaw_inertial(state, topo, forcing, p, grid)


def test_lubrication_models_require_friction():
    grid, state, _, topo, forcing = _setting()
    p = params_for(Model.NEWTONIAN_VISCOUS, k_friction=0.0)
    with pytest.raises(ClosureError, match="k_friction"):
        rhs(state, None, topo, forcing, p, grid, theta_small=True)


def test_viscoelastic_viscous_needs_topography():
    grid, state, conf, topo, forcing = _setting()
    with pytest.raises(ValueError, match="topography"):
        models.rhs_viscoelastic_viscous(
            state, conf, forcing, params_for(Model.VISCOELASTIC_VISCOUS), grid
        )


def test_lubrication_flux_direction_is_downslope():
    # inclined driving must push mass in the +x (downslope) direction
    grid = make_grid(16, 4)
    topo = flat_topo(grid)
    forcing = forcing_from_angle(1.0, 0.1)
    X, _ = grid.cell_centers()
    h = 0.2 + 0.05 * np.sin(2 * np.pi * X)
    state = ShallowState(h=h, q=np.zeros(grid.shape + (2,)))
    conf = ConformationState.identity(grid)
    for model in (Model.NEWTONIAN_VISCOUS, Model.POWERLAW_VISCOUS, Model.VISCOELASTIC_VISCOUS):
        qx = models.lubrication_face_flux(
            state, conf, topo, forcing, params_for(model), grid, False, 0
        )
        assert np.all(qx > 0.0), model


def test_x_y_symmetry_of_newtonian_inertial():
    # transposing the scenario and swapping components must commute with the rhs
    grid = make_grid(8, 8)
    state = smooth_state(grid)
    topo = smooth_topo(grid)
    forcing = forcing_from_angle(1.0, 0.0)  # no in-plane preferred direction
    p = params_for(Model.NEWTONIAN_INERTIAL)
    r = rhs_newtonian_inertial(state, topo, forcing, p, grid)
    state_t = ShallowState(h=state.h.T.copy(), q=state.q[..., ::-1].transpose(1, 0, 2).copy())
    topo_t = build_topography(grid, topo.b.T.copy())
    r_t = rhs_newtonian_inertial(state_t, topo_t, forcing, p, grid)
    assert np.allclose(r_t.dh_dt, r.dh_dt.T, atol=1e-13)
    assert np.allclose(r_t.dq_dt[..., 0], r.dq_dt[..., 1].T, atol=1e-13)
    assert np.allclose(r_t.dq_dt[..., 1], r.dq_dt[..., 0].T, atol=1e-13)


def test_conformation_rates_preserve_symmetry_layout():
    grid, state, conf, topo, forcing = _setting()
    for model in (
        Model.VISCOELASTIC_INERTIAL,
        Model.VISCOELASTIC_SLICES,
        Model.VISCOELASTIC_SLICES_HW,
    ):
        r = rhs(state, conf, topo, forcing, params_for(model), grid)
        assert r.ds_hh.shape == grid.shape + (3,)
        assert r.ds_hz.shape == grid.shape + (2,)
        assert r.ds_zz.shape == grid.shape
        assert np.all(np.isfinite(r.ds_hh))


def test_hw_models_have_no_relaxation():
    grid = make_grid(6, 5)
    topo = flat_topo(grid)
    forcing = forcing_from_angle(1.0, 0.0)
    h = np.full(grid.shape, 0.3)
    state = ShallowState(h=h, q=np.zeros(grid.shape + (2,)))
    conf = smooth_conf(grid)  # perturbed conformation, fluid at rest
    r_hw = rhs(state, conf, topo, forcing, params_for(Model.VISCOELASTIC_INERTIAL_HW), grid)
    r_uc = rhs(state, conf, topo, forcing, params_for(Model.VISCOELASTIC_INERTIAL), grid)
    # at rest the only conformation source is relaxation: absent for HW
    assert np.abs(r_hw.ds_zz).max() <= 1e-14
    assert np.abs(r_uc.ds_zz).max() > 1e-3
