r"""Semi-discrete right-hand sides of the reduced models.

Each ``rhs_*`` assembles the complete rate of change of the conserved fields
(h, hu, and h-weighted conformation components where present) on the grid,
using central differences everywhere; the time stepper replaces the hyperbolic
part with a well-balanced finite-volume discretization and the stiff
friction / relaxation parts with exact exponential updates, but reuses the
same source assembly, so the central form here is the single authority for
what each model's terms are.

Lubrication-type models (pure h equations) are assembled directly in
conservative face-flux form, which both the tests and the stepper use.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import closures
from .closures import ClosureError
from .grid import Grid2D, Topography, Forcing, ddx, ddy, divergence, gradient, laplacian, pad
from .state import (
    ConformationState,
    Closure,
    Model,
    RheologyParams,
    ShallowState,
    VISCOELASTIC_MODELS,
)

DRYTOL = 1e-14


@dataclass
class ModelRHS:
    """Rates of change of the conserved fields, plus FENE-P bookkeeping."""

    dh_dt: np.ndarray
    dq_dt: np.ndarray | None = None
    ds_hh: np.ndarray | None = None  # d(h sigma_HH)/dt, components (xx, xy, yy)
    ds_hz: np.ndarray | None = None  # d(h sigma_Hz)/dt
    ds_zz: np.ndarray | None = None  # d(h sigma_zz)/dt
    # pieces apply_fenep_factor rescales (UCM-valued)
    relax_shh: np.ndarray | None = field(default=None, repr=False)
    relax_szz: np.ndarray | None = field(default=None, repr=False)
    elastic_tensor: np.ndarray | None = field(default=None, repr=False)
    grid: Grid2D | None = field(default=None, repr=False)


# ---------------------------------------------------------------------------
# small tensor helpers


def sym_to_mat(s):
    """(nx, ny, 3) xx, xy, yy components -> (nx, ny, 2, 2)."""
    m = np.empty(s.shape[:-1] + (2, 2))
    m[..., 0, 0] = s[..., 0]
    m[..., 0, 1] = s[..., 1]
    m[..., 1, 0] = s[..., 1]
    m[..., 1, 1] = s[..., 2]
    return m


def mat_to_sym(m):
    """(nx, ny, 2, 2) symmetric part -> (nx, ny, 3)."""
    return np.stack(
        [m[..., 0, 0], 0.5 * (m[..., 0, 1] + m[..., 1, 0]), m[..., 1, 1]], axis=-1
    )


def grad_velocity(u, grid):
    """(nx, ny, 2, 2) with entries d_j u_i."""
    p = pad(u, grid, 1)
    g = np.empty(u.shape[:-1] + (2, 2))
    g[..., 0] = (p[2:, 1:-1] - p[:-2, 1:-1]) / (2.0 * grid.dx)
    g[..., 1] = (p[1:-1, 2:] - p[1:-1, :-2]) / (2.0 * grid.dy)
    return g


def div_tensor(t, grid):
    """Divergence of a (nx, ny, 2, 2) tensor field; result (nx, ny, 2)."""
    p = pad(t, grid, 1)
    return (p[2:, 1:-1, :, 0] - p[:-2, 1:-1, :, 0]) / (2.0 * grid.dx) + (
        p[1:-1, 2:, :, 1] - p[1:-1, :-2, :, 1]
    ) / (2.0 * grid.dy)


def strain_rate(grad_u):
    """Symmetric part D_H(u) of a velocity gradient."""
    return 0.5 * (grad_u + np.swapaxes(grad_u, -1, -2))


def effective_forcing(state, topo, forcing, params, grid, theta_small):
    """In-plane driving a+ = f_H [+ f_z grad(b+h) + gamma grad lap(b+h)]."""
    a = np.broadcast_to(forcing.f_H, state.h.shape + (2,)).copy()
    if theta_small:
        eta = topo.b + state.h
        a += forcing.f_z * gradient(eta, grid)
        if params.gamma > 0:
            a += params.gamma * gradient(laplacian(eta, grid), grid)
    return a


# ---------------------------------------------------------------------------
# shared pieces of the inertial (shallow-water-type) models


def _central_mass_momentum(state, u, grid):
    hu = state.h[..., None] * u
    dh_dt = -divergence(hu, grid)
    conv = -div_tensor(hu[..., :, None] * u[..., None, :], grid)
    return dh_dt, conv


def _pressure_tension_source(state, topo, forcing, params, grid):
    eta = topo.b + state.h
    src = state.h[..., None] * (forcing.f_H + forcing.f_z * gradient(eta, grid))
    if params.gamma > 0:
        src += params.gamma * state.h[..., None] * gradient(laplacian(eta, grid), grid)
    return src


def _viscous_term(coef, u, grid, prefactor):
    """prefactor * div( coef * (D_H(u) + div u I) )."""
    gu = grad_velocity(u, grid)
    d = strain_rate(gu)
    divu = gu[..., 0, 0] + gu[..., 1, 1]
    t = d.copy()
    t[..., 0, 0] += divu
    t[..., 1, 1] += divu
    return prefactor * div_tensor(coef[..., None, None] * t, grid)


def newtonian_friction(state, u, params, include_slip_correction=True):
    """-k u (1 - h Re k / 3); plain -k u when the correction is disabled."""
    k = params.k_friction
    if k == 0.0:
        return np.zeros_like(u)
    fac = 1.0 - state.h * params.re * k / 3.0 if include_slip_correction else 1.0
    return -k * np.asarray(fac)[..., None] * u


def rhs_newtonian_inertial(state, topo, forcing, params, grid, include_stiff=True):
    """Shallow-water system with parabolic-correction friction and viscosity."""
    u = state.velocity(DRYTOL)
    dh_dt, dq_dt = _central_mass_momentum(state, u, grid)
    dq_dt += _pressure_tension_source(state, topo, forcing, params, grid)
    if np.isfinite(params.re):
        dq_dt += _viscous_term(state.h, u, grid, 2.0 / params.re)
    if include_stiff:
        dq_dt += newtonian_friction(state, u, params)
    return ModelRHS(dh_dt=dh_dt, dq_dt=dq_dt, grid=grid)


# ---------------------------------------------------------------------------
# power-law inertial


def _powerlaw_cell_data(state, u, params, grid):
    """Per-cell quantities for the power-law inertial closure.

    Returns (a, unorm) with a = |D_H u0|^2 + |div u0|^2 (Frobenius norms).
    """
    gu = grad_velocity(u, grid)
    d = strain_rate(gu)
    divu = gu[..., 0, 0] + gu[..., 1, 1]
    a = np.sum(d * d, axis=(-1, -2)) + divu**2
    unorm = np.sqrt(np.sum(u * u, axis=-1))
    return a, unorm


def powerlaw_viscous_coefficient(h, unorm, a, params, npts=16):
    """Cellwise integral replacing h in the viscous term of the momentum equation.

    integral over the layer of y / phi_a^{-1}(y) with
    y(z) = Re k |u0| (b+h-z)/h; equals h exactly at n = 1.
    """
    re, k, n = params.re, params.k_friction, params.n_power
    x, w = closures.gauss_legendre(npts)
    # nodes in w = b+h-z over (0, h)
    wts = 0.5 * h * w.reshape((-1,) + (1,) * h.ndim)
    nodes = 0.5 * h * (1.0 + x.reshape((-1,) + (1,) * h.ndim))
    hsafe = np.where(h > DRYTOL, h, 1.0)
    y = re * k * unorm * nodes / hsafe
    tiny = 1e-300
    xin = closures.invert_phi(np.maximum(y, 0.0), np.broadcast_to(a, y.shape), n)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(xin > tiny, y / np.where(xin > tiny, xin, 1.0), 0.0)
    # y -> 0 limit of y/phi^{-1}(y) is a^{(n-1)/2} (1 when a = 0 degenerates)
    limit = np.where(a > tiny, np.power(np.maximum(a, tiny), 0.5 * (n - 1.0)), 1.0)
    ratio = np.where(y > 1e-14, ratio, np.broadcast_to(limit, y.shape))
    return np.sum(wts * ratio, axis=0)


def powerlaw_bed_correction(h, u, unorm, a, params, npts=16):
    """Bed value u1|_{z=b} of the zero-depth-mean power-law correction.

    u1(b) = -(1/h) int_0^h w s(w) dw with the componentwise shear
    s_c(w) = sign(u0_c) phi_a^{-1}(Re k |u0_c| w / h).
    """
    re, k, n = params.re, params.k_friction, params.n_power
    x, w = closures.gauss_legendre(npts)
    wts = 0.5 * h * w.reshape((-1,) + (1,) * h.ndim)
    nodes = 0.5 * h * (1.0 + x.reshape((-1,) + (1,) * h.ndim))
    hsafe = np.where(h > DRYTOL, h, 1.0)
    # both components share one stacked inversion call
    y = re * k * np.moveaxis(np.abs(u), -1, 0)[:, None] * nodes / hsafe
    s = closures.invert_phi(y, np.broadcast_to(a, y.shape), n)
    integ = -np.sum(wts * nodes * s, axis=1) / hsafe
    out = np.moveaxis(np.moveaxis(np.sign(u), -1, 0) * integ, 0, -1)
    out[h <= DRYTOL] = 0.0
    return out


def _check_powerlaw_admissibility(unorm, a, params):
    if params.n_power >= 1.0 or params.k_friction == 0.0:
        return
    bound = np.sqrt(2.0) / (params.k_friction * params.re)
    moving = unorm > DRYTOL
    bad = moving & ((unorm >= bound) | (a <= 0.0))
    if np.any(bad):
        cells = [tuple(ij) for ij in np.argwhere(bad)[:8]]
        raise ClosureError(
            f"power-law n<1 admissibility failed (need 0<|u0|<sqrt(2)/(k Re) and "
            f"|D_H u0|>0) at cells {cells}"
        )


def rhs_powerlaw_inertial(state, topo, forcing, params, grid, include_stiff=True):
    """Power-law shallow-water system: quadrature-closed viscosity and friction."""
    u = state.velocity(DRYTOL)
    a, unorm = _powerlaw_cell_data(state, u, params, grid)
    _check_powerlaw_admissibility(unorm, a, params)
    dh_dt, dq_dt = _central_mass_momentum(state, u, grid)
    dq_dt += _pressure_tension_source(state, topo, forcing, params, grid)
    if np.isfinite(params.re):
        if params.k_friction > 0.0:
            coef = powerlaw_viscous_coefficient(state.h, unorm, a, params)
        else:
            coef = state.h
        dq_dt += _viscous_term(coef, u, grid, 2.0 / params.re)
    if include_stiff and params.k_friction > 0.0:
        u1b = powerlaw_bed_correction(state.h, u, unorm, a, params)
        dq_dt += -params.k_friction * (u + u1b)
    return ModelRHS(dh_dt=dh_dt, dq_dt=dq_dt, grid=grid)


# ---------------------------------------------------------------------------
# viscoelastic inertial family


def fenep_factor(conf, params):
    """1 / (1 - tr sigma / b); raises outside the admissible set."""
    tr = conf.trace()
    if np.any(tr >= params.b_fene):
        raise ClosureError("conformation trace reached the FENE extensibility limit")
    return 1.0 / (1.0 - tr / params.b_fene)


def viscoelastic_friction(state, conf, u, params, b=None, include_slip_correction=True):
    """Friction -k(u0 + u1|_b) of the corrected viscoelastic profile.

    Corrected bed velocity u1(b) = (1/(1-theta)) (-(Re k h/3) u0
    + (theta h / 2De) sigma_Hz); slices-type models pass
    include_slip_correction=False and use plain -k u0.  The
    ``bed_offset_in_friction`` sensitivity switch replaces h by b+h in the
    correction coefficients.
    """
    k = params.k_friction
    if k == 0.0:
        return np.zeros_like(u)
    if not include_slip_correction:
        return -k * u
    c = 1.0 / (1.0 - params.theta_ve)
    hf = state.h
    if params.bed_offset_in_friction:
        if b is None:
            raise ValueError("bed_offset_in_friction needs the bed elevation")
        hf = state.h + b
    return (
        -k * (1.0 - c * params.re * k * hf / 3.0)[..., None] * u
        - k * c * (params.theta_ve * hf / (2.0 * params.de))[..., None] * conf.s_hz
    )


def _conformation_transport(state, conf, u, grid):
    """Central -div(h u sigma_c) for every conformation component."""
    h = state.h
    comps = np.concatenate([conf.s_hh, conf.s_hz, conf.s_zz[..., None]], axis=-1)
    hux = (h * u[..., 0])[..., None] * comps
    huy = (h * u[..., 1])[..., None] * comps
    adv = np.empty_like(comps)
    for c in range(comps.shape[-1]):
        adv[..., c] = -(ddx(hux[..., c], grid) + ddy(huy[..., c], grid))
    return adv[..., 0:3], adv[..., 3:5], adv[..., 5]


def conformation_sources(state, conf, u, topo, params, grid, include_relax=True):
    """Stretch and relaxation rates of (h sigma) for the inertial family.

    Returns (ds_hh, ds_hz, ds_zz, relax_shh, relax_szz) where the relax pieces
    are the UCM-valued relaxation terms (FENE-P rescales them afterwards).
    """
    model = params.model
    h = state.h
    de, th, re, k = params.de, params.theta_ve, params.re, params.k_friction
    gu = grad_velocity(u, grid)
    divu = gu[..., 0, 0] + gu[..., 1, 1]
    S = sym_to_mat(conf.s_hh)

    # in-plane stretch (all models)
    stretch_hh = np.matmul(gu, S) + np.matmul(S, np.swapaxes(gu, -1, -2))
    ds_hh = h[..., None] * mat_to_sym(stretch_hh)
    ds_zz = -2.0 * h * conf.s_zz * divu
    ds_hz = h[..., None] * (
        np.einsum("...ij,...j->...i", gu, conf.s_hz) - divu[..., None] * conf.s_hz
    )

    slices = model in (Model.VISCOELASTIC_SLICES, Model.VISCOELASTIC_SLICES_HW)
    G = -(th / de) * conf.s_hz
    if k > 0.0:  # guards inf*0 at infinite Reynolds with no friction
        G = G + 0.5 * re * k * u
    if not slices:
        # shear coupling from the depth-averaged corrected shear G/(1-theta)
        outer = conf.s_hz[..., :, None] * G[..., None, :]
        coupling = mat_to_sym(outer + np.swapaxes(outer, -1, -2))
        ds_hh += (h / (1.0 - th))[..., None] * coupling
        ds_hz += (h * conf.s_zz / (1.0 - th))[..., None] * G
    elif model is Model.VISCOELASTIC_SLICES:
        # post-processed shear: reconstructed-u_z source plus the G coupling
        udotgb = np.sum(u * topo.grad_b, axis=-1)
        M = (
            gradient(udotgb, grid)
            + divu[..., None] * topo.grad_b
            - 0.5 * h[..., None] * gradient(divu, grid)
        )
        ds_hz += h[..., None] * (
            params.de * np.einsum("...ij,...j->...i", S, M)
        ) + (h * conf.s_zz / (1.0 - th))[..., None] * G

    relax_shh = np.zeros_like(ds_hh)
    relax_szz = np.zeros_like(ds_zz)
    hw = model in (Model.VISCOELASTIC_INERTIAL_HW, Model.VISCOELASTIC_SLICES_HW)
    if include_relax and not hw:
        eye = np.zeros_like(conf.s_hh)
        eye[..., 0] = 1.0
        eye[..., 2] = 1.0
        relax_shh = h[..., None] * (eye - conf.s_hh) / de
        relax_szz = h * (1.0 - conf.s_zz) / de
        ds_hh += relax_shh
        ds_zz += relax_szz
        ds_hz += -h[..., None] * conf.s_hz / de
    return ds_hh, ds_hz, ds_zz, relax_shh, relax_szz


def rhs_viscoelastic_inertial(state, conf, topo, forcing, params, grid, include_stiff=True):
    """Viscoelastic shallow-water family (inertial, HW, slices, slices-HW)."""
    model = params.model
    th = params.theta_ve
    u = state.velocity(DRYTOL)
    h = state.h
    dh_dt, dq_dt = _central_mass_momentum(state, u, grid)
    dq_dt += _pressure_tension_source(state, topo, forcing, params, grid)
    if np.isfinite(params.re):
        dq_dt += _viscous_term(h, u, grid, 2.0 * (1.0 - th) / params.re)

    factor = fenep_factor(conf, params) if params.closure is Closure.FENEP else 1.0
    dev = conf.s_hh.copy()
    dev[..., 0] -= conf.s_zz
    dev[..., 2] -= conf.s_zz
    elastic = (th / (params.re * params.de)) * h[..., None] * dev
    dq_dt += div_tensor(sym_to_mat(np.asarray(factor)[..., None] * elastic), grid)

    slices = model in (Model.VISCOELASTIC_SLICES, Model.VISCOELASTIC_SLICES_HW)
    if include_stiff:
        dq_dt += viscoelastic_friction(
            state, conf, u, params, b=topo.b, include_slip_correction=not slices
        )

    adv_hh, adv_hz, adv_zz = _conformation_transport(state, conf, u, grid)
    ds_hh, ds_hz, ds_zz, relax_shh, relax_szz = conformation_sources(
        state, conf, u, topo, params, grid, include_relax=include_stiff
    )
    if params.closure is Closure.FENEP and include_stiff:
        f1 = np.asarray(factor) - 1.0
        ds_hh += f1[..., None] * relax_shh
        ds_zz += f1 * relax_szz
    return ModelRHS(
        dh_dt=dh_dt,
        dq_dt=dq_dt,
        ds_hh=adv_hh + ds_hh,
        ds_hz=adv_hz + ds_hz,
        ds_zz=adv_zz + ds_zz,
        relax_shh=relax_shh,
        relax_szz=relax_szz,
        elastic_tensor=elastic,
        grid=grid,
    )


def apply_fenep_factor(rhs: ModelRHS, conf: ConformationState, params: RheologyParams) -> ModelRHS:
    """Rescale a UCM right-hand side into its FENE-P counterpart.

    Multiplies the relaxation sources of the sigma_HH / sigma_zz equations and
    the elastic stress divergence in the momentum equation by
    1/(1 - tr sigma / b_fene); the identity at b_fene = infinity.
    """
    if params.model not in (
        Model.VISCOELASTIC_INERTIAL,
        Model.VISCOELASTIC_SLICES,
        Model.VISCOELASTIC_SLICES_HW,
    ):
        raise ValueError(f"FENE-P closure is not derived for model {params.model.value}")
    factor = fenep_factor(conf, params)
    if not np.isfinite(params.b_fene):
        return rhs
    f1 = factor - 1.0
    dq_dt = rhs.dq_dt + div_tensor(sym_to_mat(f1[..., None] * rhs.elastic_tensor), rhs.grid)
    return ModelRHS(
        dh_dt=rhs.dh_dt,
        dq_dt=dq_dt,
        ds_hh=rhs.ds_hh + f1[..., None] * rhs.relax_shh,
        ds_hz=rhs.ds_hz,
        ds_zz=rhs.ds_zz + f1 * rhs.relax_szz,
        relax_shh=rhs.relax_shh,
        relax_szz=rhs.relax_szz,
        elastic_tensor=rhs.elastic_tensor,
        grid=rhs.grid,
    )


def inertial_sources(state, conf, topo, forcing, params, grid):
    """Non-stiff, non-hyperbolic sources for the finite-volume stepper.

    Everything in the inertial right-hand sides except the convective
    divergence, the pressure/topography term f_z h grad(b+h) (both handled by
    the well-balanced flux scheme), friction and relaxation (handled by the
    exact exponential split).  Returns (dq, ds_hh, ds_hz, ds_zz) with the
    conformation entries None for non-viscoelastic models.
    """
    model = params.model
    h = state.h
    u = state.velocity(DRYTOL)
    dq = h[..., None] * np.broadcast_to(forcing.f_H, h.shape + (2,))
    if params.gamma > 0:
        eta = topo.b + h
        dq = dq + params.gamma * h[..., None] * gradient(laplacian(eta, grid), grid)

    if model is Model.NEWTONIAN_INERTIAL:
        if np.isfinite(params.re):
            dq = dq + _viscous_term(h, u, grid, 2.0 / params.re)
        return dq, None, None, None

    if model is Model.POWERLAW_INERTIAL:
        a, unorm = _powerlaw_cell_data(state, u, params, grid)
        _check_powerlaw_admissibility(unorm, a, params)
        if np.isfinite(params.re):
            coef = (
                powerlaw_viscous_coefficient(h, unorm, a, params)
                if params.k_friction > 0.0
                else h
            )
            dq = dq + _viscous_term(coef, u, grid, 2.0 / params.re)
        return dq, None, None, None

    th = params.theta_ve
    if np.isfinite(params.re):
        dq = dq + _viscous_term(h, u, grid, 2.0 * (1.0 - th) / params.re)
    factor = fenep_factor(conf, params) if params.closure is Closure.FENEP else 1.0
    dev = conf.s_hh.copy()
    dev[..., 0] -= conf.s_zz
    dev[..., 2] -= conf.s_zz
    elastic = (th / (params.re * params.de)) * h[..., None] * dev
    dq = dq + div_tensor(sym_to_mat(np.asarray(factor)[..., None] * elastic), grid)
    ds_hh, ds_hz, ds_zz, _, _ = conformation_sources(
        state, conf, u, topo, params, grid, include_relax=False
    )
    return dq, ds_hh, ds_hz, ds_zz


# ---------------------------------------------------------------------------
# lubrication-type (viscous-regime) models: conservative face-flux form


def _face_forcing(state, topo, forcing, params, grid, theta_small, axis):
    """a+ at the faces normal to ``axis``, with two-point surface gradients."""
    h, b = state.h, topo.b
    eta = b + h
    d = grid.dx if axis == 0 else grid.dy
    eta_p = pad(eta, grid, 1)
    if axis == 0:
        deta = (eta_p[1:, 1:-1] - eta_p[:-1, 1:-1]) / d  # (nx+1, ny)
    else:
        deta = (eta_p[1:-1, 1:] - eta_p[1:-1, :-1]) / d  # (nx, ny+1)
    a = np.full_like(deta, forcing.f_H[axis])
    if theta_small:
        a += forcing.f_z * deta
        if params.gamma > 0:
            lap = pad(laplacian(eta, grid), grid, 1)
            if axis == 0:
                dlap = (lap[1:, 1:-1] - lap[:-1, 1:-1]) / d
            else:
                dlap = (lap[1:-1, 1:] - lap[1:-1, :-1]) / d
            a += params.gamma * dlap
    return a


def _face_mean(f, grid, axis):
    fp = pad(f, grid, 1)
    if axis == 0:
        return 0.5 * (fp[1:, 1:-1] + fp[:-1, 1:-1])
    return 0.5 * (fp[1:-1, 1:] + fp[1:-1, :-1])


def lubrication_face_flux(state, conf, topo, forcing, params, grid, theta_small, axis):
    """Physical depth-integrated flux through the faces normal to ``axis``."""
    hf = np.maximum(_face_mean(state.h, grid, axis), 0.0)
    a = _face_forcing(state, topo, forcing, params, grid, theta_small, axis)
    model = params.model
    if model is Model.NEWTONIAN_VISCOUS:
        mob = params.re * hf**3 / 3.0 + hf**2 / params.k_friction
        return a * mob
    if model is Model.POWERLAW_VISCOUS:
        n = params.n_power
        C = 2.0 ** (0.5 * (n - 1.0)) * params.re * np.abs(a)
        shear = np.power(C, 1.0 / n) * (n / (2.0 * n + 1.0)) * np.power(hf, (2.0 * n + 1.0) / n)
        return a * hf**2 / params.k_friction + np.sign(a) * shear
    if model is Model.VISCOELASTIC_VISCOUS:
        shzf = _face_mean(conf.s_hz[..., axis], grid, axis)
        c = 1.0 / (1.0 - params.theta_ve)
        return c * (params.re * hf**3 / 6.0 * a - (params.theta_ve / params.de) * shzf * hf**2 / 2.0)
    raise ValueError(f"not a lubrication model: {model}")


def _lubrication_dh_dt(state, conf, topo, forcing, params, grid, theta_small):
    if params.k_friction == 0.0 and params.model is not Model.VISCOELASTIC_VISCOUS:
        raise ClosureError("viscous-regime models require k_friction > 0")
    qx = lubrication_face_flux(state, conf, topo, forcing, params, grid, theta_small, 0)
    qy = lubrication_face_flux(state, conf, topo, forcing, params, grid, theta_small, 1)
    return -(qx[1:, :] - qx[:-1, :]) / grid.dx - (qy[:, 1:] - qy[:, :-1]) / grid.dy


def rhs_newtonian_viscous(state, topo, forcing, params, grid, theta_small=False):
    """Lubrication equation for h with slip mobility Re h^3/3 + h^2/k."""
    dh = _lubrication_dh_dt(state, None, topo, forcing, params, grid, theta_small)
    return ModelRHS(dh_dt=dh, grid=grid)


def rhs_powerlaw_viscous(state, topo, forcing, params, grid, theta_small=False):
    """Power-law lubrication equation (discharge from the shear-profile ODE)."""
    dh = _lubrication_dh_dt(state, None, topo, forcing, params, grid, theta_small)
    return ModelRHS(dh_dt=dh, grid=grid)


def rhs_viscoelastic_viscous(state, conf, forcing, params, grid, topo=None, theta_small=False,
                             include_stiff=True):
    """Viscoelastic lubrication system: h flux plus local conformation ODEs."""
    if topo is None:
        raise ValueError("rhs_viscoelastic_viscous needs the topography for its flux")
    dh = _lubrication_dh_dt(state, conf, topo, forcing, params, grid, theta_small)
    h, de, th, re = state.h, params.de, params.theta_ve, params.re
    a = effective_forcing(state, topo, forcing, params, grid, theta_small)
    W = 0.5 * re * a - (th / de) * conf.s_hz
    ds_hz = (h * conf.s_zz / (1.0 - th))[..., None] * W
    ds_zz = np.zeros_like(h)
    outer = conf.s_hz[..., :, None] * W[..., None, :]
    ds_hh = (h / (1.0 - th))[..., None] * mat_to_sym(outer + np.swapaxes(outer, -1, -2))
    if include_stiff:
        eye = np.zeros_like(conf.s_hh)
        eye[..., 0] = 1.0
        eye[..., 2] = 1.0
        ds_hh += h[..., None] * (eye - conf.s_hh) / de
        ds_hz += -h[..., None] * conf.s_hz / de
        ds_zz += h * (1.0 - conf.s_zz) / de
    return ModelRHS(dh_dt=dh, ds_hh=ds_hh, ds_hz=ds_hz, ds_zz=ds_zz, grid=grid)


# ---------------------------------------------------------------------------
# dispatch


def rhs(state, conf, topo, forcing, params, grid, theta_small=False, include_stiff=True):
    """Assemble the model right-hand side for the active model selector."""
    model = params.model
    if model is Model.NEWTONIAN_INERTIAL:
        return rhs_newtonian_inertial(state, topo, forcing, params, grid, include_stiff)
    if model is Model.POWERLAW_INERTIAL:
        return rhs_powerlaw_inertial(state, topo, forcing, params, grid, include_stiff)
    if model in (
        Model.VISCOELASTIC_INERTIAL,
        Model.VISCOELASTIC_INERTIAL_HW,
        Model.VISCOELASTIC_SLICES,
        Model.VISCOELASTIC_SLICES_HW,
    ):
        return rhs_viscoelastic_inertial(state, conf, topo, forcing, params, grid, include_stiff)
    if model is Model.NEWTONIAN_VISCOUS:
        return rhs_newtonian_viscous(state, topo, forcing, params, grid, theta_small)
    if model is Model.POWERLAW_VISCOUS:
        return rhs_powerlaw_viscous(state, topo, forcing, params, grid, theta_small)
    if model is Model.VISCOELASTIC_VISCOUS:
        return rhs_viscoelastic_viscous(
            state, conf, forcing, params, grid, topo=topo, theta_small=theta_small,
            include_stiff=include_stiff,
        )
    raise ValueError(f"unknown model {model}")
