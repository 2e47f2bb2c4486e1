"""Approximate 3D fields (velocity, pressure, stress) from a reduced solution.

Every reduced model carries a depth-averaged state; this module extrudes it
back into the layer: horizontal velocity profiles from the model-specific
closures, vertical velocity from the divergence constraint, pressure from the
hydrostatic/tension balance, and deviatoric stresses by differentiating the
reconstructed velocity.  Layers are Chebyshev-distributed per column
(clustered near bed and surface, where boundary-condition residuals are
evaluated).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import closures, models
from .grid import Grid2D, Topography, Forcing, ddx, ddy, divergence, gradient, laplacian
from .state import Closure, ConformationState, Model, RheologyParams, ShallowState

DRYTOL = 1e-14
DEFAULT_NZ = 16


@dataclass
class Extrusion3D:
    """Per-column z samples and 3D fields; stress components ordered
    (Txx, Txy, Tyy, Txz, Tyz, Tzz)."""

    nz: int
    z: np.ndarray  # (nx, ny, nz), strictly increasing along the last axis
    uH3: np.ndarray  # (nx, ny, nz, 2)
    uz3: np.ndarray  # (nx, ny, nz)
    p3: np.ndarray  # (nx, ny, nz)
    stress3: np.ndarray  # (nx, ny, nz, 6)

    def __post_init__(self):
        if self.nz < 4:
            raise ValueError(f"need at least 4 layers, got {self.nz}")
        if np.any(np.diff(self.z, axis=-1) <= 0):
            raise ValueError("z samples must be strictly increasing per column")


def chebyshev_layers(topo: Topography, state: ShallowState, nz: int = DEFAULT_NZ):
    """Chebyshev-spaced z samples spanning [b, b+h] per column."""
    j = np.arange(nz)
    zeta = 0.5 * (1.0 - np.cos(math.pi * j / (nz - 1)))
    h_eff = np.maximum(state.h, DRYTOL)
    return topo.b[..., None] + h_eff[..., None] * zeta


def reconstruct_uz(state: ShallowState, topo: Topography, grid: Grid2D, z):
    """Leading-order vertical velocity u_z = u0 . grad b + (b - z) div u0."""
    u0 = state.velocity(DRYTOL)
    divu = divergence(u0, grid)
    advect = np.sum(u0 * topo.grad_b, axis=-1)
    return advect[..., None] + (topo.b[..., None] - z) * divu[..., None]


def reconstruct_pressure(state, topo, forcing, params, grid, z):
    """Hydrostatic/tension pressure column; p = 0 at the free surface.

    The Newtonian inertial variant carries the viscous normal-stress part
    -(2/Re) div u0; other models expose the generic p - T_zz balance.
    """
    eta = topo.b + state.h
    p = forcing.f_z * (z - eta[..., None])
    if params.gamma > 0:
        p = p - params.gamma * laplacian(eta, grid)[..., None]
    if params.model is Model.NEWTONIAN_INERTIAL and np.isfinite(params.re):
        u0 = state.velocity(DRYTOL)
        p = p - (2.0 / params.re) * divergence(u0, grid)[..., None]
    return p


def powerlaw_correction(z, b, h, u0, a, params, npts=24):
    """Zero-depth-mean power-law velocity correction at samples ``z``.

    The componentwise shear is s_c(z') = sign(u0_c) *
    phi_a^{-1}(Re k |u0_c| (b+h-z')/h); substituting x = phi_a^{-1} turns its
    antiderivative into the closed form A(x) = x phi(x) - (2/(n+1))
    (x^2/2+a)^{(n+1)/2}, and the depth mean into a single smooth quadrature
    int_0^{x_bed} phi(x) x phi'(x) dx.  Reduces to the parabolic correction
    at n = 1.
    """
    re, k, n = params.re, params.k_friction, params.n_power
    hsafe = np.where(h > DRYTOL, h, 1.0)
    depth = (b + h)[..., None] - z  # distance below the surface per sample
    out = np.zeros(z.shape + (2,))

    def antider(x, av):
        return x * closures.phi(x, av, n) - (2.0 / (n + 1.0)) * np.power(
            0.5 * x * x + av, 0.5 * (n + 1.0)
        )

    for c in range(2):
        absu = np.abs(u0[..., c])
        moving = absu > 1e-14
        cc = np.where(moving, re * k * absu / hsafe, 1.0)
        x_bed = closures.invert_phi(cc * h, a, n)
        x_at = closures.invert_phi(
            np.maximum(cc[..., None] * depth, 0.0),
            np.broadcast_to(a[..., None], depth.shape),
            n,
        )
        w = (antider(x_bed, a)[..., None] - antider(x_at, a[..., None])) / cc[..., None]

        # depth mean of w: (1/(h C^2)) int_0^{x_bed} phi(x) x phi'(x) dx,
        # rescaled to t in [0,1]; adaptive, since small a puts a complex
        # singularity of phi close to the real axis
        def fmean(t):
            xs = x_bed * t.reshape((-1,) + (1,) * x_bed.ndim)
            return closures.phi(xs, a, n) * xs * closures._phi_prime(xs, a, n) * x_bed

        mean_w = closures.adaptive_quad(fmean, 0.0, 1.0, tol=1e-13) / (cc * cc * hsafe)
        out[..., c] = np.where(
            moving[..., None], np.sign(u0[..., c])[..., None] * (w - mean_w[..., None]), 0.0
        )
    return out


def profile_function(state, conf, topo, forcing, params, grid, theta_small=False):
    """Callable z -> u_H(z) for the active model; z broadcast over (nx,ny,...).

    Inertial models return u0 plus the model's zero-depth-mean correction;
    viscous-regime models return the full closure profile driven by the
    effective in-plane forcing.
    """
    model = params.model
    h = state.h
    b = topo.b
    u0 = state.velocity(DRYTOL)

    if model is Model.NEWTONIAN_INERTIAL:
        def f(z):
            if params.k_friction == 0.0 or not np.isfinite(params.re):
                return np.broadcast_to(u0[..., None, :], z.shape + (2,)).copy()
            return u0[..., None, :] + closures.parabolic_correction(
                z, b[..., None], h[..., None], params.re,
                params.k_friction, u0[..., None, :],
            )
        return f

    if model is Model.POWERLAW_INERTIAL:
        a, unorm = models._powerlaw_cell_data(state, u0, params, grid)

        def f(z):
            if params.k_friction == 0.0 or not np.isfinite(params.re):
                return np.broadcast_to(u0[..., None, :], z.shape + (2,)).copy()
            return u0[..., None, :] + powerlaw_correction(z, b, h, u0, a, params)
        return f

    if model in (
        Model.VISCOELASTIC_INERTIAL,
        Model.VISCOELASTIC_INERTIAL_HW,
        Model.VISCOELASTIC_SLICES,
        Model.VISCOELASTIC_SLICES_HW,
    ):
        def f(z):
            k = params.k_friction if np.isfinite(params.re) else 0.0
            return u0[..., None, :] + closures.viscoelastic_correction(
                z, b[..., None], h[..., None],
                params.re if np.isfinite(params.re) else 1.0,
                k, params.de, params.theta_ve,
                u0[..., None, :], conf.s_hz[..., None, :],
            )
        return f

    a_plus = models.effective_forcing(state, topo, forcing, params, grid, theta_small)

    if model is Model.NEWTONIAN_VISCOUS:
        def f(z):
            return closures.newtonian_viscous_profile(
                z, b[..., None], h[..., None],
                params.re, params.k_friction, -a_plus[..., None, :],
            )
        return f

    if model is Model.POWERLAW_VISCOUS:
        def f(z):
            return closures.powerlaw_viscous_profile(
                z, b[..., None], h[..., None],
                params.re, params.k_friction, params.n_power, -a_plus[..., None, :],
            )
        return f

    if model is Model.VISCOELASTIC_VISCOUS:
        def f(z):
            return closures.viscoelastic_viscous_velocity(
                z, b[..., None], h[..., None],
                params.re, params.de, params.theta_ve,
                a_plus[..., None, :], conf.s_hz[..., None, :],
            )
        return f

    raise ValueError(f"no profile reconstruction for model {model}")


def reconstruct_profile(state, conf, topo, forcing, params, grid, z, theta_small=False):
    """Horizontal velocity profile sampled on the layer array ``z``."""
    return profile_function(state, conf, topo, forcing, params, grid, theta_small)(z)


def shear_function(state, conf, topo, forcing, params, grid, theta_small=False):
    """Callable z -> dz u_H(z): the analytic z-derivative of the profile."""
    model = params.model
    h = state.h
    b = topo.b
    u0 = state.velocity(DRYTOL)
    hs = np.where(h > DRYTOL, h, 1.0)

    if model is Model.NEWTONIAN_INERTIAL:
        def f(z):
            if params.k_friction == 0.0 or not np.isfinite(params.re):
                return np.zeros(z.shape + (2,))
            shape_fn = params.re * params.k_friction * ((b + h)[..., None] - z) / hs[..., None]
            return shape_fn[..., None] * u0[..., None, :]
        return f

    if model is Model.POWERLAW_INERTIAL:
        a, _ = models._powerlaw_cell_data(state, u0, params, grid)

        def f(z):
            if params.k_friction == 0.0 or not np.isfinite(params.re):
                return np.zeros(z.shape + (2,))
            depth = (b + h)[..., None] - z
            out = np.empty(z.shape + (2,))
            for c in range(2):
                y = params.re * params.k_friction * np.abs(u0[..., c])[..., None] * depth / hs[..., None]
                out[..., c] = np.sign(u0[..., c])[..., None] * closures.invert_phi(
                    np.maximum(y, 0.0), np.broadcast_to(a[..., None], y.shape), params.n_power
                )
            return out
        return f

    if model in (
        Model.VISCOELASTIC_INERTIAL,
        Model.VISCOELASTIC_INERTIAL_HW,
        Model.VISCOELASTIC_SLICES,
        Model.VISCOELASTIC_SLICES_HW,
    ):
        def f(z):
            k = params.k_friction if np.isfinite(params.re) else 0.0
            return closures.viscoelastic_correction_dz(
                z, b[..., None], h[..., None],
                params.re if np.isfinite(params.re) else 1.0,
                k, params.de, params.theta_ve,
                u0[..., None, :], conf.s_hz[..., None, :],
            )
        return f

    a_plus = models.effective_forcing(state, topo, forcing, params, grid, theta_small)

    if model is Model.NEWTONIAN_VISCOUS:
        def f(z):
            shape_fn = params.re * (z - (b + h)[..., None])
            return shape_fn[..., None] * (-a_plus[..., None, :])
        return f

    if model is Model.POWERLAW_VISCOUS:
        def f(z):
            return closures.powerlaw_viscous_shear(
                z, b[..., None], h[..., None], params.re, params.n_power,
                -a_plus[..., None, :],
            )
        return f

    if model is Model.VISCOELASTIC_VISCOUS:
        def f(z):
            c = 1.0 / (1.0 - params.theta_ve)
            visc = params.re * (z - (b + h)[..., None])
            return c * (
                visc[..., None] * a_plus[..., None, :]
                - (params.theta_ve / params.de) * np.ones_like(z)[..., None] * conf.s_hz[..., None, :]
            )
        return f

    raise ValueError(f"no shear reconstruction for model {model}")


def dz_nonuniform(f, z):
    """Second-order z-derivative along the last axis on a nonuniform grid.

    ``z`` broadcasts against ``f`` up to one trailing component axis.
    """
    comp = f.ndim == z.ndim + 1
    zz = z[..., None] if comp else z
    out = np.empty_like(f)
    d1 = zz[..., 1:-1, :] - zz[..., :-2, :] if comp else zz[..., 1:-1] - zz[..., :-2]
    d2 = zz[..., 2:, :] - zz[..., 1:-1, :] if comp else zz[..., 2:] - zz[..., 1:-1]
    fm, fc, fp = (
        (f[..., :-2, :], f[..., 1:-1, :], f[..., 2:, :])
        if comp
        else (f[..., :-2], f[..., 1:-1], f[..., 2:])
    )
    mid = (d1**2 * fp - d2**2 * fm + (d2**2 - d1**2) * fc) / (d1 * d2 * (d1 + d2))
    if comp:
        out[..., 1:-1, :] = mid
        # one-sided second-order ends (quadratic through three samples)
        e1 = zz[..., 1, :] - zz[..., 0, :]
        e2 = zz[..., 2, :] - zz[..., 0, :]
        out[..., 0, :] = (
            -(e1 + e2) / (e1 * e2) * f[..., 0, :]
            + e2 / (e1 * (e2 - e1)) * f[..., 1, :]
            - e1 / (e2 * (e2 - e1)) * f[..., 2, :]
        )
        g1 = zz[..., -2, :] - zz[..., -1, :]
        g2 = zz[..., -3, :] - zz[..., -1, :]
        out[..., -1, :] = (
            -(g1 + g2) / (g1 * g2) * f[..., -1, :]
            + g2 / (g1 * (g2 - g1)) * f[..., -2, :]
            - g1 / (g2 * (g2 - g1)) * f[..., -3, :]
        )
    else:
        out[..., 1:-1] = mid
        e1 = zz[..., 1] - zz[..., 0]
        e2 = zz[..., 2] - zz[..., 0]
        out[..., 0] = (
            -(e1 + e2) / (e1 * e2) * f[..., 0]
            + e2 / (e1 * (e2 - e1)) * f[..., 1]
            - e1 / (e2 * (e2 - e1)) * f[..., 2]
        )
        g1 = zz[..., -2] - zz[..., -1]
        g2 = zz[..., -3] - zz[..., -1]
        out[..., -1] = (
            -(g1 + g2) / (g1 * g2) * f[..., -1]
            + g2 / (g1 * (g2 - g1)) * f[..., -2]
            - g1 / (g2 * (g2 - g1)) * f[..., -3]
        )
    return out


def reconstruct_stress(uH3, uz3, conf, params, grid, z):
    """Deviatoric stress from derivatives of the reconstructed velocity.

    Newtonian part T = c (grad u + grad u^T) with the model's solvent
    viscosity; the viscoelastic part (theta/(Re De))(sigma - I) is added
    blockwise with the z-independent conformation representative.
    """
    re = params.re
    if params.model in (
        Model.VISCOELASTIC_INERTIAL,
        Model.VISCOELASTIC_INERTIAL_HW,
        Model.VISCOELASTIC_SLICES,
        Model.VISCOELASTIC_SLICES_HW,
        Model.VISCOELASTIC_VISCOUS,
    ):
        c = (1.0 - params.theta_ve) / re if np.isfinite(re) else 0.0
        elastic = params.theta_ve / (re * params.de) if np.isfinite(re) else 0.0
    else:
        c = 1.0 / re if np.isfinite(re) else 0.0
        elastic = 0.0

    dux_dx = ddx(uH3[..., 0], grid)
    dux_dy = ddy(uH3[..., 0], grid)
    duy_dx = ddx(uH3[..., 1], grid)
    duy_dy = ddy(uH3[..., 1], grid)
    duz_dx = ddx(uz3, grid)
    duz_dy = ddy(uz3, grid)
    dux_dz = dz_nonuniform(uH3[..., 0], z)
    duy_dz = dz_nonuniform(uH3[..., 1], z)
    duz_dz = dz_nonuniform(uz3, z)

    dxx = 2.0 * dux_dx
    dxy = dux_dy + duy_dx
    dyy = 2.0 * duy_dy
    dxz = dux_dz + duz_dx
    dyz = duy_dz + duz_dy
    dzz = 2.0 * duz_dz

    if params.model in (Model.POWERLAW_INERTIAL, Model.POWERLAW_VISCOUS):
        norm2 = dxx**2 + dyy**2 + dzz**2 + 2.0 * (dxy**2 + dxz**2 + dyz**2)
        c = c * np.power(np.maximum(norm2, 1e-300), 0.5 * (params.n_power - 1.0))

    t = np.stack([c * dxx, c * dxy, c * dyy, c * dxz, c * dyz, c * dzz], axis=-1)
    if elastic and conf is not None:
        factor = 1.0
        if params.closure is Closure.FENEP and np.isfinite(params.b_fene):
            factor = 1.0 / (1.0 - conf.trace() / params.b_fene)
        # blockwise elastic addition with the z-independent sigma
        sxx = factor * conf.s_hh[..., 0] - 1.0
        sxy = factor * conf.s_hh[..., 1]
        syy = factor * conf.s_hh[..., 2] - 1.0
        sxz = factor * conf.s_hz[..., 0]
        syz = factor * conf.s_hz[..., 1]
        szz = factor * conf.s_zz - 1.0
        for idx, comp in enumerate((sxx, sxy, syy, sxz, syz, szz)):
            t[..., idx] += elastic * comp[..., None]
    return t


def extrude(state, conf, topo, forcing, params, grid, nz=DEFAULT_NZ, theta_small=False):
    """Full 3D reconstruction of a reduced state."""
    z = chebyshev_layers(topo, state, nz)
    uH3 = reconstruct_profile(state, conf, topo, forcing, params, grid, z, theta_small)
    uz3 = reconstruct_uz(state, topo, grid, z)
    p3 = reconstruct_pressure(state, topo, forcing, params, grid, z)
    stress3 = reconstruct_stress(uH3, uz3, conf, params, grid, z)
    return Extrusion3D(nz=nz, z=z, uH3=uH3, uz3=uz3, p3=p3, stress3=stress3)


_CSV_HEADER = "x,y,z,ux,uy,uz,p,Txx,Txy,Tyy,Txz,Tyz,Tzz"


def write_extrusion(path, grid: Grid2D, ext: Extrusion3D) -> None:
    """3D CSV, row-major over cells then layers, 17 significant digits."""
    X, Y = grid.cell_centers()
    nxy = grid.nx * grid.ny
    nz = ext.nz
    rows = np.empty((nxy * nz, 13))
    rows[:, 0] = np.repeat(X.reshape(-1), nz)
    rows[:, 1] = np.repeat(Y.reshape(-1), nz)
    rows[:, 2] = ext.z.reshape(-1)
    rows[:, 3] = ext.uH3[..., 0].reshape(-1)
    rows[:, 4] = ext.uH3[..., 1].reshape(-1)
    rows[:, 5] = ext.uz3.reshape(-1)
    rows[:, 6] = ext.p3.reshape(-1)
    for cidx in range(6):
        rows[:, 7 + cidx] = ext.stress3[..., cidx].reshape(-1)
    with open(path, "w") as fh:
        fh.write(_CSV_HEADER + "\n")
        for row in rows:
            fh.write(",".join("%.17g" % v for v in row) + "\n")
