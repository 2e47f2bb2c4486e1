"""Time integration: well-balanced finite volumes plus exponential splitting.

Inertial (shallow-water-type) models advance with SSP-RK2 over an HLL flux
with hydrostatic topography reconstruction (well balanced for lake-at-rest,
positivity-preserving with minmod-limited edges); depth-averaged conformation
components ride along as upwinded tracers of the mass flux.  Stiff friction
and conformation relaxation are split off and integrated exactly with
exponential updates, so arbitrarily large k/h or 1/De cost nothing in dt.

Lubrication-type models (pure h equations with local conformation ODEs) use
explicit RK2 on the conservative face-flux form with a numerically estimated
nonlinear-diffusion dt limit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import models
from .grid import Grid2D, PERIODIC, Topography, Forcing
from .state import (
    Closure,
    ConformationState,
    Model,
    RheologyParams,
    ShallowState,
    VISCOUS_MODELS,
    min_conformation_pivot,
    validate,
    write_snapshot,
)

DRYTOL = 1e-12


class SolverAbort(RuntimeError):
    """Raised when a step produces an invalid state (dt violation, SPD loss)."""


@dataclass(frozen=True)
class StepControl:
    """Time-step controls: CFL number, caps and safety factors."""

    cfl: float = 0.45
    dt_max: float = math.inf
    t_end: float = 0.0
    diffusion_safety: float = 0.45
    order: int = 2  # spatial reconstruction order of the FV scheme (1 or 2)

    def __post_init__(self):
        if not (0.0 < self.cfl <= 1.0):
            raise ValueError(f"need 0 < cfl <= 1, got {self.cfl}")
        if self.order not in (1, 2):
            raise ValueError(f"need order in (1, 2), got {self.order}")


# ---------------------------------------------------------------------------
# time-step estimation


def _lubrication_mobility(h, params, a_norm):
    """(mobility M, dM/dh) for flux magnitude q = |a| M(h) at given |a|."""
    re, k, n, th = params.re, params.k_friction, params.n_power, params.theta_ve
    if params.model is Model.NEWTONIAN_VISCOUS:
        return re * h**3 / 3.0 + h**2 / k, re * h**2 + 2.0 * h / k
    if params.model is Model.POWERLAW_VISCOUS:
        c = (2.0 ** (0.5 * (n - 1.0)) * re * max(a_norm, 1e-300)) ** (1.0 / n)
        m = h**2 / k + c * (n / (2.0 * n + 1.0)) * h ** ((2.0 * n + 1.0) / n) / max(
            a_norm, 1e-300
        )
        dm = 2.0 * h / k + c * h ** ((n + 1.0) / n) / max(a_norm, 1e-300)
        return m, dm
    # viscoelastic viscous
    m = re * h**3 / (6.0 * (1.0 - th))
    return m, re * h**2 / (2.0 * (1.0 - th))


def _stable_dt_lubrication(state, topo, forcing, params, grid, control, theta_small):
    hmax = float(state.h.max())
    if hmax <= DRYTOL:
        return control.dt_max
    a = models.effective_forcing(state, topo, forcing, params, grid, theta_small)
    amax = float(np.sqrt(np.sum(a * a, axis=-1)).max())
    mob, dmob = _lubrication_mobility(hmax, params, max(amax, 1e-300))
    dmin = min(grid.dx, grid.dy)
    dt = control.dt_max
    speed = amax * dmob
    if speed > 0:
        dt = min(dt, control.cfl * dmin / speed)
    if theta_small:
        diff = abs(forcing.f_z) * mob
        if diff > 0:
            dt = min(dt, control.diffusion_safety / (2.0 * diff * (1.0 / grid.dx**2 + 1.0 / grid.dy**2)))
        if params.gamma > 0:
            dt = min(dt, control.diffusion_safety * dmin**4 / (8.0 * params.gamma * mob))
    return dt


def stable_dt(state, params, grid, control, forcing, topo=None, theta_small=False):
    """Largest safe explicit dt: hyperbolic, diffusion and tension limits."""
    if params.model in VISCOUS_MODELS:
        return _stable_dt_lubrication(state, topo, forcing, params, grid, control, theta_small)
    gp = -forcing.f_z
    u = state.velocity(DRYTOL)
    c = np.sqrt(gp * np.maximum(state.h, 0.0))
    wx = float((np.abs(u[..., 0]) + c).max())
    wy = float((np.abs(u[..., 1]) + c).max())
    dt = control.dt_max
    if wx > 0:
        dt = min(dt, control.cfl * grid.dx / wx)
    if wy > 0:
        dt = min(dt, control.cfl * grid.dy / wy)
    dmin = min(grid.dx, grid.dy)
    if np.isfinite(params.re):
        dt = min(dt, control.diffusion_safety * dmin**2 * params.re / 4.0)
    hmax = float(state.h.max())
    if params.gamma > 0 and hmax > 0:
        dt = min(dt, control.diffusion_safety * dmin**4 / (8.0 * params.gamma * hmax))
    return dt


# ---------------------------------------------------------------------------
# HLL flux sweep with hydrostatic (well-balanced) reconstruction


def _minmod(a, b):
    return np.where(a * b > 0.0, np.where(np.abs(a) < np.abs(b), a, b), 0.0)


def _pad_axis0(f, bc, width):
    w = width
    out = np.empty((f.shape[0] + 2 * w,) + f.shape[1:], dtype=f.dtype)
    out[w:-w] = f
    if bc == PERIODIC:
        out[:w] = f[-w:]
        out[-w:] = f[:w]
    else:
        out[:w] = f[:1]
        out[-w:] = f[-1:]
    return out


def _edges(f, order):
    """Minmod-limited left/right edge values of padded (n+4, ...) cell data.

    Returns (fm, fp): values at the cell's lower/upper edge for cells 1..n+2.
    """
    if order == 1:
        c = f[1:-1]
        return c, c
    df = np.diff(f, axis=0)
    s = _minmod(df[:-1], df[1:])
    c = f[1:-1]
    return c - 0.5 * s, c + 0.5 * s


def _fv_sweep_x(h, un, ut, b, sig, dx, bc, gp, order):
    """One-axis flux divergence for (h, q_n, q_t, h*sig) along the leading axis.

    Hydrostatic reconstruction: edge beds are raised to the face maximum, the
    pressure imbalance goes into per-cell corrections plus a centered bed
    source, which keeps lake-at-rest exact.
    """
    fp = _pad_axis0(np.stack([h, h + b, un, ut], axis=-1), bc, 2)
    f_m, f_p = _edges(fp, order)
    h_m = np.maximum(f_m[..., 0], 0.0)
    h_p = np.maximum(f_p[..., 0], 0.0)
    e_m, e_p = f_m[..., 1], f_p[..., 1]
    un_m, un_p = f_m[..., 2], f_p[..., 2]
    ut_m, ut_p = f_m[..., 3], f_p[..., 3]

    # face states: L from cell c's upper edge, R from cell c+1's lower edge
    hL, hR = h_p[:-1], h_m[1:]
    eL, eR = e_p[:-1], e_m[1:]
    unL, unR = un_p[:-1], un_m[1:]
    utL, utR = ut_p[:-1], ut_m[1:]
    bstar = np.maximum(eL - hL, eR - hR)
    hsL = np.maximum(0.0, eL - bstar)
    hsR = np.maximum(0.0, eR - bstar)

    cL = np.sqrt(gp * hsL)
    cR = np.sqrt(gp * hsR)
    wetL = hsL > DRYTOL
    wetR = hsR > DRYTOL
    sL = np.where(
        wetL & wetR,
        np.minimum(unL - cL, unR - cR),
        np.where(wetL, unL - cL, unR - 2.0 * cR),
    )
    sR = np.where(
        wetL & wetR,
        np.maximum(unL + cL, unR + cR),
        np.where(wetL, unL + 2.0 * cL, unR + cR),
    )

    span = sR - sL
    safe = np.where(span > 0.0, span, 1.0)
    upL = sL >= 0.0
    dnR = sR <= 0.0
    wet = wetL | wetR

    def hll(fl, fr, ul, ur):
        mid = (sR * fl - sL * fr + sL * sR * (ur - ul)) / safe
        f = np.where(upL, fl, np.where(dnR, fr, mid))
        return np.where(wet, f, 0.0)

    Fh = hll(hsL * unL, hsR * unR, hsL, hsR)
    Fqn = hll(
        hsL * unL**2 + 0.5 * gp * hsL**2,
        hsR * unR**2 + 0.5 * gp * hsR**2,
        hsL * unL,
        hsR * unR,
    )
    Fqt = hll(hsL * unL * utL, hsR * unR * utR, hsL * utL, hsR * utR)

    # interior cells are positions 1..n in the (n+2)-cell edge arrays
    dh = -(Fh[1:] - Fh[:-1]) / dx
    dqt = -(Fqt[1:] - Fqt[:-1]) / dx
    # pressure corrections restore the cell's own edge depths
    hup = h_p[1:-1]  # cell's upper-edge depth
    hlo = h_m[1:-1]
    hsl_up = hsL[1:]  # face state built from this cell's upper edge
    hsr_lo = hsR[:-1]
    b_up = e_p[1:-1] - h_p[1:-1]
    b_lo = e_m[1:-1] - h_m[1:-1]
    dqn = (
        -(Fqn[1:] - Fqn[:-1]) / dx
        - 0.5 * gp * (hup**2 - hsl_up**2) / dx
        + 0.5 * gp * (hlo**2 - hsr_lo**2) / dx
        - gp * 0.5 * (hlo + hup) * (b_up - b_lo) / dx
    )

    dsig = None
    if sig is not None:
        sigp = _pad_axis0(sig, bc, 2)
        s_m, s_p = _edges(sigp, order)
        sup = Fh[..., None] >= 0.0
        Fs = Fh[..., None] * np.where(sup, s_p[:-1], s_m[1:])
        dsig = -(Fs[1:] - Fs[:-1]) / dx
    return dh, dqn, dqt, dsig


def _fv_divergence(state, sig, topo, forcing, grid, order):
    """Sum of the x- and y-face flux divergences for (h, q, h*sig)."""
    gp = -forcing.f_z
    u = state.velocity(DRYTOL)
    dh_x, dqx_x, dqy_x, dsig_x = _fv_sweep_x(
        state.h, u[..., 0], u[..., 1], topo.b, sig, grid.dx, grid.bc_x, gp, order
    )
    # y sweep on transposed fields; tracers need no component rotation
    sig_t = None if sig is None else np.swapaxes(sig, 0, 1)
    dh_y, dqy_y, dqx_y, dsig_y = _fv_sweep_x(
        state.h.T, u[..., 1].T, u[..., 0].T, topo.b.T, sig_t, grid.dy, grid.bc_y, gp, order
    )
    dh = dh_x + dh_y.T
    dq = np.stack([dqx_x + dqx_y.T, dqy_x + dqy_y.T], axis=-1)
    dsig = None
    if sig is not None:
        dsig = dsig_x + np.swapaxes(dsig_y, 0, 1)
    return dh, dq, dsig


# ---------------------------------------------------------------------------
# stage assembly and stiff (exponential) updates


def _sig_pack(conf):
    return np.concatenate([conf.s_hh, conf.s_hz, conf.s_zz[..., None]], axis=-1)


def _sig_unpack(sig):
    return ConformationState(
        s_hh=sig[..., 0:3].copy(), s_hz=sig[..., 3:5].copy(), s_zz=sig[..., 5].copy()
    )


def _sig_identity_rows(sig, mask):
    sig[mask] = np.array([1.0, 0.0, 1.0, 0.0, 0.0, 1.0])


def _stage_rates(state, conf, topo, forcing, params, grid, order):
    sig = _sig_pack(conf) if conf is not None else None
    dh, dq, dsig = _fv_divergence(state, sig, topo, forcing, grid, order)
    sq, shh, shz, szz = models.inertial_sources(state, conf, topo, forcing, params, grid)
    dq = dq + sq
    if dsig is not None:
        dsig = dsig + np.concatenate([shh, shz, szz[..., None]], axis=-1)
    return dh, dq, dsig


def _advance(state, conf, rates, dt):
    dh, dq, dsig = rates
    h1 = state.h + dt * dh
    q1 = state.q + dt * dq
    conf1 = None
    if conf is not None:
        m1 = state.h[..., None] * _sig_pack(conf) + dt * dsig
        hsafe = np.where(h1 > DRYTOL, h1, 1.0)
        sig1 = m1 / hsafe[..., None]
        _sig_identity_rows(sig1, h1 <= DRYTOL)
        conf1 = _sig_unpack(sig1)
    scale = max(float(np.max(state.h)), 1.0)
    if float(h1.min()) < -1e-12 * scale:
        raise SolverAbort("negative depth produced by advective stage (dt too large)")
    np.clip(h1, 0.0, None, out=h1)
    q1[h1 <= DRYTOL] = 0.0
    return ShallowState(h=h1, q=q1), conf1


def _exp_relax(value, equilibrium, rate, dt):
    """Exact solution of d(value)/dt = rate * (equilibrium - value)."""
    decay = np.exp(-rate * dt)
    return equilibrium + (value - equilibrium) * decay


def apply_stiff(state, conf, topo, forcing, params, grid, dt, theta_small=False):
    """Exact exponential update of friction and conformation relaxation.

    Mutates nothing; returns (state', conf').  Depth is untouched.
    """
    model = params.model
    h = state.h
    wet = h > DRYTOL
    hsafe = np.where(wet, h, 1.0)
    k = params.k_friction

    if model is Model.NEWTONIAN_INERTIAL:
        if k == 0.0:
            return state, conf
        keff = k * (1.0 - h * params.re * k / 3.0)
        lam = np.where(wet, keff / hsafe, 0.0)
        q = state.q * np.exp(-lam * dt)[..., None]
        return ShallowState(h=h.copy(), q=q), conf

    if model is Model.POWERLAW_INERTIAL:
        if k == 0.0:
            return state, conf
        u = state.velocity(DRYTOL)
        a, unorm = models._powerlaw_cell_data(state, u, params, grid)
        u1b = models.powerlaw_bed_correction(h, u, unorm, a, params)
        q = state.q.copy()
        for c in range(2):
            moving = np.abs(u[..., c]) > 1e-14
            ratio = np.where(moving, u1b[..., c] / np.where(moving, u[..., c], 1.0), 0.0)
            lam = np.where(wet, k * (1.0 + ratio) / hsafe, 0.0)
            q[..., c] *= np.exp(-lam * dt)
        return ShallowState(h=h.copy(), q=q), conf

    if model in (
        Model.VISCOELASTIC_INERTIAL,
        Model.VISCOELASTIC_INERTIAL_HW,
        Model.VISCOELASTIC_SLICES,
        Model.VISCOELASTIC_SLICES_HW,
    ):
        de, th = params.de, params.theta_ve
        hw = model in (Model.VISCOELASTIC_INERTIAL_HW, Model.VISCOELASTIC_SLICES_HW)
        conf2 = conf.copy()
        if not hw:
            factor = (
                models.fenep_factor(conf, params)
                if params.closure is Closure.FENEP
                else 1.0
            )
            rate = np.asarray(factor) / de
            conf2.s_hh[..., 0] = _exp_relax(conf.s_hh[..., 0], 1.0, rate, dt)
            conf2.s_hh[..., 1] = _exp_relax(conf.s_hh[..., 1], 0.0, rate, dt)
            conf2.s_hh[..., 2] = _exp_relax(conf.s_hh[..., 2], 1.0, rate, dt)
            conf2.s_zz = _exp_relax(conf.s_zz, 1.0, rate, dt)
            conf2.s_hz = conf.s_hz * np.exp(-dt / de)
        if k == 0.0:
            return ShallowState(h=h.copy(), q=state.q.copy()), conf2
        slices = model in (Model.VISCOELASTIC_SLICES, Model.VISCOELASTIC_SLICES_HW)
        if slices:
            lam = np.where(wet, k / hsafe, 0.0)
            q = state.q * np.exp(-lam * dt)[..., None]
            return ShallowState(h=h.copy(), q=q), conf2
        c = 1.0 / (1.0 - th)
        hf = h + topo.b if params.bed_offset_in_friction else h
        keff = k * (1.0 - c * params.re * k * hf / 3.0)
        lam = np.where(wet, keff / hsafe, 0.0)
        # cross forcing from the bed value of the elastic shear
        cross = -k * c * (th * hf / (2.0 * de))[..., None] * conf2.s_hz / hsafe[..., None]
        u = state.velocity(DRYTOL)
        lam_safe = np.where(np.abs(lam) > 1e-300, lam, 1.0)
        ueq = np.where(np.abs(lam)[..., None] > 1e-300, cross / lam_safe[..., None], 0.0)
        decay = np.exp(-lam * dt)[..., None]
        u2 = np.where(
            np.abs(lam)[..., None] > 1e-300,
            ueq + (u - ueq) * decay,
            u + cross * dt,
        )
        q = hsafe[..., None] * u2
        q[~wet] = 0.0
        return ShallowState(h=h.copy(), q=q), conf2

    if model is Model.VISCOELASTIC_VISCOUS:
        de, th, re = params.de, params.theta_ve, params.re
        a = models.effective_forcing(state, topo, forcing, params, grid, theta_small)
        conf2 = conf.copy()
        conf2.s_zz = _exp_relax(conf.s_zz, 1.0, 1.0 / de, dt)
        # shear column: linear ODE at frozen depth and normal component
        lam = (1.0 + th * conf2.s_zz / (1.0 - th)) / de
        ceq = (conf2.s_zz / (1.0 - th))[..., None] * 0.5 * re * a / lam[..., None]
        conf2.s_hz = ceq + (conf.s_hz - ceq) * np.exp(-lam * dt)[..., None]
        w = 0.5 * re * a - (th / de) * conf2.s_hz
        outer = conf2.s_hz[..., :, None] * w[..., None, :]
        stretch = models.mat_to_sym(outer + np.swapaxes(outer, -1, -2)) / (1.0 - th)
        eye = np.array([1.0, 0.0, 1.0])
        eq_hh = eye + de * stretch
        conf2.s_hh = eq_hh + (conf.s_hh - eq_hh) * np.exp(-dt / de)
        return ShallowState(h=h.copy(), q=state.q.copy()), conf2

    return state, conf


# ---------------------------------------------------------------------------
# single step and driver


def step(state, conf, topo, forcing, params, grid, control, dt, theta_small=False):
    """Advance one dt: SSP-RK2 advective/source stage plus exact stiff update."""
    if params.model in VISCOUS_MODELS:
        r = models.rhs(state, conf, topo, forcing, params, grid, theta_small, include_stiff=False)
        s1 = ShallowState(h=state.h + dt * r.dh_dt, q=state.q.copy())
        r1 = models.rhs(s1, conf, topo, forcing, params, grid, theta_small, include_stiff=False)
        h2 = state.h + 0.5 * dt * (r.dh_dt + r1.dh_dt)
        if float(h2.min()) < -1e-12 * max(float(state.h.max()), 1.0):
            raise SolverAbort("negative depth in lubrication step (dt too large)")
        np.clip(h2, 0.0, None, out=h2)
        s2 = ShallowState(h=h2, q=state.q.copy())
        return apply_stiff(s2, conf, topo, forcing, params, grid, dt, theta_small)

    rates = _stage_rates(state, conf, topo, forcing, params, grid, control.order)
    s1, c1 = _advance(state, conf, rates, dt)
    if control.order == 1:  # forward Euler: one stage, first order in time
        return apply_stiff(s1, c1, topo, forcing, params, grid, dt, theta_small)
    rates1 = _stage_rates(s1, c1, topo, forcing, params, grid, control.order)
    s1b, c1b = _advance(s1, c1, rates1, dt)
    h2 = 0.5 * (state.h + s1b.h)
    q2 = 0.5 * (state.q + s1b.q)
    conf2 = None
    if conf is not None:
        m2 = 0.5 * (state.h[..., None] * _sig_pack(conf) + s1b.h[..., None] * _sig_pack(c1b))
        hsafe = np.where(h2 > DRYTOL, h2, 1.0)
        sig2 = m2 / hsafe[..., None]
        _sig_identity_rows(sig2, h2 <= DRYTOL)
        conf2 = _sig_unpack(sig2)
    q2[h2 <= DRYTOL] = 0.0
    s2 = ShallowState(h=h2, q=q2)
    return apply_stiff(s2, conf2, topo, forcing, params, grid, dt, theta_small)


@dataclass
class RunResult:
    state: ShallowState
    conf: ConformationState | None
    t: float
    steps: int
    mass_drift: float
    snapshots: list


def _min_sigma_eig(conf):
    if conf is None:
        return math.nan
    sig = np.empty(conf.s_zz.shape + (3, 3))
    sig[..., 0, 0] = conf.s_hh[..., 0]
    sig[..., 0, 1] = sig[..., 1, 0] = conf.s_hh[..., 1]
    sig[..., 1, 1] = conf.s_hh[..., 2]
    sig[..., 0, 2] = sig[..., 2, 0] = conf.s_hz[..., 0]
    sig[..., 1, 2] = sig[..., 2, 1] = conf.s_hz[..., 1]
    sig[..., 2, 2] = conf.s_zz
    return float(np.linalg.eigvalsh(sig.reshape(-1, 3, 3))[:, 0].min())


def run(
    state,
    conf,
    topo,
    forcing,
    params,
    grid,
    control,
    *,
    theta_small=False,
    t_end=None,
    n_steps=None,
    output_times=(),
    log_path=None,
    log_every=1,
    validate_every=50,
    keep_snapshots=True,
):
    """Drive :func:`step` to t_end (or for n_steps), collecting snapshots.

    Snapshots (deep copies) are taken at t=0 and at each requested output
    time (clamped into the run interval); the run-log CSV records
    t, dt, mass, min_h, max|u| and the minimum conformation eigenvalue.
    """
    if t_end is None:
        t_end = control.t_end
    state = state.copy()
    conf = conf.copy() if conf is not None else None
    cell = grid.dx * grid.dy
    mass0 = float(state.h.sum()) * cell
    t = 0.0
    steps = 0
    outputs = sorted(ot for ot in output_times if ot > 0.0)
    snapshots = [(0.0, state.copy(), conf.copy() if conf else None)] if keep_snapshots else []
    log = open(log_path, "w") if log_path else None
    if log:
        log.write("t,dt,mass,min_h,max_speed,min_sigma_eig\n")
    try:
        while t < t_end - 1e-14 * max(t_end, 1.0):
            if n_steps is not None and steps >= n_steps:
                break
            dt = stable_dt(state, params, grid, control, forcing, topo, theta_small)
            if not (dt > 0) or not np.isfinite(dt):
                raise SolverAbort(f"no finite stable dt at step {steps}, t={t:.6g}")
            dt = min(dt, t_end - t)
            if outputs:
                dt = min(dt, outputs[0] - t) if outputs[0] > t else dt
            try:
                state, conf = step(
                    state, conf, topo, forcing, params, grid, control, dt, theta_small
                )
            except SolverAbort as exc:
                raise SolverAbort(f"step {steps} failed at t={t:.6g}: {exc}") from exc
            t += dt
            steps += 1
            if validate_every and steps % validate_every == 0:
                issues = validate(state, conf, params, drytol=DRYTOL)
                if issues:
                    raise SolverAbort(f"invalid state at step {steps}, t={t:.6g}: {issues[0]}")
            if log and steps % max(log_every, 1) == 0:
                u = state.velocity(DRYTOL)
                log.write(
                    "%.17g,%.17g,%.17g,%.17g,%.17g,%.17g\n"
                    % (
                        t,
                        dt,
                        float(state.h.sum()) * cell,
                        float(state.h.min()),
                        float(np.sqrt(np.sum(u * u, axis=-1)).max()),
                        _min_sigma_eig(conf),
                    )
                )
            while outputs and t >= outputs[0] - 1e-12 * max(outputs[0], 1.0):
                outputs.pop(0)
                if keep_snapshots:
                    snapshots.append((t, state.copy(), conf.copy() if conf else None))
    finally:
        if log:
            log.close()
    mass_drift = abs(float(state.h.sum()) * cell - mass0) / max(abs(mass0), 1e-300)
    if keep_snapshots and snapshots[-1][0] < t:
        snapshots.append((t, state.copy(), conf.copy() if conf else None))
    return RunResult(
        state=state, conf=conf, t=t, steps=steps, mass_drift=mass_drift, snapshots=snapshots
    )
