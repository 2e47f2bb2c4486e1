r"""Pointwise constitutive kernels: profile corrections, stress-law inversions,
discharge laws.

Every kernel is a pure function of its arguments and broadcasts over numpy
arrays.  Closed forms are cross-checked in the test suite against independent
quadrature / bisection oracles; the discharge laws themselves are computed by
adaptive Gauss-Legendre quadrature of the underlying shear profile, with the
closed forms kept as oracles only.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "ClosureError",
    "parabolic_correction",
    "viscoelastic_correction",
    "phi",
    "invert_phi",
    "bingham_profile",
    "drucker_prager_residual",
    "drucker_prager_shear",
    "newtonian_discharge",
    "newtonian_viscous_profile",
    "powerlaw_viscous_shear",
    "powerlaw_viscous_profile",
    "powerlaw_discharge",
    "viscoelastic_viscous_velocity",
    "viscoelastic_viscous_flux",
    "gauss_legendre",
    "quad_gl",
    "adaptive_quad",
]


class ClosureError(ValueError):
    """Raised when a closure is evaluated outside its admissible set."""


# ---------------------------------------------------------------------------
# quadrature helpers

_GL_CACHE: dict[int, tuple[np.ndarray, np.ndarray]] = {}


def gauss_legendre(npts: int = 16) -> tuple[np.ndarray, np.ndarray]:
    """Gauss-Legendre nodes/weights on [-1, 1], cached."""
    if npts not in _GL_CACHE:
        _GL_CACHE[npts] = np.polynomial.legendre.leggauss(npts)
    return _GL_CACHE[npts]


def quad_gl(f, lo, hi, npts: int = 16):
    """Fixed-order Gauss-Legendre quadrature of ``f`` over [lo, hi].

    ``lo``/``hi`` may be arrays; ``f`` must broadcast over a stacked node axis
    prepended to their shape.
    """
    x, w = gauss_legendre(npts)
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    mid = 0.5 * (hi + lo)
    half = 0.5 * (hi - lo)
    nodes = mid + half * x.reshape((-1,) + (1,) * lo.ndim)
    vals = f(nodes)
    return half * np.tensordot(w, vals, axes=(0, 0))


def adaptive_quad(f, lo: float, hi: float, tol: float = 1e-13, depth: int = 30):
    """Adaptive (bisecting) Gauss-Legendre quadrature for scalar endpoints."""
    whole = quad_gl(f, lo, hi)

    def recurse(a, b, est, d):
        m = 0.5 * (a + b)
        left = quad_gl(f, a, m)
        right = quad_gl(f, m, b)
        err = np.max(np.abs(left + right - est))
        if err <= tol * max(1.0, float(np.max(np.abs(left + right)))) or d == 0:
            return left + right
        return recurse(a, m, left, d - 1) + recurse(m, b, right, d - 1)

    return recurse(lo, hi, whole, depth)


def _vec(u):
    """View the trailing axis of a 2-vector argument."""
    return np.asarray(u, dtype=float)


# ---------------------------------------------------------------------------
# velocity-profile corrections (inertial regime)


def parabolic_correction(z, b, h, re, k, u0):
    """Zero-depth-mean parabolic velocity correction for Navier-friction flow.

    u1(z) = (Re k / 2h) * ((b + 3h/2 - z)(z - b - h/2) + h^2/12) * u0.
    Bed value -(Re k h/3) u0 (total slip factor 1 - h Re k/3), surface value
    +(Re k h/6) u0, depth average exactly zero.
    """
    z, b, h = np.asarray(z, float), np.asarray(b, float), np.asarray(h, float)
    if np.any(h <= 0):
        raise ClosureError("parabolic_correction needs h > 0")
    shape_fn = (re * k / (2.0 * h)) * ((b + 1.5 * h - z) * (z - b - 0.5 * h) + h * h / 12.0)
    return shape_fn[..., None] * _vec(u0)


def viscoelastic_correction(z, b, h, re, k, de, theta_ve, u0, s_hz0):
    """Zero-depth-mean correction for the viscoelastic inertial regime.

    u1(z) = (1/(1-theta)) [ (Re k/2h) u0 (h^2/3 - (b+h-z)^2)
                            - (theta/2De) s_hz0 (2(z-b) - h) ].
    Its z-derivative is (1/(1-theta)) (Re k u0 (b+h-z)/h - (theta/De) s_hz0),
    and both terms integrate to zero over the layer.
    """
    if np.any(np.asarray(theta_ve) >= 1.0):
        raise ClosureError("viscoelastic_correction needs theta_ve < 1")
    z, b, h = np.asarray(z, float), np.asarray(b, float), np.asarray(h, float)
    if np.any(h <= 0):
        raise ClosureError("viscoelastic_correction needs h > 0")
    c = 1.0 / (1.0 - theta_ve)
    visc = (re * k / (2.0 * h)) * (h * h / 3.0 - (b + h - z) ** 2)
    elas = (theta_ve / (2.0 * de)) * (2.0 * (z - b) - h)
    return c * (visc[..., None] * _vec(u0) - elas[..., None] * _vec(s_hz0))


def viscoelastic_correction_dz(z, b, h, re, k, de, theta_ve, u0, s_hz0):
    """z-derivative of :func:`viscoelastic_correction`."""
    z, b, h = np.asarray(z, float), np.asarray(b, float), np.asarray(h, float)
    c = 1.0 / (1.0 - theta_ve)
    visc = re * k * (b + h - z) / h
    return c * (visc[..., None] * _vec(u0) - (theta_ve / de) * np.ones_like(z)[..., None] * _vec(s_hz0))


# ---------------------------------------------------------------------------
# power-law stress inversion


def phi(x, a, n):
    """phi_a(x) = (x^2/2 + a)^((n-1)/2) * x, monotone from R+ onto R+."""
    x = np.asarray(x, dtype=float)
    a = np.asarray(a, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.power(0.5 * x * x + a, 0.5 * (n - 1.0)) * x
    # x = a = 0 with n < 1 hits 0^negative * 0; the limit along x is 0
    return np.where(x == 0.0, 0.0, out)


def _phi_prime(x, a, n):
    base = 0.5 * x * x + a
    return np.power(base, 0.5 * (n - 3.0)) * (a + 0.5 * n * x * x)


def invert_phi(y, a, n, tol: float = 1e-12, maxit: int = 200):
    """Inverse of phi_a at y >= 0, by safeguarded Newton with bisection fallback.

    Satisfies |phi(x) - y| <= tol * max(1, y); for n >= 1 the solution obeys
    0 <= x <= y.
    """
    y = np.asarray(y, dtype=float)
    a = np.asarray(a, dtype=float)
    scalar = y.ndim == 0 and a.ndim == 0
    y, a = np.atleast_1d(y), np.atleast_1d(a)
    y, a = np.broadcast_arrays(y, a)
    if np.any(y < 0):
        raise ClosureError("invert_phi needs y >= 0")

    lo = np.zeros_like(y, dtype=float)
    hi = np.maximum(1.0, np.array(y, dtype=float, copy=True))
    for _ in range(200):
        bad = phi(hi, a, n) < y
        if not np.any(bad):
            break
        hi = np.where(bad, 2.0 * hi, hi)
    else:
        raise ClosureError("invert_phi: failed to bracket the root")

    # Start from the exact roots of the two asymptotic branches of phi
    # (a-dominated: phi ~ a^((n-1)/2) x; rate-dominated: phi ~ 2^((1-n)/2) x^n);
    # taking min (n >= 1) / max (n < 1) keeps the guess on the bracketed side.
    with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
        x_a = y * np.power(a, 0.5 * (1.0 - n))
        x_b = np.power(y * 2.0 ** (0.5 * (n - 1.0)), 1.0 / n)
    pick = np.minimum if n >= 1 else np.maximum
    x = np.clip(np.where(np.isfinite(x_a), pick(x_a, x_b), x_b), lo, hi)
    target = tol * np.maximum(1.0, y)
    for _ in range(maxit):
        fx = phi(x, a, n) - y
        done = np.abs(fx) <= target
        if np.all(done):
            break
        lo = np.where(fx < 0, x, lo)
        hi = np.where(fx > 0, x, hi)
        with np.errstate(divide="ignore", invalid="ignore"):
            step = fx / _phi_prime(x, a, n)
        xn = x - step
        outside = ~np.isfinite(xn) | (xn <= lo) | (xn >= hi)
        x = np.where(done, x, np.where(outside, 0.5 * (lo + hi), xn))
    else:
        fx = phi(x, a, n) - y
        if np.any(np.abs(fx) > target):
            raise ClosureError("invert_phi: no convergence after iteration cap")
    x = np.where(y == 0.0, 0.0, x)
    return float(x[0]) if scalar else x


# ---------------------------------------------------------------------------
# Bingham limit (n -> 0) and Drucker-Prager closures


def bingham_profile(z, b, h, re, k, u0, dh_norm, div_u=None):
    """Velocity correction profile in the Bingham (n -> 0) limit.

    Admissible iff 0 < |u0| < sqrt(2)/(k Re) (Euclidean-norm reading); the
    arcsin and square-root arguments then lie in [0, 1] for all z in the layer.
    ``dh_norm`` is sqrt(|D_H u0|^2 + |div u0|^2); ``div_u`` is accepted for
    interface symmetry but enters only through ``dh_norm``.
    """
    z, b, h = np.asarray(z, float), np.asarray(b, float), np.asarray(h, float)
    u0 = _vec(u0)
    unorm = np.sqrt(np.sum(u0 * u0, axis=-1))
    s = re * k * unorm / np.sqrt(2.0)
    if np.any(unorm <= 0) or np.any(s >= 1.0):
        raise ClosureError(
            "bingham profile admissibility violated: need 0 < |u0| < sqrt(2)/(k Re)"
        )
    interior = s * (b + h - z) / h
    mag = (
        dh_norm
        * h
        / (re * k * unorm)
        * (
            2.0 * np.sqrt(1.0 - interior**2)
            + np.sqrt(1.0 - s**2)
            + np.arcsin(s) / s
        )
    )
    return mag[..., None] * (u0 / unorm[..., None])


def drucker_prager_residual(x, u0_norm, h, k, bi, f_z, D_norm, div_u):
    """Residual of the Drucker-Prager shear quadratic at |dz u1| = x (gamma = 0)."""
    c = h * bi * f_z / (k * u0_norm)
    return (0.5 - c * c) * x * x - 2.0 * bi * div_u * c * x + D_norm**2 + (
        1.0 - bi * bi
    ) * div_u**2


def drucker_prager_shear(u0, h, k, bi, f_z, D_norm, div_u):
    """Nonnegative root |dz u1| of the Drucker-Prager quadratic (gamma = 0).

    Quadratic: (1/2 - c^2) x^2 - 2 Bi div_u c x + D^2 + (1 - Bi^2) div_u^2 = 0
    with c = h Bi f_z / (k |u0|).  Raises when no nonnegative real root exists
    (rigid / inadmissible regime).
    """
    u0 = _vec(u0)
    u0_norm = float(np.sqrt(np.sum(u0 * u0, axis=-1)))
    if u0_norm == 0.0 or k == 0.0:
        raise ClosureError("drucker_prager_shear needs |u0| > 0 and k > 0")
    c = h * bi * f_z / (k * u0_norm)
    A = 0.5 - c * c
    B = -2.0 * bi * div_u * c
    C = D_norm**2 + (1.0 - bi * bi) * div_u**2
    if A == 0.0:
        raise ClosureError("drucker_prager_shear: degenerate quadratic (zero leading coefficient)")
    disc = B * B - 4.0 * A * C
    if disc < 0.0:
        raise ClosureError("drucker_prager_shear: no real root (rigid/inadmissible regime)")
    sq = np.sqrt(disc)
    roots = [(-B - sq) / (2.0 * A), (-B + sq) / (2.0 * A)]
    admissible = [r for r in roots if r >= 0.0]
    if not admissible:
        raise ClosureError("drucker_prager_shear: no nonnegative root (rigid/inadmissible regime)")
    return min(admissible)


# ---------------------------------------------------------------------------
# viscous-regime (lubrication) discharge laws


def newtonian_discharge(h, re, k, fH_eff):
    """Depth-integrated discharge of the Newtonian viscous profile.

    q = -fH_eff (Re h^3/3 + h^2/k).
    """
    if k == 0.0:
        raise ClosureError("newtonian_discharge: viscous regime requires k > 0")
    h = np.asarray(h, dtype=float)
    mob = re * h**3 / 3.0 + h**2 / k
    return -mob[..., None] * _vec(fH_eff)


def newtonian_viscous_profile(z, b, h, re, k, fH_eff):
    """Parabolic viscous velocity profile with Navier slip.

    u(z) = fH_eff (Re ((z-(b+h))^2/2 - h^2/2) - h/k); slip value -fH_eff h/k
    at the bed; depth integral equals :func:`newtonian_discharge`.
    """
    if k == 0.0:
        raise ClosureError("newtonian_viscous_profile requires k > 0")
    z, b, h = np.asarray(z, float), np.asarray(b, float), np.asarray(h, float)
    shape_fn = re * ((z - (b + h)) ** 2 / 2.0 - h * h / 2.0) - h / k
    return shape_fn[..., None] * _vec(fH_eff)


def powerlaw_viscous_shear(z, b, h, re, n, a_eff):
    """Shear dz u of the power-law viscous profile.

    Solves (1/Re)(|dz u|^2/2)^((n-1)/2) dz u = a_eff (z - (b+h)) for dz u;
    fractional powers of the negative factor are taken on its modulus with the
    sign carried separately.
    """
    z, b, h = np.asarray(z, float), np.asarray(b, float), np.asarray(h, float)
    a = _vec(a_eff)
    anorm = np.sqrt(np.sum(a * a, axis=-1))
    mag = np.power(2.0 ** (0.5 * (n - 1.0)) * re * anorm * np.abs(b + h - z), 1.0 / n)
    with np.errstate(invalid="ignore"):
        ahat = np.where(anorm[..., None] > 0, a / np.where(anorm == 0, 1.0, anorm)[..., None], 0.0)
    return -mag[..., None] * ahat


def powerlaw_viscous_profile(z, b, h, re, k, n, a_eff):
    """Power-law viscous profile: slip value plus exact shear antiderivative.

    u(z) = -a_eff h/k - a_hat C^{1/n} (n/(n+1)) (h^{(n+1)/n} - (b+h-z)^{(n+1)/n})
    with C = 2^{(n-1)/2} Re |a_eff|; reduces to the Newtonian parabola at n = 1.
    """
    if k == 0.0:
        raise ClosureError("powerlaw_viscous_profile requires k > 0")
    z, b, h = np.asarray(z, float), np.asarray(b, float), np.asarray(h, float)
    a = _vec(a_eff)
    anorm = np.sqrt(np.sum(a * a, axis=-1))
    C = 2.0 ** (0.5 * (n - 1.0)) * re * anorm
    ex = (n + 1.0) / n
    shape_fn = np.power(C, 1.0 / n) * (n / (n + 1.0)) * (
        np.power(h, ex) - np.power(np.abs(b + h - z), ex)
    )
    ahat = np.where(anorm[..., None] > 0, a / np.where(anorm == 0, 1.0, anorm)[..., None], 0.0)
    return -(h / k)[..., None] * a - shape_fn[..., None] * ahat


def powerlaw_discharge(h, re, k, n, a_eff, tol: float = 1e-13):
    """Depth integral of the power-law viscous profile, by adaptive quadrature.

    Uses int_b^{b+h} u = h u(b) + int_0^h w * dz_u(b+h-w) dw (integration by
    parts) and quadrature of the shear law; coincides with
    :func:`newtonian_discharge` exactly at n = 1.
    """
    if k == 0.0:
        raise ClosureError("powerlaw_discharge: viscous regime requires k > 0")
    if n <= 0:
        raise ClosureError("powerlaw_discharge needs n > 0")
    h = float(h)
    a = _vec(a_eff)
    if h == 0.0:
        return np.zeros_like(a)
    anorm = float(np.sqrt(np.sum(a * a)))
    slip = -(h * h / k) * a
    if anorm == 0.0:
        return slip
    C = 2.0 ** (0.5 * (n - 1.0)) * re * anorm

    def integrand(w):
        # w = b + h - z; the shear magnitude at depth w below the surface
        return w * np.power(C * w, 1.0 / n)

    shear_part = adaptive_quad(integrand, 0.0, h, tol=tol)
    return slip - shear_part * (a / anorm)


# ---------------------------------------------------------------------------
# viscoelastic viscous regime


def viscoelastic_viscous_velocity(z, b, h, re, de, theta_ve, fH_eff, s_hz0):
    """Velocity profile of the viscoelastic viscous (lubrication) regime.

    u(z) = (1/(1-theta)) ((Re/2) fH_eff (z-(b+h))^2 - (theta/De) s_hz0 (z-b)).
    """
    if np.any(np.asarray(theta_ve) >= 1.0):
        raise ClosureError("viscoelastic_viscous_velocity needs theta_ve < 1")
    z, b, h = np.asarray(z, float), np.asarray(b, float), np.asarray(h, float)
    c = 1.0 / (1.0 - theta_ve)
    visc = 0.5 * re * (z - (b + h)) ** 2
    elas = (theta_ve / de) * (z - b)
    return c * (visc[..., None] * _vec(fH_eff) - elas[..., None] * _vec(s_hz0))


def viscoelastic_viscous_flux(h, re, de, theta_ve, fH_eff, s_hz0):
    """Depth integral of :func:`viscoelastic_viscous_velocity`.

    (1/(1-theta)) (Re fH_eff h^3/6 - (theta/De) s_hz0 h^2/2).
    """
    if np.any(np.asarray(theta_ve) >= 1.0):
        raise ClosureError("viscoelastic_viscous_flux needs theta_ve < 1")
    h = np.asarray(h, dtype=float)
    c = 1.0 / (1.0 - theta_ve)
    return c * (
        (re * h**3 / 6.0)[..., None] * _vec(fH_eff)
        - (theta_ve / de) * (h**2 / 2.0)[..., None] * _vec(s_hz0)
    )
