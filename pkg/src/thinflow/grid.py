"""Uniform Cartesian grids, topography, slope forcing and difference stencils.

All fields are cell-centered ``(nx, ny)`` arrays.  Lateral boundaries are
either periodic or zero-gradient copy-out per axis; every stencil in the
package goes through :func:`pad` so the boundary treatment is uniform.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

PERIODIC = "periodic"
OUTFLOW = "outflow-copy"
_BC_KINDS = (PERIODIC, OUTFLOW)


@dataclass(frozen=True)
class Grid2D:
    """Uniform 2D cell grid with per-axis boundary kinds."""

    nx: int
    ny: int
    dx: float
    dy: float
    bc_x: str = PERIODIC
    bc_y: str = PERIODIC

    def __post_init__(self):
        if self.nx < 3 or self.ny < 3:
            raise ValueError(f"need nx,ny >= 3, got ({self.nx},{self.ny})")
        if not (self.dx > 0 and self.dy > 0):
            raise ValueError(f"need dx,dy > 0, got ({self.dx},{self.dy})")
        if self.bc_x not in _BC_KINDS or self.bc_y not in _BC_KINDS:
            raise ValueError(f"boundary kind must be one of {_BC_KINDS}")

    @property
    def shape(self) -> tuple[int, int]:
        return (self.nx, self.ny)

    def cell_centers(self) -> tuple[np.ndarray, np.ndarray]:
        """Cell-center coordinates as ``(X, Y)`` meshgrid arrays."""
        x = (np.arange(self.nx) + 0.5) * self.dx
        y = (np.arange(self.ny) + 0.5) * self.dy
        return np.meshgrid(x, y, indexing="ij")


def pad(f: np.ndarray, grid: Grid2D, width: int = 1) -> np.ndarray:
    """Extend a cell field by ``width`` ghost cells per side, honoring the bcs."""
    # Hand-rolled ghost fill: np.pad dominates the step cost on small grids.
    w = width
    nx, ny = f.shape[0], f.shape[1]
    out = np.empty((nx + 2 * w, ny + 2 * w) + f.shape[2:], dtype=f.dtype)
    out[w:-w, w:-w] = f
    if grid.bc_x == PERIODIC:
        out[:w, w:-w] = f[-w:]
        out[-w:, w:-w] = f[:w]
    else:
        out[:w, w:-w] = f[:1]
        out[-w:, w:-w] = f[-1:]
    if grid.bc_y == PERIODIC:
        out[:, :w] = out[:, -2 * w : -w]
        out[:, -w:] = out[:, w : 2 * w]
    else:
        out[:, :w] = out[:, w : w + 1]
        out[:, -w:] = out[:, -w - 1 : -w]
    return out


def ddx(f: np.ndarray, grid: Grid2D) -> np.ndarray:
    """Second-order central x-derivative."""
    g = pad(f, grid, 1)
    return (g[2:, 1:-1] - g[:-2, 1:-1]) / (2.0 * grid.dx)


def ddy(f: np.ndarray, grid: Grid2D) -> np.ndarray:
    """Second-order central y-derivative."""
    g = pad(f, grid, 1)
    return (g[1:-1, 2:] - g[1:-1, :-2]) / (2.0 * grid.dy)


def gradient(f: np.ndarray, grid: Grid2D) -> np.ndarray:
    """Central-difference gradient, shape ``(nx, ny, 2)``."""
    g = pad(f, grid, 1)
    out = np.empty(f.shape + (2,))
    out[..., 0] = (g[2:, 1:-1] - g[:-2, 1:-1]) / (2.0 * grid.dx)
    out[..., 1] = (g[1:-1, 2:] - g[1:-1, :-2]) / (2.0 * grid.dy)
    return out


def divergence(v: np.ndarray, grid: Grid2D) -> np.ndarray:
    """Divergence of a cell 2-vector field ``(nx, ny, 2)``."""
    g = pad(v, grid, 1)
    return (g[2:, 1:-1, ..., 0] - g[:-2, 1:-1, ..., 0]) / (2.0 * grid.dx) + (
        g[1:-1, 2:, ..., 1] - g[1:-1, :-2, ..., 1]
    ) / (2.0 * grid.dy)


def laplacian(f: np.ndarray, grid: Grid2D) -> np.ndarray:
    """Compact 5-point Laplacian."""
    g = pad(f, grid, 1)
    c = g[1:-1, 1:-1]
    return (g[2:, 1:-1] - 2 * c + g[:-2, 1:-1]) / grid.dx**2 + (
        g[1:-1, 2:] - 2 * c + g[1:-1, :-2]
    ) / grid.dy**2


def grad_laplacian(f: np.ndarray, grid: Grid2D) -> np.ndarray:
    """Gradient of the Laplacian (surface-tension stencil), ``(nx, ny, 2)``."""
    return gradient(laplacian(f, grid), grid)


@dataclass(frozen=True)
class Topography:
    """Cell-centered bed elevation with its precomputed gradient."""

    b: np.ndarray
    grad_b: np.ndarray = field(repr=False)

    @property
    def shape(self):
        return self.b.shape


def build_topography(grid: Grid2D, b_values: np.ndarray) -> Topography:
    """Wrap a bed-elevation field, populating grad_b by central differences."""
    b = np.asarray(b_values, dtype=float)
    if b.shape != grid.shape:
        raise ValueError(f"topography shape {b.shape} != grid shape {grid.shape}")
    if not np.all(np.isfinite(b)):
        raise ValueError("topography contains non-finite values")
    return Topography(b=b, grad_b=gradient(b, grid))


@dataclass(frozen=True)
class Forcing:
    """Nondimensional gravity split into in-plane and normal components."""

    g: float
    theta_angle: float

    @property
    def f_H(self) -> np.ndarray:
        return np.array([self.g * math.sin(self.theta_angle), 0.0])

    @property
    def f_z(self) -> float:
        return -self.g * math.cos(self.theta_angle)


def forcing_from_angle(g: float, theta: float) -> Forcing:
    """Forcing for gravity magnitude ``g`` and plane inclination ``theta``."""
    if g < 0:
        raise ValueError(f"need g >= 0, got {g}")
    if not abs(theta) < math.pi / 2:
        raise ValueError(f"need |theta| < pi/2, got {theta}")
    return Forcing(g=float(g), theta_angle=float(theta))


def topography_from_profile(grid: Grid2D, spec: str) -> Topography:
    """Named analytic bed profiles: "flat", "incline[:slope]", "bump:amplitude,width".

    "incline" tilts the bed within the already-inclined frame (slope per unit x);
    "bump" is a Gaussian centered in the domain.
    """
    X, Y = grid.cell_centers()
    name, _, args = spec.partition(":")
    if name == "flat":
        b = np.zeros(grid.shape)
    elif name == "incline":
        slope = float(args) if args else 0.1
        b = slope * X
    elif name == "bump":
        if not args:
            raise ValueError("bump profile needs 'bump:amplitude,width'")
        amp_s, width_s = args.split(",")
        amp, width = float(amp_s), float(width_s)
        x0 = 0.5 * grid.nx * grid.dx
        y0 = 0.5 * grid.ny * grid.dy
        b = amp * np.exp(-((X - x0) ** 2 + (Y - y0) ** 2) / (2.0 * width**2))
    else:
        raise ValueError(f"unknown topography profile {name!r}")
    return build_topography(grid, b)


def topography_from_csv(grid: Grid2D, path) -> Topography:
    """Load a row-major nx-by-ny table of bed elevations (no header)."""
    b = np.loadtxt(path, delimiter=",", ndmin=2)
    if b.shape != grid.shape:
        raise ValueError(f"CSV topography shape {b.shape} != grid shape {grid.shape}")
    return build_topography(grid, b)
