"""Shared fixtures and scenario builders for the test suite."""

from __future__ import annotations

import numpy as np
import pytest

from thinflow.grid import Grid2D, build_topography, forcing_from_angle
from thinflow.state import ConformationState, Model, RheologyParams, ShallowState


@pytest.fixture
def rng():
    return np.random.default_rng(20260826)


def make_grid(nx=12, ny=6, lx=1.0, ly=1.0, bc_x="periodic", bc_y="periodic"):
    return Grid2D(nx=nx, ny=ny, dx=lx / nx, dy=ly / ny, bc_x=bc_x, bc_y=bc_y)


def smooth_state(grid, h0=0.5, amp=0.1, u0=(0.3, 0.2)):
    """Smooth positive depth and velocity fields, periodic over the unit square."""
    X, Y = grid.cell_centers()
    h = h0 + amp * np.sin(2 * np.pi * X) * np.cos(2 * np.pi * Y)
    u = np.stack(
        [
            u0[0] + 0.1 * np.sin(2 * np.pi * X + 0.3),
            u0[1] + 0.05 * np.cos(2 * np.pi * Y),
        ],
        axis=-1,
    )
    return ShallowState(h=h, q=h[..., None] * u)


def smooth_conf(grid, amp=0.1):
    """Smooth SPD-perturbed conformation field."""
    X, Y = grid.cell_centers()
    s_hh = np.zeros(grid.shape + (3,))
    s_hh[..., 0] = 1.0 + amp * (0.5 + 0.3 * np.sin(2 * np.pi * X))
    s_hh[..., 1] = amp * 0.2 * np.cos(2 * np.pi * X)
    s_hh[..., 2] = 1.0 + amp * (0.4 + 0.2 * np.cos(2 * np.pi * Y))
    s_hz = np.stack(
        [amp * (0.3 + 0.2 * np.sin(2 * np.pi * X)), amp * 0.2 * np.cos(2 * np.pi * Y)],
        axis=-1,
    )
    s_zz = 1.0 + amp * (0.3 + 0.2 * np.sin(2 * np.pi * X + 0.5))
    return ConformationState(s_hh=s_hh, s_hz=s_hz, s_zz=s_zz)


def smooth_topo(grid, amp=0.05):
    X, Y = grid.cell_centers()
    b = amp * np.sin(2 * np.pi * X) * np.sin(2 * np.pi * Y)
    return build_topography(grid, b)


def flat_topo(grid):
    return build_topography(grid, np.zeros(grid.shape))


def standard_forcing(theta=0.05):
    return forcing_from_angle(1.0, theta)


def params_for(model, **kw):
    defaults = dict(re=50.0, k_friction=0.2)
    if model in (
        Model.VISCOELASTIC_INERTIAL,
        Model.VISCOELASTIC_INERTIAL_HW,
        Model.VISCOELASTIC_SLICES,
        Model.VISCOELASTIC_SLICES_HW,
    ):
        defaults.update(de=0.5, theta_ve=0.3)
    if model in (Model.NEWTONIAN_VISCOUS, Model.POWERLAW_VISCOUS):
        defaults = dict(re=1.0, k_friction=1.0)
    if model is Model.VISCOELASTIC_VISCOUS:
        defaults = dict(re=1.0, k_friction=1.0, de=1.0, theta_ve=0.3)
    defaults.update(kw)
    return RheologyParams(model=model, **defaults)


def write_config(path, text):
    path.write_text(text)
    return str(path)
