"""Flow and conformation state containers, rheology parameters, validation.

Conformation layout: ``s_hh`` stores the symmetric in-plane block as
``(nx, ny, 3)`` components ``(xx, xy, yy)``; ``s_hz`` is the ``(nx, ny, 2)``
shear column; ``s_zz`` the normal component.  :func:`assemble_sigma3` builds
the full 3x3 tensor per cell.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from enum import Enum

import numpy as np

from .grid import Grid2D

SPD_PIVOT_TOL = 1e-12


class Model(Enum):
    NEWTONIAN_INERTIAL = "NewtonianInertial"
    NEWTONIAN_VISCOUS = "NewtonianViscous"
    POWERLAW_INERTIAL = "PowerLawInertial"
    POWERLAW_VISCOUS = "PowerLawViscous"
    VISCOELASTIC_INERTIAL = "ViscoelasticInertial"
    VISCOELASTIC_INERTIAL_HW = "ViscoelasticInertialHW"
    VISCOELASTIC_SLICES = "ViscoelasticSlices"
    VISCOELASTIC_SLICES_HW = "ViscoelasticSlicesHW"
    VISCOELASTIC_VISCOUS = "ViscoelasticViscous"


class Closure(Enum):
    UCM = "UCM"
    FENEP = "FENEP"


VISCOELASTIC_MODELS = frozenset(
    {
        Model.VISCOELASTIC_INERTIAL,
        Model.VISCOELASTIC_INERTIAL_HW,
        Model.VISCOELASTIC_SLICES,
        Model.VISCOELASTIC_SLICES_HW,
        Model.VISCOELASTIC_VISCOUS,
    }
)

VISCOUS_MODELS = frozenset(
    {Model.NEWTONIAN_VISCOUS, Model.POWERLAW_VISCOUS, Model.VISCOELASTIC_VISCOUS}
)


@dataclass
class ShallowState:
    """Depth h >= 0 and momentum q = h*u per cell."""

    h: np.ndarray
    q: np.ndarray

    @classmethod
    def zeros(cls, grid: Grid2D) -> "ShallowState":
        return cls(h=np.zeros(grid.shape), q=np.zeros(grid.shape + (2,)))

    def velocity(self, drytol: float = 1e-14) -> np.ndarray:
        """u = q/h with dry cells zeroed."""
        h = np.where(self.h > drytol, self.h, 1.0)
        u = self.q / h[..., None]
        u[self.h <= drytol] = 0.0
        return u

    def copy(self) -> "ShallowState":
        return ShallowState(h=self.h.copy(), q=self.q.copy())


@dataclass
class ConformationState:
    """Depth-averaged conformation tensor components per cell."""

    s_hh: np.ndarray  # (nx, ny, 3): xx, xy, yy
    s_hz: np.ndarray  # (nx, ny, 2)
    s_zz: np.ndarray  # (nx, ny)

    @classmethod
    def identity(cls, grid: Grid2D) -> "ConformationState":
        s_hh = np.zeros(grid.shape + (3,))
        s_hh[..., 0] = 1.0
        s_hh[..., 2] = 1.0
        return cls(s_hh=s_hh, s_hz=np.zeros(grid.shape + (2,)), s_zz=np.ones(grid.shape))

    def trace(self) -> np.ndarray:
        return self.s_hh[..., 0] + self.s_hh[..., 2] + self.s_zz

    def copy(self) -> "ConformationState":
        return ConformationState(self.s_hh.copy(), self.s_hz.copy(), self.s_zz.copy())


@dataclass(frozen=True)
class RheologyParams:
    """All nondimensional numbers plus regime/model selector."""

    model: Model
    re: float = 1.0
    de: float = 1.0
    theta_ve: float = 0.0
    k_friction: float = 0.0
    gamma: float = 0.0
    n_power: float = 1.0
    bi: float = 0.0
    b_fene: float = float("inf")
    closure: Closure = Closure.UCM
    # sensitivity switch: use (b+h) instead of h in the inertial viscoelastic
    # friction-correction coefficients
    bed_offset_in_friction: bool = False

    def __post_init__(self):
        if not self.re > 0:
            raise ValueError(f"need re > 0, got {self.re}")
        if self.model in VISCOELASTIC_MODELS and not self.de > 0:
            raise ValueError(f"need de > 0 for viscoelastic models, got {self.de}")
        if not (0.0 <= self.theta_ve < 1.0):
            raise ValueError(f"need 0 <= theta_ve < 1, got {self.theta_ve}")
        if self.k_friction < 0:
            raise ValueError(f"need k_friction >= 0, got {self.k_friction}")
        if self.gamma < 0:
            raise ValueError(f"need gamma >= 0, got {self.gamma}")
        if not self.n_power > 0:
            raise ValueError(f"need n_power > 0, got {self.n_power}")
        if self.bi < 0:
            raise ValueError(f"need bi >= 0, got {self.bi}")
        if self.closure is Closure.FENEP:
            if not self.b_fene > 3:
                raise ValueError(f"need b_fene > 3 with FENEP closure, got {self.b_fene}")
            if self.model in (Model.VISCOELASTIC_INERTIAL_HW, Model.VISCOELASTIC_VISCOUS):
                raise ValueError(
                    f"FENEP closure is not available for model {self.model.value}"
                )

    def with_(self, **kw) -> "RheologyParams":
        return replace(self, **kw)


def assemble_sigma3(conf: ConformationState, cell: tuple[int, int]) -> np.ndarray:
    """Full 3x3 symmetric conformation tensor at one cell."""
    i, j = cell
    sxx, sxy, syy = conf.s_hh[i, j]
    sxz, syz = conf.s_hz[i, j]
    szz = conf.s_zz[i, j]
    return np.array(
        [
            [sxx, sxy, sxz],
            [sxy, syy, syz],
            [sxz, syz, szz],
        ]
    )


def spd_min_pivot(mat: np.ndarray) -> float:
    """Smallest Cholesky pivot; nonpositive means not SPD (within tolerance)."""
    a = mat.astype(float).copy()
    nn = a.shape[0]
    min_piv = np.inf
    for i in range(nn):
        piv = a[i, i]
        min_piv = min(min_piv, piv)
        if piv <= SPD_PIVOT_TOL:
            return min_piv
        a[i + 1 :, i + 1 :] -= np.outer(a[i + 1 :, i], a[i + 1 :, i]) / piv
    return min_piv


def min_conformation_pivot(conf: ConformationState) -> float:
    """Minimum Cholesky pivot of the assembled tensor over all cells.

    Vectorized 3x3 Cholesky pivots: p1 = sxx, p2 = syy - sxy^2/sxx,
    p3 = szz - ... (Schur complements).
    """
    sxx = conf.s_hh[..., 0]
    sxy = conf.s_hh[..., 1]
    syy = conf.s_hh[..., 2]
    sxz = conf.s_hz[..., 0]
    syz = conf.s_hz[..., 1]
    szz = conf.s_zz
    p1 = sxx
    safe1 = np.where(p1 > SPD_PIVOT_TOL, p1, 1.0)
    p2 = syy - sxy**2 / safe1
    safe2 = np.where(p2 > SPD_PIVOT_TOL, p2, 1.0)
    b2 = syz - sxy * sxz / safe1
    p3 = szz - sxz**2 / safe1 - b2**2 / safe2
    # pivots beyond a failed one are meaningless; mask them out
    p2 = np.where(p1 > SPD_PIVOT_TOL, p2, np.inf)
    p3 = np.where((p1 > SPD_PIVOT_TOL) & (p2 > SPD_PIVOT_TOL), p3, np.inf)
    return float(min(p1.min(), p2.min(), p3.min()))


def validate(
    state: ShallowState,
    conf: ConformationState | None,
    params: RheologyParams,
    drytol: float = 1e-14,
) -> list[str]:
    """Return the list of violated invariants (empty means valid).  Never mutates."""
    issues: list[str] = []
    if not np.all(np.isfinite(state.h)) or not np.all(np.isfinite(state.q)):
        issues.append("non-finite entries in shallow state")
        return issues
    if np.any(state.h < 0):
        idx = np.argwhere(state.h < 0)[0]
        issues.append(f"negative depth at cell {tuple(idx)}")
    dry = state.h <= drytol
    if np.any(dry & (np.abs(state.q).max(axis=-1) > drytol)):
        idx = np.argwhere(dry & (np.abs(state.q).max(axis=-1) > drytol))[0]
        issues.append(f"nonzero momentum in dry cell {tuple(idx)}")
    if conf is not None:
        if not (
            np.all(np.isfinite(conf.s_hh))
            and np.all(np.isfinite(conf.s_hz))
            and np.all(np.isfinite(conf.s_zz))
        ):
            issues.append("non-finite entries in conformation state")
            return issues
        sxx = conf.s_hh[..., 0]
        sxy = conf.s_hh[..., 1]
        syy = conf.s_hh[..., 2]
        sxz = conf.s_hz[..., 0]
        syz = conf.s_hz[..., 1]
        szz = conf.s_zz
        p1 = sxx
        ok1 = p1 > SPD_PIVOT_TOL
        safe1 = np.where(ok1, p1, 1.0)
        p2 = np.where(ok1, syy - sxy**2 / safe1, -np.inf)
        ok2 = p2 > SPD_PIVOT_TOL
        safe2 = np.where(ok2, p2, 1.0)
        b2 = syz - sxy * sxz / safe1
        p3 = np.where(ok1 & ok2, szz - sxz**2 / safe1 - b2**2 / safe2, -np.inf)
        bad = ~(ok1 & ok2 & (p3 > SPD_PIVOT_TOL))
        if np.any(bad):
            idx = np.argwhere(bad)[0]
            issues.append(f"conformation tensor not SPD at cell {tuple(idx)}")
        if params.closure is Closure.FENEP and np.isfinite(params.b_fene):
            over = conf.trace() >= params.b_fene
            if np.any(over):
                idx = np.argwhere(over)[0]
                issues.append(
                    f"conformation trace exceeds extensibility b_fene at cell {tuple(idx)}"
                )
    return issues


_SNAPSHOT_BASE = ("x", "y", "h", "qx", "qy")
_SNAPSHOT_CONF = ("sxx", "sxy", "syy", "shzx", "shzy", "szz")


def write_snapshot(path, grid: Grid2D, state: ShallowState, conf=None) -> None:
    """Snapshot CSV: x,y,h,qx,qy[,sxx,sxy,syy,shzx,shzy,szz], row-major."""
    X, Y = grid.cell_centers()
    cols = [X, Y, state.h, state.q[..., 0], state.q[..., 1]]
    header = list(_SNAPSHOT_BASE)
    if conf is not None:
        cols += [
            conf.s_hh[..., 0],
            conf.s_hh[..., 1],
            conf.s_hh[..., 2],
            conf.s_hz[..., 0],
            conf.s_hz[..., 1],
            conf.s_zz,
        ]
        header += list(_SNAPSHOT_CONF)
    data = np.stack([c.reshape(-1) for c in cols], axis=-1)
    with open(path, "w") as fh:
        fh.write(",".join(header) + "\n")
        for row in data:
            fh.write(",".join("%.17g" % v for v in row) + "\n")


def read_snapshot(path, grid: Grid2D):
    """Inverse of :func:`write_snapshot`; returns (state, conf-or-None)."""
    with open(path) as fh:
        header = fh.readline().strip().split(",")
        data = np.loadtxt(fh, delimiter=",", ndmin=2)
    if data.shape[0] != grid.nx * grid.ny:
        raise ValueError("snapshot row count does not match grid")
    shape = grid.shape
    col = {name: data[:, i].reshape(shape) for i, name in enumerate(header)}
    state = ShallowState(h=col["h"], q=np.stack([col["qx"], col["qy"]], axis=-1))
    conf = None
    if "sxx" in col:
        conf = ConformationState(
            s_hh=np.stack([col["sxx"], col["sxy"], col["syy"]], axis=-1),
            s_hz=np.stack([col["shzx"], col["shzy"]], axis=-1),
            s_zz=col["szz"],
        )
    return state, conf
