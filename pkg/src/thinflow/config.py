"""TOML scenario configuration: strict parsing, validation, scenario assembly.

The config is strict: unknown sections or keys are rejected with a
nearest-known-key suggestion, and validation reports *every* violated
precondition at once.  Any key can be overridden from the environment as
``THINFLOW_<SECTION>_<KEY>`` (values parsed as TOML fragments, falling back to
plain strings).
"""

from __future__ import annotations

import difflib
import math
import os
try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from dataclasses import dataclass, field

import numpy as np

from .grid import (
    Forcing,
    Grid2D,
    Topography,
    forcing_from_angle,
    topography_from_csv,
    topography_from_profile,
)
from .state import (
    Closure,
    ConformationState,
    Model,
    RheologyParams,
    ShallowState,
    VISCOELASTIC_MODELS,
    read_snapshot,
)
from .stepping import StepControl

ENV_PREFIX = "THINFLOW"


class ConfigError(ValueError):
    """Raised for unparsable or invalid scenario configuration."""


#: section -> key -> expected python types
_SCHEMA: dict[str, dict[str, tuple[type, ...]]] = {
    "grid": {
        "nx": (int,),
        "ny": (int,),
        "dx": (int, float),
        "dy": (int, float),
        "bc_x": (str,),
        "bc_y": (str,),
    },
    "topography": {"profile": (str,), "csv": (str,)},
    "forcing": {"g": (int, float), "theta": (int, float), "theta_small": (bool,)},
    "initial": {"kind": (str,)},
    "params": {
        "model": (str,),
        "re": (int, float),
        "de": (int, float),
        "theta_ve": (int, float),
        "k_friction": (int, float),
        "gamma": (int, float),
        "n_power": (int, float),
        "bi": (int, float),
        "b_fene": (int, float),
        "closure": (str,),
        "bed_offset_in_friction": (bool,),
    },
    "control": {
        "cfl": (int, float),
        "dt_max": (int, float),
        "t_end": (int, float),
        "diffusion_safety": (int, float),
        "order": (int,),
    },
    "output": {"times": (list,), "directory": (str,), "log_every": (int,)},
    "audit": {
        "family": (str,),
        "eps": (list,),
        "nz": (int,),
        "dt_pair": (int, float),
    },
    "closure_table": {
        "h_min": (int, float),
        "h_max": (int, float),
        "n_points": (int,),
    },
}


@dataclass
class Scenario:
    """Everything needed to run one configured simulation."""

    grid: Grid2D
    topo: Topography
    forcing: Forcing
    state: ShallowState
    conf: ConformationState | None
    params: RheologyParams
    control: StepControl
    theta_small: bool = False
    output_times: tuple[float, ...] = ()
    outdir: str = "out"
    log_every: int = 1
    audit_options: dict = field(default_factory=dict)
    closure_table_options: dict = field(default_factory=dict)


def _suggest(key: str, known) -> str:
    known = list(known)
    if not known:
        return ""
    close = difflib.get_close_matches(key, known, n=1)
    if close:
        return f" (did you mean {close[0]!r}?)"
    nearest = max(known, key=lambda k: difflib.SequenceMatcher(None, key, k).ratio())
    return f" (nearest known key: {nearest!r})"


def _parse_env_value(text: str):
    try:
        return tomllib.loads(f"v = {text}")["v"]
    except tomllib.TOMLDecodeError:
        return text


def apply_env_overrides(raw: dict, environ=None) -> dict:
    """Fold THINFLOW_<SECTION>_<KEY> environment variables into the raw dict."""
    environ = os.environ if environ is None else environ
    for section in _SCHEMA:
        prefix = f"{ENV_PREFIX}_{section.upper()}_"
        for name, value in environ.items():
            if not name.startswith(prefix):
                continue
            key = name[len(prefix):].lower()
            if key not in _SCHEMA[section]:
                raise ConfigError(
                    f"environment override {name} names unknown key "
                    f"'{key}' in section [{section}]{_suggest(key, _SCHEMA[section])}"
                )
            raw.setdefault(section, {})[key] = _parse_env_value(value)
    return raw


def _check_schema(raw: dict) -> list[str]:
    errors = []
    for section, content in raw.items():
        if section not in _SCHEMA:
            errors.append(f"unknown section [{section}]{_suggest(section, _SCHEMA)}")
            continue
        if not isinstance(content, dict):
            errors.append(f"section [{section}] must be a table")
            continue
        for key, value in content.items():
            if key not in _SCHEMA[section]:
                errors.append(
                    f"unknown key '{key}' in section [{section}]"
                    f"{_suggest(key, _SCHEMA[section])}"
                )
                continue
            want = _SCHEMA[section][key]
            if isinstance(value, bool) and bool not in want:
                errors.append(f"[{section}].{key} must be {want[0].__name__}, got bool")
            elif not isinstance(value, want):
                errors.append(
                    f"[{section}].{key} must be {'/'.join(t.__name__ for t in want)}, "
                    f"got {type(value).__name__}"
                )
    return errors


def _validate(raw: dict) -> list[str]:
    """Collect every violated precondition (does not stop at the first)."""
    errors = []
    grid = raw.get("grid", {})
    for key in ("nx", "ny", "dx", "dy"):
        if key not in grid:
            errors.append(f"[grid].{key} is required")
    if grid.get("nx", 3) < 3 or grid.get("ny", 3) < 3:
        errors.append("need [grid].nx >= 3 and [grid].ny >= 3")
    if grid.get("dx", 1.0) <= 0 or grid.get("dy", 1.0) <= 0:
        errors.append("need [grid].dx > 0 and [grid].dy > 0")

    p = raw.get("params", {})
    model_name = p.get("model")
    model = None
    if model_name is None:
        errors.append("[params].model is required")
    else:
        try:
            model = Model(model_name)
        except ValueError:
            names = [m.value for m in Model]
            errors.append(
                f"unknown model {model_name!r}{_suggest(model_name, names)}"
            )
    closure = Closure.UCM
    if "closure" in p:
        try:
            closure = Closure(p["closure"])
        except ValueError:
            errors.append(f"unknown closure {p['closure']!r} (use 'UCM' or 'FENEP')")
    if not p.get("re", 1.0) > 0:
        errors.append(f"need re > 0, got {p['re']}")
    if model in VISCOELASTIC_MODELS and not p.get("de", 1.0) > 0:
        errors.append(f"need de > 0 for viscoelastic models, got {p['de']}")
    if not 0.0 <= p.get("theta_ve", 0.0) < 1.0:
        errors.append(f"need 0 <= theta_ve < 1, got {p['theta_ve']}")
    if p.get("k_friction", 0.0) < 0:
        errors.append(f"need k_friction >= 0, got {p['k_friction']}")
    if p.get("gamma", 0.0) < 0:
        errors.append(f"need gamma >= 0, got {p['gamma']}")
    if not p.get("n_power", 1.0) > 0:
        errors.append(f"need n_power > 0, got {p['n_power']}")
    if p.get("bi", 0.0) < 0:
        errors.append(f"need bi >= 0, got {p['bi']}")
    if closure is Closure.FENEP:
        if not p.get("b_fene", math.inf) > 3:
            errors.append(f"need b_fene > 3 with FENEP closure, got {p['b_fene']}")
        if model in (Model.VISCOELASTIC_INERTIAL_HW, Model.VISCOELASTIC_VISCOUS):
            errors.append(f"FENEP closure is not available for model {model.value}")

    c = raw.get("control", {})
    if not 0.0 < c.get("cfl", 0.45) <= 1.0:
        errors.append(f"need 0 < cfl <= 1, got {c['cfl']}")
    if c.get("t_end", 0.0) < 0:
        errors.append(f"need t_end >= 0, got {c['t_end']}")
    if not c.get("dt_max", 1.0) > 0:
        errors.append(f"need dt_max > 0, got {c['dt_max']}")
    if not c.get("diffusion_safety", 0.45) > 0:
        errors.append(f"need diffusion_safety > 0, got {c['diffusion_safety']}")
    if c.get("order", 2) not in (1, 2):
        errors.append(f"need order in (1, 2), got {c['order']}")

    out = raw.get("output", {})
    times = out.get("times", [])
    if not all(isinstance(t, (int, float)) and t >= 0 for t in times):
        errors.append("[output].times must be nonnegative numbers")
    if out.get("log_every", 1) < 1:
        errors.append("need [output].log_every >= 1")

    init = raw.get("initial", {})
    if "kind" not in init:
        errors.append("[initial].kind is required")

    topo = raw.get("topography", {})
    if "profile" in topo and "csv" in topo:
        errors.append("[topography] takes either 'profile' or 'csv', not both")

    aud = raw.get("audit", {})
    if "family" in aud:
        from .audit import SCENARIO_FAMILIES

        if aud["family"] not in SCENARIO_FAMILIES:
            errors.append(
                f"unknown audit family {aud['family']!r}"
                f"{_suggest(aud['family'], SCENARIO_FAMILIES)}"
            )
    if len(aud.get("eps", [0.1, 0.2, 0.3])) < 3:
        errors.append("[audit].eps needs at least 3 values")
    return errors


def build_initial(kind: str, grid: Grid2D, topo: Topography, params: RheologyParams):
    """Assemble (state, conf) from a named initial-condition spec.

    Kinds: "lake-at-rest[:level]", "dam-break:hl,hr,x0", "uniform:h,u",
    "bump:h0,amplitude,width", "csv:path".
    """
    name, _, args = kind.partition(":")
    X, Y = grid.cell_centers()
    conf = ConformationState.identity(grid) if params.model in VISCOELASTIC_MODELS else None
    if name == "lake-at-rest":
        level = float(args) if args else float(topo.b.max()) + 1.0
        h = np.maximum(level - topo.b, 0.0)
        return ShallowState(h=h, q=np.zeros(grid.shape + (2,))), conf
    if name == "dam-break":
        try:
            hl, hr, x0 = (float(v) for v in args.split(","))
        except ValueError:
            raise ConfigError(f"dam-break initial needs 'dam-break:hl,hr,x0', got {kind!r}")
        h = np.where(X < x0, hl, hr)
        return ShallowState(h=h, q=np.zeros(grid.shape + (2,))), conf
    if name == "uniform":
        try:
            h0, u0 = (float(v) for v in args.split(","))
        except ValueError:
            raise ConfigError(f"uniform initial needs 'uniform:h,u', got {kind!r}")
        state = ShallowState(h=np.full(grid.shape, h0), q=np.zeros(grid.shape + (2,)))
        state.q[..., 0] = h0 * u0
        return state, conf
    if name == "bump":
        try:
            h0, amp, width = (float(v) for v in args.split(","))
        except ValueError:
            raise ConfigError(f"bump initial needs 'bump:h0,amplitude,width', got {kind!r}")
        x0 = 0.5 * grid.nx * grid.dx
        y0 = 0.5 * grid.ny * grid.dy
        h = h0 + amp * np.exp(-((X - x0) ** 2 + (Y - y0) ** 2) / (2.0 * width**2))
        return ShallowState(h=h, q=np.zeros(grid.shape + (2,))), conf
    if name == "csv":
        if not args:
            raise ConfigError("csv initial needs 'csv:path'")
        state, file_conf = read_snapshot(args, grid)
        return state, file_conf if file_conf is not None else conf
    raise ConfigError(
        f"unknown initial kind {name!r}"
        f"{_suggest(name, ('lake-at-rest', 'dam-break', 'uniform', 'bump', 'csv'))}"
    )


def parse_config(path, environ=None) -> Scenario:
    """Read, override, validate and assemble a scenario configuration."""
    try:
        with open(path, "rb") as fh:
            raw = tomllib.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}")
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"config parse error in {path}: {exc}")

    raw = apply_env_overrides(raw, environ)
    errors = _check_schema(raw)
    if not errors:
        errors = _validate(raw)
    if errors:
        raise ConfigError(
            f"invalid config {path}:\n" + "\n".join(f"  - {e}" for e in errors)
        )
    try:
        return _assemble(raw, path)
    except ConfigError:
        raise
    except (ValueError, OSError) as exc:
        raise ConfigError(f"invalid config {path}: {exc}")


def _assemble(raw: dict, path) -> Scenario:
    g = raw["grid"]
    grid = Grid2D(
        nx=g["nx"], ny=g["ny"], dx=float(g["dx"]), dy=float(g["dy"]),
        bc_x=g.get("bc_x", "periodic"), bc_y=g.get("bc_y", "periodic"),
    )
    t = raw.get("topography", {})
    if "csv" in t:
        topo = topography_from_csv(grid, t["csv"])
    else:
        topo = topography_from_profile(grid, t.get("profile", "flat"))

    f = raw.get("forcing", {})
    forcing = forcing_from_angle(float(f.get("g", 1.0)), float(f.get("theta", 0.0)))
    theta_small = bool(f.get("theta_small", False))

    p = dict(raw["params"])
    p["model"] = Model(p["model"])
    if "closure" in p:
        p["closure"] = Closure(p["closure"])
    for key in ("re", "de", "theta_ve", "k_friction", "gamma", "n_power", "bi", "b_fene"):
        if key in p:
            p[key] = float(p[key])
    params = RheologyParams(**p)

    c = raw.get("control", {})
    control = StepControl(
        cfl=float(c.get("cfl", 0.45)),
        dt_max=float(c.get("dt_max", math.inf)),
        t_end=float(c.get("t_end", 0.0)),
        diffusion_safety=float(c.get("diffusion_safety", 0.45)),
        order=int(c.get("order", 2)),
    )

    state, conf = build_initial(raw["initial"]["kind"], grid, topo, params)

    out = raw.get("output", {})
    aud = dict(raw.get("audit", {}))
    ctab = dict(raw.get("closure_table", {}))
    return Scenario(
        grid=grid, topo=topo, forcing=forcing, state=state, conf=conf,
        params=params, control=control, theta_small=theta_small,
        output_times=tuple(float(v) for v in out.get("times", [])),
        outdir=out.get("directory", "out"),
        log_every=int(out.get("log_every", 1)),
        audit_options=aud, closure_table_options=ctab,
    )
