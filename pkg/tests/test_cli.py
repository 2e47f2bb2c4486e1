"""Command-line interface: exit codes, outputs, determinism."""

import subprocess
import sys

import pytest

from thinflow.cli import main

SMALL_RUN = """
[grid]
nx = 8
ny = 4
dx = 0.125
dy = 0.25

[topography]
profile = "bump:0.1,0.15"

[params]
model = "NewtonianInertial"
re = 50.0
k_friction = 0.2

[initial]
kind = "lake-at-rest:0.4"

[control]
t_end = 0.05
cfl = 0.4

[output]
times = [0.025, 0.05]
directory = "{outdir}"
log_every = 5
"""


def write_config(tmp_path, text, **fmt):
    path = tmp_path / "scenario.toml"
    path.write_text(text.format(**fmt))
    return path


@pytest.fixture
def run_config(tmp_path):
    return write_config(tmp_path, SMALL_RUN, outdir=tmp_path / "out")


def test_run_success_writes_snapshots_and_log(run_config, tmp_path, capsys):
    assert main(["run", str(run_config)]) == 0
    out = tmp_path / "out"
    names = sorted(p.name for p in out.iterdir())
    assert names == ["run_log.csv", "snapshot_000.csv", "snapshot_001.csv", "snapshot_002.csv"]
    log = (out / "run_log.csv").read_text().splitlines()
    assert log[0] == "t,dt,mass,min_h,max_speed,min_sigma_eig"
    stdout = capsys.readouterr().out
    assert "snapshot_002.csv" in stdout and "mass drift" in stdout


def test_run_outputs_are_deterministic(run_config, tmp_path):
    out = tmp_path / "out"
    assert main(["run", str(run_config)]) == 0
    first = {p.name: p.read_bytes() for p in out.iterdir()}
    assert main(["run", str(run_config)]) == 0
    second = {p.name: p.read_bytes() for p in out.iterdir()}
    assert first == second


def test_missing_subcommand_is_usage_error(capsys):
    assert main([]) == 1
    assert "usage" in capsys.readouterr().err


def test_unknown_subcommand_is_usage_error(capsys):
    assert main(["frobnicate"]) == 1
    assert "error" in capsys.readouterr().err


def test_bad_threads_is_usage_error(run_config, capsys):
    assert main(["--threads", "0", "run", str(run_config)]) == 1
    assert "--threads" in capsys.readouterr().err


def test_threads_accepted(run_config):
    assert main(["--threads", "2", "run", str(run_config)]) == 0


def test_invalid_config_exits_2(tmp_path, capsys):
    path = tmp_path / "bad.toml"
    path.write_text("[grid]\nnx = 2\n")
    assert main(["run", str(path)]) == 2
    err = capsys.readouterr().err
    assert "invalid config" in err
    assert main(["run", str(tmp_path / "absent.toml")]) == 2


def test_numerical_failure_exits_3(tmp_path, capsys):
    # a huge forced time step on a near-dry film drives the depth negative
    import numpy as np

    from thinflow.grid import Grid2D
    from thinflow.state import ShallowState, write_snapshot

    grid = Grid2D(nx=8, ny=4, dx=0.125, dy=0.25)
    X = (np.arange(8)[:, None] + 0.5) * 0.125 * np.ones((1, 4))
    h = 0.02 + 0.019 * np.sin(2 * np.pi * X)
    init = tmp_path / "near_dry.csv"
    write_snapshot(init, grid, ShallowState(h=h, q=np.zeros((8, 4, 2))), None)

    text = SMALL_RUN.replace('cfl = 0.4', 'cfl = 0.4\ndt_max = 1e4\ndiffusion_safety = 1e9') \
        .replace('t_end = 0.05', 't_end = 1e5') \
        .replace('times = [0.025, 0.05]', 'times = []') \
        .replace('profile = "bump:0.1,0.15"', 'profile = "flat"') \
        .replace('kind = "lake-at-rest:0.4"', 'kind = "csv:INITCSV"') \
        .replace('model = "NewtonianInertial"', 'model = "NewtonianViscous"') \
        .replace('re = 50.0', 're = 1.0') \
        .replace('k_friction = 0.2', 'k_friction = 1.0') \
        .replace("INITCSV", str(init)) + "\n[forcing]\ntheta_small = true\n"
    path = write_config(tmp_path, text, outdir=tmp_path / "out3")
    assert main(["run", str(path)]) == 3
    assert "numerical failure" in capsys.readouterr().err


def test_reconstruct_writes_extrusion(run_config, tmp_path, capsys):
    assert main(["reconstruct", str(run_config), "--at", "0.02"]) == 0
    path = tmp_path / "out" / "extrusion_t0.02.csv"
    assert path.exists()
    header = path.read_text().splitlines()[0]
    assert header == "x,y,z,ux,uy,uz,p,Txx,Txy,Tyy,Txz,Tyz,Tzz"
    assert "layers" in capsys.readouterr().out


def test_audit_subcommand(tmp_path, capsys):
    text = SMALL_RUN + """
[audit]
family = "newtonian-inertial"
eps = [0.125, 0.0625, 0.03125]
"""
    path = write_config(tmp_path, text, outdir=tmp_path / "out_aud")
    assert main(["audit", str(path)]) == 0
    summary = (tmp_path / "out_aud" / "audit_summary.csv").read_text().splitlines()
    assert summary[0] == "residual_name,fitted_order,expected,pass"
    assert all(line.endswith(",PASS") for line in summary[1:])
    sweep = (tmp_path / "out_aud" / "audit_sweep.csv").read_text().splitlines()
    assert sweep[0] == "epsilon,residual_name,sup_norm"
    stdout = capsys.readouterr().out
    assert "PASS" in stdout and "FAIL" not in stdout


def test_closure_table_viscous(tmp_path, capsys):
    text = SMALL_RUN.replace('model = "NewtonianInertial"', 'model = "NewtonianViscous"') \
        .replace('re = 50.0', 're = 1.0') + """
[closure_table]
h_min = 0.1
h_max = 0.5
n_points = 5
"""
    path = write_config(tmp_path, text, outdir=tmp_path / "out_tab")
    assert main(["closure-table", str(path)]) == 0
    lines = (tmp_path / "out_tab" / "closure_table.csv").read_text().splitlines()
    assert lines[0] == "h,discharge"
    assert len(lines) == 6
    h, q = (float(v) for v in lines[1].split(","))
    assert h == 0.1 and q == pytest.approx(0.1**3 / 3 + 0.1**2 / 0.2)


def test_closure_table_inertial_slip_factor(run_config, tmp_path):
    assert main(["closure-table", str(run_config)]) == 0
    lines = (tmp_path / "out" / "closure_table.csv").read_text().splitlines()
    assert lines[0] == "h,slip_factor"
    h, s = (float(v) for v in lines[1].split(","))
    assert s == pytest.approx(1.0 - 50.0 * 0.2 * h / 3.0)


def test_module_entry_point(run_config, tmp_path):
    proc = subprocess.run(
        [sys.executable, "-m", "thinflow.cli", "run", str(run_config)],
        capture_output=True, text=True,
    )
    assert proc.returncode == 0, proc.stderr
    assert "done:" in proc.stdout
