"""Pruebas del archivo de experimento y de los artefactos de cada comando."""
from __future__ import annotations

import json
import math
from pathlib import Path

import numpy as np
import pandas as pd
import pytest

from phaselab.errors import ConfigError, LambdaAboveThreshold, NoConvergence
from phaselab.services import connection1d
from phaselab.services.experiment import (
    ExperimentConfig,
    build_field,
    build_potential,
    load_config,
    parse_config_text,
    run_experiment,
)
from phaselab.services.potentials import two_well
from phaselab.services.snapshot import load_field

PLANAR = """
# Interfaz plana entre (±1, 0)
potential = product
wells = −1,0; 1,0
shape = 21,21
spacing = 0.5
bc = profile
bc_axis = 1
initial = profile
tol = 1e-6
"""

CONNECT = """
potential = twowell
L = 10
N = 401
directions = 4
qbar_scan = 0:0.1:0.05
"""


def _config(text: str, **extra: str) -> ExperimentConfig:
    lines = text + "".join(f"{key} = {value}\n" for key, value in extra.items())
    return parse_config_text(lines)


def test_parse_config_values() -> None:
    cfg = parse_config_text(
        "alpha = 1.5  # pozos intermedios\n"
        "spacing = 0.25\n"
        "radii = 1:3:0.5\n"
        "lambda = 0.3\n"
        "field = previo.fld\n"
        "eps_schedule = 0.4, 0.2\n"
        "probes = Liouville, decay\n"
        "center = −1, 0\n"
    )
    assert cfg.alpha == 1.5
    assert cfg.radii == pytest.approx([1.0, 1.5, 2.0, 2.5, 3.0])
    assert cfg.lam == 0.3
    assert cfg.snapshot == "previo.fld"
    assert cfg.eps_schedule == [0.4, 0.2]
    assert cfg.probes == ["liouville", "decay"]
    assert cfg.center == [-1.0, 0.0]


@pytest.mark.parametrize(
    "text, key",
    [
        ("unknown_key = 1\n", "unknown_key"),
        ("alpha = 1\nalpha = 2\n", "alpha"),
        ("spacing 0.1\n", "spacing"),
        ("shape = 4.5\n", "shape"),
        ("domain = sphere\n", "domain"),
        ("radii = 3:1:0.5\n", "radii"),
    ],
)
def test_parse_config_errors_name_the_key(text: str, key: str) -> None:
    with pytest.raises(ConfigError) as info:
        parse_config_text(text)
    assert info.value.key == key


@pytest.mark.parametrize("text", ["alpha = 3\n", "N = 2000\n", "bc = arcs\nshape = 41\n", "starts = 0\n"])
def test_parse_config_rejects_inconsistent_values(text: str) -> None:
    with pytest.raises(ConfigError):
        parse_config_text(text)


def test_resolved_text_is_a_fixed_point() -> None:
    """El resolved.cfg vuelve a leerse como la misma configuración."""
    cfg = _config(PLANAR, radii="1:4:0.5", probes="liouville")
    again = parse_config_text(cfg.resolved_text())
    assert again == cfg
    assert again.digest() == cfg.digest()
    assert "lambda =" in cfg.resolved_text()


def test_load_config_missing_file(tmp_path: Path) -> None:
    with pytest.raises(ConfigError):
        load_config(tmp_path / "no_existe.cfg")


def test_load_config_reads_file(write_config) -> None:
    cfg = load_config(write_config(CONNECT))
    assert cfg.potential == "twowell"
    assert cfg.qbar_scan == pytest.approx([0.0, 0.05, 0.1])


def test_build_potential_and_disk_mask_errors() -> None:
    with pytest.raises(ConfigError) as info:
        build_potential(_config("potential = product\n"))
    assert info.value.key == "potential"
    cfg = _config(PLANAR, domain="disk", radius="9")
    with pytest.raises(ConfigError) as info:
        build_field(cfg, build_potential(cfg))
    assert info.value.key == "radius"


def test_build_field_harmonic_start() -> None:
    cfg = _config("shape = 41\nspacing = 0.1\nbc = profile\nbc_axis = 0\n")
    f = build_field(cfg, build_potential(cfg))
    x = f.grid.axes()[0]
    # La extensión armónica en 1-D es la recta entre los valores de borde
    ends = f.values[[0, -1], 0]
    assert np.allclose(f.values[:, 0], np.interp(x, x[[0, -1]], ends))


def test_unknown_command(tmp_path: Path) -> None:
    with pytest.raises(ConfigError):
        run_experiment("plot", _config(PLANAR), output_dir=tmp_path)


@pytest.fixture(scope="module")
def planar_run(tmp_path_factory: pytest.TempPathFactory):
    target = tmp_path_factory.mktemp("solve")
    manifest = run_experiment("solve", _config(PLANAR), output_dir=target)
    return target, manifest


def test_solve_writes_artifacts(planar_run) -> None:
    target, manifest = planar_run
    for name in ("resolved.cfg", "solution.fld", "convergence.csv", "solve.json", "manifest.json"):
        assert (target / name).exists()
    assert manifest.outputs == ["resolved.cfg", "solution.fld", "convergence.csv", "solve.json"]
    summary = json.loads((target / "solve.json").read_text())
    assert summary["converged"]
    assert summary["residual"] <= 10 * summary["tolerance"]
    assert summary["symmetry_defect"] is not None
    stored = json.loads((target / "manifest.json").read_text())
    assert stored["config_hash"] == _config(PLANAR).digest()
    assert stored["command"] == "solve"
    solution = load_field(target / "solution.fld")
    assert solution.grid.shape == (21, 21)


def test_solve_is_byte_reproducible(planar_run, tmp_path: Path) -> None:
    target, _ = planar_run
    run_experiment("solve", _config(PLANAR), output_dir=tmp_path, threads=2)
    for name in ("resolved.cfg", "solution.fld", "convergence.csv", "solve.json"):
        assert (tmp_path / name).read_bytes() == (target / name).read_bytes()


def test_solve_without_convergence_keeps_best_iterate(tmp_path: Path) -> None:
    with pytest.raises(NoConvergence):
        run_experiment("solve", _config(PLANAR, max_iters="3"), output_dir=tmp_path)
    summary = json.loads((tmp_path / "solve.json").read_text())
    assert summary["converged"] is False
    assert summary["iterations"] == 3
    assert (tmp_path / "solution.fld").exists()


def test_measure_reads_previous_solution(planar_run, tmp_path: Path) -> None:
    target, _ = planar_run
    snapshot = str(target / "solution.fld")
    cfg = _config(PLANAR, well="1", radii="1:4:0.5", probes="lower_bound, liouville", field=snapshot)
    manifest = run_experiment("measure", cfg, output_dir=tmp_path)
    assert manifest.inputs == [snapshot]
    frame = pd.read_csv(tmp_path / "density.csv")
    assert len(frame) == 7
    summary = json.loads((tmp_path / "measure.json").read_text())
    assert set(summary["fits"]) == {"V", "J", "A"}
    assert "scheme" in summary
    assert summary["liouville"]["verdict"] == "NONCONSTANT"


def test_measure_without_snapshot(tmp_path: Path) -> None:
    with pytest.raises(FileNotFoundError):
        run_experiment("measure", _config(PLANAR), output_dir=tmp_path)


@pytest.fixture(scope="module")
def connect_run(tmp_path_factory: pytest.TempPathFactory):
    target = tmp_path_factory.mktemp("connect")
    run_experiment("connect", _config(CONNECT), output_dir=target)
    return target


def test_connect_reports_threshold(connect_run: Path) -> None:
    hyper = json.loads((connect_run / "hyperbolicity.json").read_text())
    assert hyper["eta"] == pytest.approx(1.5, rel=1e-2)
    wqq = json.loads((connect_run / "wqq.json").read_text())
    assert wqq["lambda_star"] > 0.0
    assert wqq["constants"]["c0"] == pytest.approx(0.5 * hyper["eta"])
    profile = load_field(connect_run / "connection.fld")
    assert profile.grid.shape == (401,)


def test_cyl_uses_connect_report(connect_run: Path, tmp_path: Path) -> None:
    cfg = _config(CONNECT, connect_report=str(connect_run / "wqq.json"), y_nodes="21")
    manifest = run_experiment("cyl", cfg, output_dir=tmp_path)
    assert str(connect_run / "wqq.json") in manifest.inputs
    summary = json.loads((tmp_path / "cyl.json").read_text())
    assert summary["lambda"] == pytest.approx(0.5 * summary["lambda_star"])
    assert summary["energy_excess"] == pytest.approx(0.0, abs=1e-9)
    assert summary["product"]["verdict"] == "RIGID"
    assert summary["relax"]["converged"]
    assert summary["relax"]["energy_increases"] == 0
    assert [check["l"] for check in summary["splice"]] == [2.5, 5.0]
    assert all(check["verdict"] == "PASS" for check in summary["splice"])
    assert "relax.csv" in manifest.outputs


def test_cyl_fails_when_relaxation_stalls(connect_run: Path, tmp_path: Path) -> None:
    cfg = _config(
        CONNECT, connect_report=str(connect_run / "wqq.json"), y_nodes="21", tol="1e-14", max_iters="2"
    )
    with pytest.raises(NoConvergence):
        run_experiment("cyl", cfg, output_dir=tmp_path)
    assert (tmp_path / "cylinder.fld").exists()
    assert (tmp_path / "relax.csv").exists()
    assert not (tmp_path / "cyl.json").exists()


def test_cyl_threshold_errors(connect_run: Path, tmp_path: Path) -> None:
    with pytest.raises(ConfigError):
        run_experiment("cyl", _config(CONNECT), output_dir=tmp_path)
    too_big = _config(CONNECT, connect_report=str(connect_run / "wqq.json"), **{"lambda": "100"})
    with pytest.raises(LambdaAboveThreshold):
        run_experiment("cyl", too_big, output_dir=tmp_path)


def test_link_small_disk(tmp_path: Path) -> None:
    cfg = _config(
        "potential = product\nwells = -1,0; 1,0\n",
        radius="1",
        spacing="0.1",
        eps_schedule="0.4, 0.2",
        tol="1e-6",
    )
    run_experiment("link", cfg, output_dir=tmp_path)
    table = pd.read_csv(tmp_path / "hausdorff.csv")
    assert list(table["eps"]) == [0.4, 0.2]
    assert "hausdorff_4eps" in table.columns
    summary = json.loads((tmp_path / "link.json").read_text())
    assert summary["chord"]["verdict"] == "PASS"
    assert summary["chord"]["length"] == pytest.approx(math.sqrt(3.0))
    assert summary["gamma"] == pytest.approx(1.0)
    assert (tmp_path / "levelset_eps0.2.csv").exists()


def test_link_requires_radius(tmp_path: Path) -> None:
    with pytest.raises(ConfigError):
        run_experiment("link", _config("potential = product\nwells = -1,0; 1,0\n"), output_dir=tmp_path)


def test_hypcheck_writes_report(tmp_path: Path) -> None:
    run_experiment("hypcheck", _config("potential = twowell\nsamples = 200\nrays = 8\n"), output_dir=tmp_path)
    summary = json.loads((tmp_path / "hypcheck.json").read_text())
    assert "hypotheses" in summary


def test_cylinder_blend_interpolates_connections() -> None:
    upper = connection1d.solve_connection(two_well(), 5.0, 101)
    blend = connection1d.cylinder_blend(upper, upper, 11, 0.5)
    assert blend.grid.shape == (101, 11)
    assert np.allclose(blend.values[:, 5, :], upper.values)
    with pytest.raises(ValueError):
        connection1d.cylinder_blend(upper, upper, 2, 0.5)
