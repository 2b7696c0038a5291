"""Pruebas del flujo gradiente, la clase simétrica y los arranques múltiples."""
from __future__ import annotations

import logging
import math

import numpy as np
import pytest

from phaselab.errors import NoConvergence
from phaselab.services.grid_field import (
    Field,
    Grid,
    RegionMask,
    box_mask,
    constant_data,
    disk_mask,
    energy,
    make_field,
    profile_data,
)
from phaselab.services.minimizer import (
    DescentSchedule,
    MinimalityAudit,
    audit_minimality,
    descend,
    descend_symmetric,
    multistart,
    stability_bound,
    symmetry_defect,
    symmetry_projector,
)
from phaselab.services.potentials import PotentialSpec, two_well


def _interval_problem(h: float = 0.1, half: float = 8.0) -> Field:
    count = int(round(2 * half / h)) + 1
    grid = Grid(shape=(count,), spacing=h, origin=(-half,))
    data = profile_data([-1.0], [1.0], 1.0, axis=0)
    return make_field(grid, box_mask(grid), 1, data, data)


def test_schedule_validation() -> None:
    with pytest.raises(ValueError):
        DescentSchedule(dt0=-1.0)
    with pytest.raises(ValueError):
        DescentSchedule(dt_rule="armijo")
    with pytest.raises(ValueError):
        DescentSchedule(tol=0.0)


def test_descend_recovers_tanh_profile(scalar_two_well: PotentialSpec) -> None:
    """El flujo converge al perfil tanh(s/√2) con energía monótona."""
    f0 = _interval_problem()
    result, log = descend(f0, scalar_two_well, DescentSchedule(tol=1e-8, log_every=10))
    assert log.converged
    s = result.grid.axes()[0]
    assert np.max(np.abs(result.values[:, 0] - np.tanh(s / math.sqrt(2.0)))) < 5e-3
    assert np.all(np.diff(log.energies) <= 1e-12 * abs(log.energies[0]))
    assert log.final_residual <= 1e-8
    assert log.monotone
    assert list(log.to_frame().columns) == ["iter", "dt", "energy", "residual", "energy_increase"]
    assert not log.to_frame()["energy_increase"].any()


def test_descend_marks_accepted_energy_increases(scalar_two_well: PotentialSpec, caplog) -> None:
    """En el suelo de dt el paso se acepta aunque la energía suba, y queda marcado."""
    f0 = _interval_problem(h=0.2)
    shift = 0.01 * f0.interior[..., None]
    sched = DescentSchedule(tol=1e-12, max_iters=3, log_every=100)
    with caplog.at_level(logging.WARNING):
        _, log = descend(f0, scalar_two_well, sched, project=lambda v: v + shift, raise_on_failure=False)
    assert not log.monotone
    assert [step for step, _ in log.increases] == [1, 2, 3]
    assert all(delta > 0.0 for _, delta in log.increases)
    assert log.rejected > 0
    frame = log.to_frame()
    assert list(frame.loc[frame["energy_increase"], "iter"]) == [1, 2, 3]
    assert "la energía sube" in caplog.text


def test_descend_keeps_dirichlet_nodes(scalar_two_well: PotentialSpec) -> None:
    f0 = _interval_problem(h=0.2)
    result, _ = descend(f0, scalar_two_well, DescentSchedule(tol=1e-6))
    assert np.array_equal(result.bc, f0.bc)


def test_descend_raises_without_convergence(scalar_two_well: PotentialSpec) -> None:
    f0 = _interval_problem()
    with pytest.raises(NoConvergence) as info:
        descend(f0, scalar_two_well, DescentSchedule(max_iters=5))
    assert info.value.best is not None
    assert info.value.log.iterations == 5


def test_descend_can_return_best_iterate(scalar_two_well: PotentialSpec) -> None:
    f0 = _interval_problem()
    result, log = descend(f0, scalar_two_well, DescentSchedule(max_iters=5), raise_on_failure=False)
    assert not log.converged
    region = RegionMask.everything(f0)
    assert energy(result, region, scalar_two_well) <= energy(f0, region, scalar_two_well)


def test_descend_clamps_unstable_step(scalar_two_well: PotentialSpec, caplog: pytest.LogCaptureFixture) -> None:
    f0 = _interval_problem(h=0.2)
    bound = stability_bound(f0)
    with caplog.at_level(logging.WARNING):
        _, log = descend(f0, scalar_two_well, DescentSchedule(dt0=10 * bound, tol=1e-6))
    assert log.converged
    assert any("estabilidad" in record.getMessage() for record in caplog.records)


def test_descend_rejects_component_mismatch(planar_wells: PotentialSpec) -> None:
    with pytest.raises(ValueError):
        descend(_interval_problem(), planar_wells, DescentSchedule())


def test_descend_symmetric_preserves_reflection(planar_wells: PotentialSpec) -> None:
    """Con dato simétrico el resultado satisface u(x̂) = û(x)."""
    grid = Grid.centered((21, 11), 0.2)
    data = profile_data([-1.0, 0.0], [1.0, 0.0], 0.5, axis=0)
    f0 = make_field(grid, box_mask(grid), 2, data, data)
    result, log = descend_symmetric(f0, planar_wells, DescentSchedule(tol=1e-7))
    assert log.converged
    assert symmetry_defect(result) <= 1e-12


def test_descend_symmetric_rejects_asymmetric_data(planar_wells: PotentialSpec) -> None:
    grid = Grid.centered((11, 11), 0.2)
    f0 = make_field(grid, box_mask(grid), 2, [1.0, 0.0], constant_data([1.0, 0.0]))
    with pytest.raises(ValueError):
        descend_symmetric(f0, planar_wells, DescentSchedule())


def test_symmetry_projector_requires_symmetric_grid() -> None:
    grid = Grid(shape=(5, 5), spacing=1.0, origin=(0.0, -2.0))
    with pytest.raises(ValueError):
        symmetry_projector(make_field(grid, box_mask(grid), 1, 0.0))


def test_multistart_noise_starts_converge_to_the_well(scalar_two_well: PotentialSpec) -> None:
    """Dato de borde constante: todos los arranques ruidosos vuelven a u ≡ a."""
    grid = Grid.centered((21, 21), 0.1)
    f0 = make_field(grid, disk_mask(grid, (0.0, 0.0), 0.8), 1, [1.0], constant_data([1.0]))
    result = multistart(f0, scalar_two_well, DescentSchedule(tol=1e-8, seed=0), starts=4, noise=0.1, threads=2)
    assert all(result.converged)
    assert len(result.energies) == 4
    for field in result.fields:
        assert np.max(np.abs(field.values[field.nonexterior] - 1.0)) <= 1e-6
    assert 0 <= result.index < 4


def test_multistart_is_reproducible(scalar_two_well: PotentialSpec) -> None:
    f0 = _interval_problem(h=0.2)
    sched = DescentSchedule(tol=1e-6, seed=11)
    first = multistart(f0, scalar_two_well, sched, starts=3, noise=0.05)
    second = multistart(f0, scalar_two_well, sched, starts=3, noise=0.05, threads=3)
    assert first.energies == second.energies
    assert np.array_equal(first.best.values, second.best.values)


def test_audit_minimality_passes_on_converged_profile(scalar_two_well: PotentialSpec) -> None:
    result, _ = descend(_interval_problem(), scalar_two_well, DescentSchedule(tol=1e-9))
    report = audit_minimality(result, scalar_two_well, MinimalityAudit(trials=10, radius=1.0, amplitude=0.01))
    assert report.verdict == "PASS"
    assert report.to_payload()["trials"] == 10


def test_audit_minimality_flags_a_saddle() -> None:
    """u ≡ 0 es crítico para el doble pozo pero no minimizante."""
    spec = two_well()
    grid = Grid(shape=(81,), spacing=0.1, origin=(-4.0,))
    f = make_field(grid, box_mask(grid), 1, 0.0)
    report = audit_minimality(f, spec, MinimalityAudit(trials=5, radius=3.5, amplitude=0.05))
    assert report.verdict == "FAIL"
    assert report.min_delta < 0.0
