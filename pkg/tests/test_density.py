"""Pruebas de las medidas de densidad, los esquemas en diferencias y las sondas."""
from __future__ import annotations

import math

import numpy as np
import pytest

from phaselab.errors import DegenerateWindow, NoDecayWindow, OutOfDomain, UnsupportedAlpha
from phaselab.services.density import (
    CONSTANT_THRESHOLD,
    blocking_radius_estimate,
    boundary_distance,
    difference_scheme_check,
    exp_decay_probe,
    fit_exponent,
    growth_threshold,
    liouville_probe,
    lower_bound_check,
    minimal_sequence,
    minimal_shell_width,
    scan,
    shell_inequality_constant,
    sphere_area,
)
from phaselab.services.grid_field import Field, Grid, box_mask, constant_data, make_field
from phaselab.services.minimizer import DescentSchedule
from phaselab.services.potentials import PotentialSpec, product_well, two_well

RADII = np.linspace(10.0, 30.0, 9)
WELL = [1.0, 0.0]


@pytest.fixture(scope="module")
def planar_interface() -> Field:
    """Interfaz plana u = (tanh(√2·y), 0) entre los pozos (±1, 0) en [−32, 32]²."""
    grid = Grid.centered((129, 129), 0.5)
    y = grid.coordinates()[..., 1]
    values = np.stack([np.tanh(math.sqrt(2.0) * y), np.zeros_like(y)], axis=-1)
    return Field(grid, values, box_mask(grid))


@pytest.fixture(scope="module")
def planar_report(planar_interface: Field):
    spec = product_well([(-1.0, 0.0), (1.0, 0.0)])
    return scan(planar_interface, WELL, (0.0, 0.0), RADII, 0.5, spec, shell_width=2.5)


def test_planar_interface_growth_exponents(planar_report) -> None:
    """V_R crece como R² y J_R como R en torno a un punto de la interfaz."""
    volume = fit_exponent(planar_report.V, planar_report.radii)
    energy = fit_exponent(planar_report.J, planar_report.radii)
    assert 1.9 <= volume.exponent <= 2.1
    assert 0.9 <= energy.exponent <= 1.1
    assert volume.points == len(RADII)
    assert np.all(planar_report.modica <= planar_report.J)
    assert planar_report.V + planar_report.sublevel == pytest.approx(planar_report.ball)


def test_scan_frames(planar_report) -> None:
    frame = planar_report.to_frame()
    assert list(frame.columns[:4]) == ["R", "V", "A", "J"]
    assert len(frame) == len(RADII)
    shells = planar_report.shells_frame()
    assert len(shells) == 12
    assert shells["outer"].iloc[-1] == pytest.approx(30.0)
    assert planar_report.to_payload()["shell_width"] == 2.5


def test_scan_is_independent_of_threads(planar_interface: Field, planar_wells: PotentialSpec) -> None:
    radii = [2.0, 4.0, 6.0]
    serial = scan(planar_interface, WELL, (0.0, 0.0), radii, 0.5, planar_wells)
    threaded = scan(planar_interface, WELL, (0.0, 0.0), radii, 0.5, planar_wells, threads=3)
    assert np.array_equal(serial.V, threaded.V)
    assert np.array_equal(serial.J, threaded.J)


@pytest.mark.parametrize(
    "kwargs, error",
    [
        ({"radii": [40.0]}, OutOfDomain),
        ({"radii": [3.0, 2.0]}, ValueError),
        ({"radii": []}, ValueError),
        ({"lam": 0.0}, ValueError),
        ({"center": (0.0,)}, ValueError),
    ],
)
def test_scan_validation(planar_interface: Field, planar_wells: PotentialSpec, kwargs: dict, error) -> None:
    arguments = {"radii": [1.0, 2.0], "lam": 0.5, "center": (0.0, 0.0)}
    arguments.update(kwargs)
    with pytest.raises(error):
        scan(planar_interface, WELL, arguments["center"], arguments["radii"], arguments["lam"], planar_wells)


def test_fit_exponent_recovers_power_law() -> None:
    radii = np.array([1.0, 2.0, 4.0, 8.0, 16.0])
    fit = fit_exponent(3.0 * radii**2, radii)
    assert fit.exponent == pytest.approx(2.0)
    assert fit.intercept == pytest.approx(math.log(3.0))
    assert fit.residual < 1e-12
    assert fit.to_payload()["points"] == 5


def test_fit_exponent_drops_nonpositive_values() -> None:
    radii = np.arange(1.0, 7.0)
    values = radii**3
    values[0] = 0.0
    fit = fit_exponent(values, radii)
    assert fit.dropped == 1
    assert fit.exponent == pytest.approx(3.0)


def test_fit_exponent_requires_four_points() -> None:
    radii = np.arange(1.0, 7.0)
    with pytest.raises(DegenerateWindow):
        fit_exponent(radii, radii, window=(1.0, 3.0))
    with pytest.raises(ValueError):
        fit_exponent([1.0, 2.0], [1.0])


def test_difference_schemes_pass_on_planar_interface(planar_report) -> None:
    scheme = difference_scheme_check(planar_report)
    assert scheme.verdict == "PASS"
    assert scheme.caff_constant > 0.0
    assert scheme.basic_constant > 0.0
    assert len(scheme.pair_radii) == len(RADII) - 1
    assert scheme.c2 > 0.0
    assert set(scheme.to_frame()["kind"]) == {"caff", "basic"}


def test_growth_threshold_and_sphere_area() -> None:
    assert sphere_area(2) == pytest.approx(2.0 * math.pi)
    assert sphere_area(3) == pytest.approx(4.0 * math.pi)
    assert growth_threshold(1.0, 2) == pytest.approx(1.0 / 128.0)
    with pytest.raises(ValueError):
        growth_threshold(0.0, 2)


def test_minimal_shell_width_is_a_root() -> None:
    C0, c2, n = 1.0, 1.0, 2
    width = minimal_shell_width(C0, c2, n)
    target = C0 / 2.0 ** (n + 1) * (growth_threshold(C0, n) / n) ** ((n - 1.0) / n)

    def excess(t: float) -> float:
        eps = math.exp(-c2 * t)
        return sphere_area(n) * t**n * eps / (1.0 - eps) - target

    assert width > 0.0
    assert excess(width) == pytest.approx(0.0, abs=1e-9)
    assert excess(1.01 * width) < 0.0


def test_minimal_sequence_saturates_basic_scheme() -> None:
    omega = minimal_sequence(0.5, 1.0, 1.0, 2, count=8, omega1=1.0)
    assert omega[0] == 1.0
    assert np.all(omega >= 0.0)
    assert shell_inequality_constant(omega, 1.0, 1.0, 2) == pytest.approx(0.5, rel=1e-9)


def test_liouville_probe_verdicts(planar_interface: Field) -> None:
    grid = Grid.centered((21, 21), 0.1)
    constant = make_field(grid, box_mask(grid), 2, WELL)
    assert liouville_probe(constant, WELL).verdict == "CONSTANT"
    report = liouville_probe(planar_interface, WELL)
    assert report.verdict == "NONCONSTANT"
    assert report.innermost > CONSTANT_THRESHOLD
    assert report.to_payload()["depths"][0] == pytest.approx(0.5)


def test_exp_decay_probe_recovers_rate(scalar_two_well: PotentialSpec) -> None:
    """|u−a| = 0.4·e^{−2d} con d la distancia al borde."""
    grid = Grid.centered((41, 41), 0.1)
    f = make_field(grid, box_mask(grid), 1, [1.0])
    depth = boundary_distance(f)
    f = Field(grid, 1.0 - 0.4 * np.exp(-2.0 * depth), f.mask)
    fit = exp_decay_probe(f, [1.0], scalar_two_well)
    assert fit.k == pytest.approx(2.0, rel=1e-9)
    assert fit.K == pytest.approx(0.4, rel=1e-9)
    assert fit.points >= 4


def test_exp_decay_probe_failures(scalar_two_well: PotentialSpec) -> None:
    grid = Grid.centered((21, 21), 0.1)
    constant = make_field(grid, box_mask(grid), 1, [1.0])
    with pytest.raises(NoDecayWindow):
        exp_decay_probe(constant, [1.0], scalar_two_well)
    with pytest.raises(UnsupportedAlpha):
        exp_decay_probe(constant, [1.0], two_well(alpha=1.5))


def test_lower_bound_check(planar_report, planar_wells: PotentialSpec) -> None:
    report = lower_bound_check(planar_report)
    assert report.verdict == "PASS"
    assert report.constant > 0.0
    assert report.modica_below_energy
    grid = Grid.centered((21, 21), 0.1)
    constant = make_field(grid, box_mask(grid), 2, WELL)
    flat = scan(constant, WELL, (0.0, 0.0), [0.5, 0.8], 0.5, planar_wells)
    assert lower_bound_check(flat).verdict == "SKIPPED"


def test_blocking_radius_estimate(scalar_two_well: PotentialSpec) -> None:
    """Con u = 0 en el borde el centro sólo se acerca al pozo +1 si R supera π/2."""

    def builder(radius: float, sample: int) -> Field:
        count = int(round(2 * radius / 0.1)) + 1
        grid = Grid(shape=(count,), spacing=0.1, origin=(-radius,))
        return make_field(grid, box_mask(grid), 1, [0.5 + 0.25 * sample], constant_data([0.0]))

    estimate = blocking_radius_estimate(
        builder, [3.0, 1.0, 4.0], 0.1, [1.0], scalar_two_well, DescentSchedule(tol=1e-8), samples=2
    )
    assert estimate.radius == 3.0
    frame = estimate.to_frame()
    assert len(frame) == 6
    first = frame[frame["R"] == 1.0]["center_deviation"]
    assert np.all(first > 0.9)
