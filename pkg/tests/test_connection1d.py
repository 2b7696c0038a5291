"""Pruebas de la conexión unidimensional, la hiperbolicidad y el cilindro."""
from __future__ import annotations

import logging
import math

import numpy as np
import pytest

from phaselab.errors import (
    LambdaAboveThreshold,
    NoConvergence,
    NonAdmissible,
    NotHyperbolic,
    OutOfDomain,
    TruncationMismatch,
    TruncationTooShort,
    UnsupportedAlpha,
)
from phaselab.services.connection1d import (
    ConnectionProfile,
    action,
    connection_candidates,
    cyl_density_scan,
    cyl_polar,
    cylinder_blend,
    cylinder_energy_excess,
    cylinder_splice_check,
    effective_potential,
    fit_tail,
    hyperbolicity,
    interp_bound_check,
    l2_norm,
    product_structure_probe,
    quadratic_form,
    relax_cylinder,
    second_derivative,
    solve_connection,
    splice,
    splice_check,
    symmetric_bumps,
    wqq_check,
)
from phaselab.services.density import fit_exponent
from phaselab.services.grid_field import Field, Grid, box_mask, cell_layer_bound
from phaselab.services.minimizer import DescentSchedule
from phaselab.services.potentials import PotentialSpec, product_well, two_path, two_well

TANH_ACTION = 2.0 * math.sqrt(2.0) / 3.0


@pytest.fixture(scope="module")
def tanh_connection() -> ConnectionProfile:
    return solve_connection(two_well(), L=10.0, N=2001)


@pytest.fixture(scope="module")
def coarse_connection() -> ConnectionProfile:
    return solve_connection(two_well(), L=10.0, N=401)


@pytest.fixture(scope="module")
def curved_pair():
    """Conexiones curvas e₋ y e₊ del potencial de dos caminos."""
    spec = two_path(gamma=0.9, mu=0.1)
    lower = solve_connection(spec, L=10.0, N=401, branch=-1.0)
    upper = solve_connection(spec, L=10.0, N=401, branch=1.0)
    return spec, lower, upper


def test_tanh_profile_and_action(tanh_connection: ConnectionProfile) -> None:
    """La conexión del doble pozo es tanh(s/√2) con acción 2√2/3."""
    exact = np.tanh(tanh_connection.s / math.sqrt(2.0))
    assert np.max(np.abs(tanh_connection.values[:, 0] - exact)) <= 1e-4
    assert tanh_connection.action == pytest.approx(TANH_ACTION, rel=1e-4)
    assert tanh_connection.symmetry_defect() <= 1e-12
    assert tanh_connection.residual <= 1e-9


def test_tail_rate_matches_well_curvature(tanh_connection: ConnectionProfile) -> None:
    k, K = tanh_connection.tail
    assert k == pytest.approx(math.sqrt(2.0), rel=0.05)
    assert K > 0.0
    payload = tanh_connection.to_payload()
    assert payload["N"] == 2001
    assert payload["a_plus"] == [1.0]


def test_fit_tail_rejects_slow_tails(scalar_two_well: PotentialSpec) -> None:
    s = np.linspace(-10.0, 10.0, 201)
    profile = ConnectionProfile(
        L=10.0,
        N=201,
        values=np.tanh(0.1 * s)[:, None],
        wells=(np.array([-1.0]), np.array([1.0])),
        action=0.0,
        spec=scalar_two_well,
    )
    with pytest.raises(TruncationTooShort):
        fit_tail(profile)


def test_solve_connection_validation(scalar_two_well: PotentialSpec) -> None:
    with pytest.raises(ValueError):
        solve_connection(scalar_two_well, L=10.0, N=100)
    with pytest.raises(ValueError):
        solve_connection(scalar_two_well, L=0.0, N=101)
    with pytest.raises(UnsupportedAlpha):
        solve_connection(two_well(alpha=1.5), L=10.0, N=101)
    with pytest.raises(ValueError):
        solve_connection(product_well([(0.0,), (1.0,)]), L=10.0, N=101)


def test_solve_connection_reports_best_iterate(scalar_two_well: PotentialSpec) -> None:
    with pytest.raises(NoConvergence) as info:
        solve_connection(scalar_two_well, L=10.0, N=201, max_iters=1)
    best = info.value.best
    assert isinstance(best, ConnectionProfile)
    assert best.iterations == 1


def test_profile_field_round_trip(coarse_connection: ConnectionProfile, scalar_two_well: PotentialSpec) -> None:
    restored = ConnectionProfile.from_field(coarse_connection.to_field(), scalar_two_well)
    assert restored.action == coarse_connection.action
    assert np.array_equal(restored.values, coarse_connection.values)
    outside = restored.sample(np.array([-20.0, 20.0]))
    assert outside[:, 0].tolist() == [-1.0, 1.0]


def test_connection_candidates_agree_for_scalar_wells(scalar_two_well: PotentialSpec) -> None:
    profiles, frame = connection_candidates(scalar_two_well, L=8.0, N=201)
    assert len(profiles) == 3
    assert frame["sup_gap"].max() <= 1e-8


def test_action_flags_non_admissible_curves(
    coarse_connection: ConnectionProfile, scalar_two_well: PotentialSpec, caplog: pytest.LogCaptureFixture
) -> None:
    assert action(coarse_connection).admissible
    shifted = coarse_connection.values + 0.01
    with caplog.at_level(logging.WARNING):
        value = action(shifted, scalar_two_well, coarse_connection.spacing)
    assert not value.admissible
    assert float(value) > 0.0
    assert any("no admisible" in record.getMessage() for record in caplog.records)


def test_effective_potential(coarse_connection: ConnectionProfile) -> None:
    at_e = effective_potential(coarse_connection.values, coarse_connection)
    assert at_e.value == pytest.approx(0.0, abs=1e-14)
    assert at_e.q == 0.0
    assert not np.any(at_e.nu)
    nu = symmetric_bumps(coarse_connection, 1, seed=4)[0]
    moved = effective_potential(coarse_connection.values + 0.01 * nu, coarse_connection)
    assert moved.q == pytest.approx(0.01)
    assert moved.value > 0.0
    with pytest.raises(NonAdmissible):
        effective_potential(coarse_connection.values + 0.01, coarse_connection)


def test_hyperbolicity_matches_dense_spectrum(coarse_connection: ConnectionProfile) -> None:
    """En la clase impar el menor autovalor es el segundo del operador completo (≈ 3/2)."""
    report = hyperbolicity(coarse_connection)
    assert report.eta >= 0.1
    h = coarse_connection.spacing
    size = coarse_connection.N - 2
    second = (2.0 * np.eye(size) - np.eye(size, k=1) - np.eye(size, k=-1)) / h**2
    u = coarse_connection.values[1:-1, 0]
    dense = np.linalg.eigvalsh(second + np.diag(3.0 * u**2 - 1.0))
    assert report.eta == pytest.approx(dense[1], rel=1e-2)
    assert report.eta == pytest.approx(1.5, rel=1e-2)
    vector = report.eigenvector[:, 0]
    assert np.allclose(vector, -vector[::-1])
    assert float(l2_norm(report.eigenvector, h)) == pytest.approx(1.0)


def test_hyperbolicity_detects_negative_spectrum(coarse_connection: ConnectionProfile) -> None:
    def unstable(values: np.ndarray) -> np.ndarray:
        return np.full(values.shape[:1] + (1, 1), -5.0)

    with pytest.raises(NotHyperbolic) as info:
        hyperbolicity(coarse_connection, hessian_override=unstable)
    assert info.value.eta < 0.0
    report = hyperbolicity(coarse_connection, hessian_override=unstable, strict=False)
    assert report.eta < 0.0


def test_second_derivative_matches_quadratic_form(coarse_connection: ConnectionProfile) -> None:
    """D_qq𝒲(e) coincide con ⟨Tν, ν⟩ para direcciones simétricas."""
    for nu in symmetric_bumps(coarse_connection, 16, seed=1):
        numeric = second_derivative(coarse_connection, nu, 0.0, 1e-3)
        exact = quadratic_form(coarse_connection, nu)
        assert numeric == pytest.approx(exact, rel=1e-3)


def test_wqq_check_sets_lambda_star(coarse_connection: ConnectionProfile) -> None:
    report = wqq_check(coarse_connection, directions=4, qbar_scan=[0.0, 0.05, 0.1], threads=2)
    assert report.c0 == pytest.approx(0.5 * report.eta)
    assert report.min_dqq[0] >= 0.999 * report.eta
    assert report.lam_star == report.qbar
    assert report.qbar in report.scan
    assert list(report.to_frame().columns) == ["q", "min_Dqq"]
    assert report.to_payload()["lambda_star"] == report.qbar


def test_wqq_check_validation(coarse_connection: ConnectionProfile) -> None:
    with pytest.raises(NotHyperbolic):
        wqq_check(coarse_connection, eta=-0.1)
    with pytest.raises(ValueError):
        wqq_check(coarse_connection, eta=1.0, qbar_scan=[0.2, 0.1])


def test_interpolation_bounds_hold_for_sech() -> None:
    """sech cumple |v| + |v_s| ≤ 4 e^{−|s|}; la cota 2/3 usa C = (3K)^{1/3}."""
    s = np.linspace(-20.0, 20.0, 4001)
    report = interp_bound_check(1.0 / np.cosh(s), s[1] - s[0], tail=(1.0, 4.5))
    assert report.exp_class
    assert report.verdict == "PASS"
    assert report.two_thirds_constant == pytest.approx(13.5 ** (1.0 / 3.0))
    assert report.two_thirds_rhs == pytest.approx(13.5 ** (1.0 / 3.0) * 2.0 ** (1.0 / 3.0), rel=1e-4)
    assert report.empirical_constant != report.two_thirds_constant
    assert report.l2 == pytest.approx(math.sqrt(2.0), rel=1e-4)
    assert report.grad_l2 == pytest.approx(math.sqrt(2.0 / 3.0), rel=1e-3)
    assert report.to_payload()["K"] == 4.5


def test_interpolation_check_requires_exponential_class(caplog: pytest.LogCaptureFixture) -> None:
    s = np.linspace(-20.0, 20.0, 4001)
    with caplog.at_level(logging.WARNING):
        report = interp_bound_check(1.0 / np.cosh(s), s[1] - s[0], tail=(2.0, 2.0))
    assert not report.exp_class
    assert report.sqrt2_holds
    assert report.verdict == "FAIL"
    assert "no cumple" in caplog.text
    with pytest.raises(ValueError):
        interp_bound_check(1.0 / np.cosh(s), s[1] - s[0], tail=(1.0, 0.0))


def test_interpolation_check_without_tail_uses_envelope_sup() -> None:
    s = np.linspace(-20.0, 20.0, 4001)
    report = interp_bound_check(1.0 / np.cosh(s), s[1] - s[0])
    assert report.k == 0.0
    assert report.exp_class
    assert report.verdict == "PASS"


def _product_cylinder(e: ConnectionProfile, y_nodes: int = 21) -> Field:
    grid = Grid(shape=(e.N, y_nodes), spacing=e.spacing, origin=(-e.L, -0.5 * (y_nodes - 1) * e.spacing))
    values = np.repeat(e.values[:, None, :], y_nodes, axis=1)
    return Field(grid, values, box_mask(grid))


def test_product_cylinder_has_no_excess(coarse_connection: ConnectionProfile) -> None:
    u = _product_cylinder(coarse_connection)
    polar = cyl_polar(u, coarse_connection)
    assert np.all(polar.q == 0.0)
    assert polar.modified_energy() == pytest.approx(0.0, abs=1e-12)
    assert cylinder_energy_excess(u, coarse_connection) == pytest.approx(0.0, abs=1e-10)
    assert product_structure_probe(u, coarse_connection).verdict == "RIGID"


def test_cylinder_rejects_mismatched_truncation(coarse_connection: ConnectionProfile) -> None:
    grid = Grid(shape=(101, 11), spacing=coarse_connection.spacing, origin=(-coarse_connection.L, -0.25))
    u = Field(grid, np.zeros(grid.shape + (1,)), box_mask(grid))
    with pytest.raises(TruncationMismatch):
        cyl_polar(u, coarse_connection)


def test_curved_connections_are_hyperbolic_mirror_images(curved_pair) -> None:
    spec, lower, upper = curved_pair
    assert upper.values[lower.N // 2, 1] > 0.0
    assert np.allclose(lower.values[:, 1], -upper.values[:, 1])
    assert lower.action == pytest.approx(upper.action, rel=1e-10)
    assert hyperbolicity(upper).eta > 0.0
    straight = solve_connection(spec, L=10.0, N=401)
    assert straight.action > upper.action
    with pytest.raises(NotHyperbolic):
        hyperbolicity(straight)


@pytest.fixture(scope="module")
def relaxed_curved_cylinder():
    """Cilindro relajado con e₋ en y = −Y y e₊ en y = +Y (h = 0.2)."""
    spec = two_path(gamma=0.9, mu=0.1)
    lower = solve_connection(spec, L=10.0, N=101, branch=-1.0)
    upper = solve_connection(spec, L=10.0, N=101, branch=1.0)
    blend = cylinder_blend(lower, upper, y_nodes=91, width=0.5)
    u, log = relax_cylinder(blend, upper, DescentSchedule(tol=1e-7, max_iters=400_000))
    return spec, lower, upper, blend, u, log


def test_cylinder_density_between_two_connections(relaxed_curved_cylinder) -> None:
    """Sobre el cilindro relajado: 𝒱_R ~ R y energía modificada acotada."""
    _, lower, upper, _, u, log = relaxed_curved_cylinder
    assert log.converged
    assert log.final_residual <= 1e-7
    lam = 0.5 * float(l2_norm(lower.values - upper.values, upper.spacing))
    radii = np.round(5.25 + 0.4 * np.arange(8), 10)
    report = cyl_density_scan(u, upper, (0.0,), radii, lam)
    assert np.allclose(np.diff(report.V), np.diff(report.radii))
    assert 0.9 <= fit_exponent(report.V, report.radii).exponent <= 1.1
    assert fit_exponent(report.J, report.radii).exponent <= 0.2
    assert product_structure_probe(u, upper).verdict == "NONRIGID"


def test_cylinder_density_reports_cell_layer(relaxed_curved_cylinder) -> None:
    _, lower, upper, _, u, _ = relaxed_curved_cylinder
    lam = 0.5 * float(l2_norm(lower.values - upper.values, upper.spacing))
    radii = [5.25, 6.05]
    report = cyl_density_scan(u, upper, (0.0,), radii, lam)
    polar = cyl_polar(u, upper)
    expected = [cell_layer_bound(polar.y_grid, (0.0,), r) for r in radii]
    assert report.cell_layer.tolist() == expected
    assert np.all(report.cell_layer > 0.0)
    assert report.layer_energy.tolist() == [polar.layer_energy(np.zeros(1), r) for r in radii]
    assert np.all(report.layer_energy >= -1e-12)


def test_cylinder_splice_on_relaxed_field(relaxed_curved_cylinder) -> None:
    """Empalmar el competidor de partida en |s| ≤ l no baja la energía más que K e^{−kl}."""
    _, _, upper, blend, u, _ = relaxed_curved_cylinder
    for l in (0.25 * upper.L, 0.5 * upper.L):
        report = cylinder_splice_check(u, upper, blend.values, l)
        assert report.verdict == "PASS"
        assert report.bound > 0.0
        assert report.to_payload()["l"] == l
    with pytest.raises(ValueError):
        cylinder_splice_check(u, upper, blend.values, upper.L - 0.5)
    with pytest.raises(ValueError):
        cylinder_splice_check(u, upper, blend.values[:, :-1], 2.5)


@pytest.fixture(scope="module")
def short_connection() -> ConnectionProfile:
    return solve_connection(two_well(), L=6.0, N=61, tol=1e-11)


def test_relaxed_cylinder_with_connection_data_is_rigid(short_connection: ConnectionProfile) -> None:
    """Dato e en todo el borde y arranque ruidoso: el mínimo es el producto."""
    e = short_connection
    start = cylinder_blend(e, e, y_nodes=21, width=1.0)
    rng = np.random.default_rng(7)
    start = start.with_values(start.values + 0.1 * rng.standard_normal(start.values.shape))
    u, log = relax_cylinder(start, e, DescentSchedule(tol=1e-8))
    assert log.converged
    report = product_structure_probe(u, e)
    assert report.verdict == "RIGID"
    assert report.k0 is None


def test_perturbed_boundary_data_is_not_rigid(short_connection: ConnectionProfile) -> None:
    """Un dato e + δν en y = ±Y deja una desviación que decae hacia dentro."""
    e = short_connection
    start = cylinder_blend(e, e, y_nodes=41, width=1.0)
    nu = symmetric_bumps(e, 1, seed=3)[0]
    values = start.values.copy()
    values[:, [0, -1], :] += 0.2 * nu[:, None, :]
    start = Field(start.grid, values, start.mask.copy())
    u, log = relax_cylinder(start, e, DescentSchedule(tol=1e-9))
    assert log.converged
    report = product_structure_probe(u, e)
    assert report.verdict == "NONRIGID"
    assert report.k0 is not None and report.k0 > 0.0


def test_relax_cylinder_rejects_asymmetric_boundary(short_connection: ConnectionProfile) -> None:
    e = short_connection
    start = cylinder_blend(e, e, y_nodes=11, width=1.0)
    values = start.values.copy()
    values[5, 0, 0] += 0.3
    with pytest.raises(ValueError):
        relax_cylinder(Field(start.grid, values, start.mask.copy()), e, DescentSchedule())


def test_relax_cylinder_raises_without_convergence(short_connection: ConnectionProfile) -> None:
    e = short_connection
    start = cylinder_blend(e, e, y_nodes=11, width=1.0)
    with pytest.raises(NoConvergence) as info:
        relax_cylinder(start, e, DescentSchedule(tol=1e-14, max_iters=2))
    assert info.value.best is not None
    assert info.value.log.iterations == 2


def test_cylinder_density_scan_validation(curved_pair) -> None:
    _, lower, upper = curved_pair
    u = cylinder_blend(lower, upper, y_nodes=41, width=0.5)
    with pytest.raises(OutOfDomain):
        cyl_density_scan(u, upper, (0.0,), [5.0], 0.1)
    with pytest.raises(LambdaAboveThreshold):
        cyl_density_scan(u, upper, (0.0,), [0.5], 0.2, lam_star=0.1)


def test_splice_keeps_competitor_inside(coarse_connection: ConnectionProfile) -> None:
    nu = symmetric_bumps(coarse_connection, 1, seed=2)[0]
    competitor = coarse_connection.values + 0.05 * nu
    spliced = splice(coarse_connection, competitor, 3.0)
    s = np.abs(coarse_connection.s)
    assert np.array_equal(spliced[s <= 3.0], competitor[s <= 3.0])
    assert np.array_equal(spliced[s >= 4.0], coarse_connection.values[s >= 4.0])
    report = splice_check(coarse_connection, competitor, 3.0)
    assert report.verdict == "PASS"
    assert report.to_payload()["l"] == 3.0
    with pytest.raises(ValueError):
        splice_check(coarse_connection, competitor, 9.5)
