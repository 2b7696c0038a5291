"""Conexión heteroclínica unidimensional, potencial efectivo y forma polar cilíndrica.

Las curvas se muestrean sobre los nodos ``s_i = −L + i·h`` de la conexión; la
Acción usa la misma cuadratura que ``grid_field.energy`` en una dimensión
(diferencias hacia adelante para la parte cinética y regla del trapecio para W).
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy import ndimage, sparse
from scipy.linalg import solve_banded
from scipy.sparse.linalg import eigsh

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
from phaselab.services.density import DensityReport
from phaselab.services.grid_field import (
    Field,
    Grid,
    RegionMask,
    box_mask,
    cell_layer_bound,
    cells_inside,
    corner_average,
    energy,
)
from phaselab.services.minimizer import (
    ConvergenceLog,
    DescentSchedule,
    descend_symmetric,
    symmetry_projector,
)
from phaselab.services.polar import split_cells
from phaselab.services.potentials import PotentialSpec

LOGGER = logging.getLogger(__name__)

# Tolerancias de admisibilidad de una curva muestreada
ENDPOINT_TOL = 1e-6
SYMMETRY_TOL = 1e-9
RIGID_TOL = 1e-6


# ----------------------------------------------------------------------
# Utilidades de curvas
# ----------------------------------------------------------------------
def line_action(values: np.ndarray, spacing: float, spec: PotentialSpec) -> np.ndarray:
    """Acción discreta de curvas ``(..., N, m)`` a lo largo del penúltimo eje."""

    values = np.asarray(values, dtype=float)
    diff = np.diff(values, axis=-2)
    kinetic = 0.5 * np.sum(diff**2, axis=(-2, -1)) / spacing
    w = spec.value(values)
    potential = spacing * (np.sum(w, axis=-1) - 0.5 * (w[..., 0] + w[..., -1]))
    return kinetic + potential


def l2_norm(values: np.ndarray, spacing: float) -> np.ndarray:
    """Norma L² por trapecios a lo largo del penúltimo eje."""

    squared = np.sum(np.asarray(values, dtype=float) ** 2, axis=-1)
    integral = spacing * (np.sum(squared, axis=-1) - 0.5 * (squared[..., 0] + squared[..., -1]))
    return np.sqrt(integral)


def reflect_curve(values: np.ndarray) -> np.ndarray:
    """s ↦ v̂(−s) sobre una malla simétrica."""

    mirrored = np.flip(values, axis=-2).copy()
    mirrored[..., 0] *= -1.0
    return mirrored


def project_symmetric(values: np.ndarray) -> np.ndarray:
    return 0.5 * (values + reflect_curve(values))


def symmetric_pair(spec: PotentialSpec) -> Tuple[np.ndarray, np.ndarray]:
    """Pozos (a₋, a₊) con a₋ = â₊ y primera coordenada de a₊ positiva."""

    if not spec.symmetric:
        raise ValueError("El potencial no declara simetría de reflexión.")
    wells = spec.wells_array
    candidates = []
    for well in wells:
        mirrored = well.copy()
        mirrored[0] *= -1.0
        if well[0] > 0 and np.any(np.all(np.isclose(wells, mirrored), axis=1)):
            candidates.append(well)
    if not candidates:
        raise ValueError("No hay un par de pozos a_± = â_∓ con a₊ en x₁ > 0.")
    plus = max(candidates, key=lambda w: (w[0], tuple(w[1:])))
    minus = plus.copy()
    minus[0] *= -1.0
    return minus, plus


# ----------------------------------------------------------------------
# Perfil de conexión
# ----------------------------------------------------------------------
@dataclass(eq=False)
class ConnectionProfile:
    """Conexión e truncada a [−L, L] en la clase simétrica v(−s) = v̂(s)."""

    L: float
    N: int
    values: np.ndarray
    wells: Tuple[np.ndarray, np.ndarray]
    action: float
    spec: PotentialSpec
    symmetric: bool = True
    tail: Tuple[float, float] = (float("nan"), float("nan"))
    residual: float = float("nan")
    iterations: int = 0

    @property
    def spacing(self) -> float:
        return 2.0 * self.L / (self.N - 1)

    @property
    def s(self) -> np.ndarray:
        return np.linspace(-self.L, self.L, self.N)

    @property
    def grid(self) -> Grid:
        return Grid(shape=(self.N,), spacing=self.spacing, origin=(-self.L,))

    def to_field(self) -> Field:
        return Field(self.grid, self.values, box_mask(self.grid))

    def sample(self, points: np.ndarray) -> np.ndarray:
        """Interpolación lineal por componentes; fuera de [−L, L] se usan los pozos."""

        points = np.asarray(points, dtype=float)
        columns = [
            np.interp(points, self.s, self.values[:, c], left=self.wells[0][c], right=self.wells[1][c])
            for c in range(self.values.shape[1])
        ]
        return np.stack(columns, axis=-1)

    def symmetry_defect(self) -> float:
        return float(np.max(np.linalg.norm(self.values - reflect_curve(self.values), axis=-1)))

    def to_payload(self) -> Dict[str, object]:
        return {
            "L": self.L,
            "N": self.N,
            "action": self.action,
            "a_minus": self.wells[0].tolist(),
            "a_plus": self.wells[1].tolist(),
            "tail_k": self.tail[0],
            "tail_K": self.tail[1],
            "residual": self.residual,
            "iterations": self.iterations,
            "symmetry_defect": self.symmetry_defect(),
        }

    @classmethod
    def from_field(cls, f: Field, spec: PotentialSpec) -> "ConnectionProfile":
        if f.grid.n != 1:
            raise ValueError("Una conexión se guarda como campo unidimensional.")
        L = -f.grid.origin[0]
        if not math.isclose(f.grid.upper[0], L, rel_tol=1e-12, abs_tol=1e-12):
            raise ValueError("La malla de la conexión no es simétrica.")
        minus, plus = symmetric_pair(spec)
        values = f.values.copy()
        profile = cls(
            L=float(L),
            N=f.grid.shape[0],
            values=values,
            wells=(minus, plus),
            action=float(line_action(values, f.grid.spacing, spec)),
            spec=spec,
        )
        profile.tail = fit_tail(profile)
        return profile


def fit_tail(profile: ConnectionProfile) -> Tuple[float, float]:
    """Ajusta |v(s) − a₊| ≤ K e^{−ks} en s ∈ [L/2, 0.9L]."""

    s = profile.s
    plus = profile.wells[1]
    deviation = np.linalg.norm(profile.values - plus, axis=-1)
    window = (s >= 0.5 * profile.L) & (s <= 0.9 * profile.L) & (deviation > 1e-13)
    if np.count_nonzero(window) < 4:
        raise TruncationTooShort("La cola de la conexión no tiene puntos utilizables para el ajuste.")
    slope, intercept = np.polyfit(s[window], np.log(deviation[window]), 1)
    k = float(-slope)
    K = float(math.exp(intercept))
    if profile.spec.quadratic:
        lowest = float(np.linalg.eigvalsh(profile.spec.hessian(plus)).min())
        required = 0.5 * math.sqrt(max(lowest, 0.0))
        if k < required:
            raise TruncationTooShort(
                f"Tasa de cola k = {k:.4g} menor que la requerida {required:.4g}; aumentar L."
            )
    return k, K


def _initial_guess(s: np.ndarray, minus: np.ndarray, plus: np.ndarray, branch: float) -> np.ndarray:
    t = np.tanh(s)[:, None]
    values = 0.5 * (plus + minus) + 0.5 * t * (plus - minus)
    if branch and values.shape[1] > 1:
        values[:, 1] += 0.5 * branch / np.cosh(s) ** 2
    return values


def solve_connection(
    spec: PotentialSpec,
    L: float,
    N: int,
    tol: float = 1e-9,
    max_iters: int = 100_000,
    branch: float = 0.0,
    initial: Optional[np.ndarray] = None,
) -> ConnectionProfile:
    """Minimiza la Acción discreta en la clase simétrica con extremos fijos.

    Cada paso resuelve ``(1 + S − D₂)v⁺ = (1 + S)v − W_u(v)`` con S la mayor
    autovalor de W_uu visto hasta el momento, y proyecta sobre la clase simétrica.
    ``branch`` añade un abultamiento transversal par para elegir una conexión curva.
    """

    if not spec.quadratic:
        raise UnsupportedAlpha("La conexión unidimensional se calcula sólo para α = 2.")
    if N < 5 or N % 2 == 0:
        raise ValueError("N debe ser impar y al menos 5 para contener el nodo s = 0.")
    if not L > 0:
        raise ValueError("L debe ser positivo.")
    minus, plus = symmetric_pair(spec)
    s = np.linspace(-L, L, N)
    h = s[1] - s[0]
    values = _initial_guess(s, minus, plus, branch) if initial is None else np.array(initial, dtype=float)
    if values.shape != (N, spec.m):
        raise ValueError(f"El dato inicial debe tener forma {(N, spec.m)}.")
    values[0] = minus
    values[-1] = plus
    values = project_symmetric(values)
    size = N - 2
    shift = 0.0
    residual = float("inf")
    iteration = 0
    while True:
        grad, _ = spec.gradient(values)
        lap = (values[:-2] - 2.0 * values[1:-1] + values[2:]) / h**2
        residual = float(np.max(np.linalg.norm(lap - grad[1:-1], axis=-1)))
        if residual <= tol:
            break
        if iteration >= max_iters:
            profile = ConnectionProfile(
                L=float(L), N=N, values=values, wells=(minus, plus),
                action=float(line_action(values, h, spec)), spec=spec,
                residual=residual, iterations=iteration,
            )
            raise NoConvergence(
                f"La conexión no convergió en {iteration} iteraciones (residuo {residual:.3e}).",
                best=profile,
            )
        hess = spec.hessian(values)
        shift = max(shift, float(np.linalg.eigvalsh(hess).max()), 0.0)
        banded = np.zeros((3, size))
        banded[0, 1:] = -1.0 / h**2
        banded[1, :] = 1.0 + shift + 2.0 / h**2
        banded[2, :-1] = -1.0 / h**2
        rhs = (1.0 + shift) * values[1:-1] - grad[1:-1]
        rhs[0] += values[0] / h**2
        rhs[-1] += values[-1] / h**2
        values = values.copy()
        values[1:-1] = solve_banded((1, 1), banded, rhs)
        values = project_symmetric(values)
        iteration += 1
        if iteration % 1000 == 0:
            LOGGER.debug("Conexión: iteración %d, residuo %.3e", iteration, residual)
    profile = ConnectionProfile(
        L=float(L),
        N=N,
        values=values,
        wells=(minus, plus),
        action=float(line_action(values, h, spec)),
        spec=spec,
        residual=residual,
        iterations=iteration,
    )
    profile.tail = fit_tail(profile)
    LOGGER.info(
        "Conexión resuelta en %d iteraciones: A(e) = %.10g, cola k = %.4g",
        iteration,
        profile.action,
        profile.tail[0],
    )
    return profile


def connection_candidates(
    spec: PotentialSpec, L: float, N: int, branches: Sequence[float] = (-1.0, 0.0, 1.0)
) -> Tuple[List[ConnectionProfile], pd.DataFrame]:
    """Conexiones obtenidas desde varios arranques y sus distancias mutuas."""

    profiles = [solve_connection(spec, L, N, branch=b) for b in branches]
    rows = []
    for i, first in enumerate(profiles):
        for j in range(i + 1, len(profiles)):
            gap = float(np.max(np.abs(first.values - profiles[j].values)))
            rows.append((branches[i], branches[j], first.action, profiles[j].action, gap))
    frame = pd.DataFrame(rows, columns=["branch_a", "branch_b", "action_a", "action_b", "sup_gap"])
    return profiles, frame


# ----------------------------------------------------------------------
# Acción y potencial efectivo
# ----------------------------------------------------------------------
@dataclass(frozen=True)
class ActionValue:
    value: float
    admissible: bool

    def __float__(self) -> float:
        return self.value


def is_admissible(values: np.ndarray, minus: np.ndarray, plus: np.ndarray) -> bool:
    ends = (
        np.linalg.norm(values[0] - minus) <= ENDPOINT_TOL
        and np.linalg.norm(values[-1] - plus) <= ENDPOINT_TOL
    )
    symmetric = np.max(np.abs(values - reflect_curve(values))) <= SYMMETRY_TOL
    return bool(ends and symmetric)


def action(
    v: ConnectionProfile | np.ndarray,
    spec: Optional[PotentialSpec] = None,
    spacing: Optional[float] = None,
) -> ActionValue:
    """Acción por trapecios; marca la curva como no admisible si sus límites no son a_±."""

    if isinstance(v, ConnectionProfile):
        spec = v.spec
        spacing = v.spacing
        values = v.values
    else:
        if spec is None or spacing is None:
            raise ValueError("Una curva muestreada necesita potencial y paso.")
        values = np.asarray(v, dtype=float)
        if values.ndim == 1:
            values = values[:, None]
    minus, plus = symmetric_pair(spec)
    admissible = is_admissible(values, minus, plus)
    if not admissible:
        LOGGER.warning("Acción evaluada sobre una curva no admisible")
    return ActionValue(value=float(line_action(values, spacing, spec)), admissible=admissible)


@dataclass(frozen=True)
class EffectivePotentialEval:
    value: float
    q: float
    nu: np.ndarray


def effective_potential(
    v: np.ndarray, e: ConnectionProfile, q_min: Optional[float] = None
) -> EffectivePotentialEval:
    """𝒲(v) = A(v) − A(e), q = ‖v − e‖ y ν = (v − e)/q."""

    values = np.asarray(v, dtype=float)
    if values.ndim == 1:
        values = values[:, None]
    if values.shape != e.values.shape:
        raise ValueError("La curva debe muestrearse sobre los nodos de la conexión.")
    if not is_admissible(values, *e.wells):
        raise NonAdmissible("La curva no es simétrica o no conecta a₋ con a₊.")
    threshold = e.spec.q_min if q_min is None else q_min
    offset = values - e.values
    q = float(l2_norm(offset, e.spacing))
    nu = offset / q if q > threshold else np.zeros_like(offset)
    value = float(line_action(values, e.spacing, e.spec)) - e.action
    return EffectivePotentialEval(value=value, q=q, nu=nu)


# ----------------------------------------------------------------------
# Hiperbolicidad
# ----------------------------------------------------------------------
@dataclass(frozen=True)
class HyperbolicityReport:
    eta: float
    eigenvector: np.ndarray
    shift: float
    dimension: int

    def to_payload(self) -> Dict[str, float]:
        return {"eta": self.eta, "shift": self.shift, "dimension": self.dimension}


def _linearized_operator(
    e: ConnectionProfile, hessians: np.ndarray
) -> sparse.csr_matrix:
    """T = −D₂ ⊗ I + blockdiag(W_uu(e_i)) sobre los nodos interiores."""

    size = e.N - 2
    m = e.values.shape[1]
    h = e.spacing
    second = sparse.diags(
        [np.full(size - 1, -1.0), np.full(size, 2.0), np.full(size - 1, -1.0)],
        [-1, 0, 1],
    ) / h**2
    blocks = sparse.block_diag([hessians[i] for i in range(1, e.N - 1)])
    return (sparse.kron(second, sparse.identity(m)) + blocks).tocsr()


def _symmetric_basis(N: int, m: int) -> sparse.csr_matrix:
    """Base (sin normalizar) de la clase v(−s) = v̂(s) restringida a nodos interiores.

    La primera componente es impar (nula en s = 0) y las demás pares.
    """

    size = N - 2
    middle = size // 2
    rows: List[int] = []
    cols: List[int] = []
    data: List[float] = []
    column = 0
    for i in range(middle, size):
        mirror = size - 1 - i
        for c in range(m):
            if c == 0:
                if i == middle:
                    continue
                rows += [i * m + c, mirror * m + c]
                data += [1.0, -1.0]
                cols += [column, column]
            elif i == middle:
                rows.append(i * m + c)
                data.append(1.0)
                cols.append(column)
            else:
                rows += [i * m + c, mirror * m + c]
                data += [1.0, 1.0]
                cols += [column, column]
            column += 1
    return sparse.csr_matrix((data, (rows, cols)), shape=(size * m, column))


def hyperbolicity(
    e: ConnectionProfile,
    spec: Optional[PotentialSpec] = None,
    hessian_override: Optional[Callable[[np.ndarray], np.ndarray]] = None,
    strict: bool = True,
) -> HyperbolicityReport:
    """Menor autovalor η de T = −d²/ds² + W_uu(e) en el subespacio simétrico."""

    potential = spec or e.spec
    if hessian_override is None and not potential.quadratic:
        raise UnsupportedAlpha("La hiperbolicidad requiere α = 2.")
    hessians = hessian_override(e.values) if hessian_override else potential.hessian(e.values)
    m = e.values.shape[1]
    operator = _linearized_operator(e, np.asarray(hessians, dtype=float))
    basis = _symmetric_basis(e.N, m)
    reduced = (basis.T @ operator @ basis).tocsc()
    weights = np.asarray(basis.multiply(basis).sum(axis=0)).ravel()
    scale = sparse.diags(1.0 / np.sqrt(weights))
    symmetric = (scale @ reduced @ scale).tocsc()
    diagonal = symmetric.diagonal()
    offdiag = np.asarray(abs(symmetric).sum(axis=1)).ravel() - np.abs(diagonal)
    shift = float(np.min(diagonal - offdiag)) - 1.0
    values, vectors = eigsh(symmetric, k=1, sigma=shift, which="LM")
    eta = float(values[0])
    interior = (basis @ (scale @ vectors[:, 0])).reshape(e.N - 2, m)
    vector = np.zeros_like(e.values)
    vector[1:-1] = interior
    vector /= float(l2_norm(vector, e.spacing))
    LOGGER.info("Hiperbolicidad: η = %.6g (dimensión simétrica %d)", eta, basis.shape[1])
    if strict and eta <= 0.0:
        raise NotHyperbolic(eta)
    return HyperbolicityReport(eta=eta, eigenvector=vector, shift=shift, dimension=basis.shape[1])


def quadratic_form(e: ConnectionProfile, nu: np.ndarray, spec: Optional[PotentialSpec] = None) -> float:
    """⟨Tν, ν⟩ = h·νᵀTν con ν nulo en los extremos."""

    potential = spec or e.spec
    operator = _linearized_operator(e, potential.hessian(e.values))
    inner = np.asarray(nu, dtype=float)[1:-1].ravel()
    return float(e.spacing * inner @ (operator @ inner))


# ----------------------------------------------------------------------
# Convexidad de 𝒲 a lo largo de rayos
# ----------------------------------------------------------------------
def symmetric_bumps(
    e: ConnectionProfile, count: int, seed: int = 0
) -> np.ndarray:
    """Direcciones unitarias aleatorias de la clase simétrica, nulas en ±L."""

    rng = np.random.default_rng(seed)
    s = e.s
    m = e.values.shape[1]
    out = np.zeros((count, e.N, m))
    for k in range(count):
        width = rng.uniform(0.5, 3.0)
        center = rng.uniform(0.0, 0.5 * e.L)
        amplitude = rng.standard_normal(m)
        out[k, :, 0] = amplitude[0] * s * np.exp(-(s**2) / width**2)
        for c in range(1, m):
            out[k, :, c] = amplitude[c] * (
                np.exp(-((s - center) ** 2) / width**2) + np.exp(-((s + center) ** 2) / width**2)
            )
        out[k, 0] = 0.0
        out[k, -1] = 0.0
        out[k] = project_symmetric(out[k])
        out[k] /= float(l2_norm(out[k], e.spacing))
    return out


def second_derivative(e: ConnectionProfile, nu: np.ndarray, q: float, delta: float) -> float:
    """D_qq𝒲(e + qν) por diferencias centradas con extrapolación de Richardson."""

    spec = e.spec
    h = e.spacing

    def _w(t: float) -> float:
        return float(line_action(e.values + t * nu, h, spec)) - e.action

    def _central(step: float) -> float:
        return (_w(q + step) - 2.0 * _w(q) + _w(q - step)) / step**2

    coarse = _central(delta)
    fine = _central(0.5 * delta)
    return (4.0 * fine - coarse) / 3.0


@dataclass
class WqqReport:
    eta: float
    c0: float
    qbar: float
    lam_star: float
    scan: List[float]
    min_dqq: List[float]
    per_direction: np.ndarray = field(repr=False, default_factory=lambda: np.zeros((0, 0)))

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({"q": self.scan, "min_Dqq": self.min_dqq})

    def to_payload(self) -> Dict[str, object]:
        return {
            "eta": self.eta,
            "c0": self.c0,
            "qbar": self.qbar,
            "lambda_star": self.lam_star,
            "scan": list(self.scan),
            "min_Dqq": list(self.min_dqq),
        }


def wqq_check(
    e: ConnectionProfile,
    spec: Optional[PotentialSpec] = None,
    directions: int = 16,
    qbar_scan: Optional[Sequence[float]] = None,
    seed: int = 0,
    eta: Optional[float] = None,
    threads: int = 1,
    extra_directions: Optional[Sequence[np.ndarray]] = None,
) -> WqqReport:
    """Estima c₀ = η/2, el mayor q̄ con D_qq𝒲 ≥ c₀ en [0, q̄] y fija λ* = q̄."""

    if spec is not None and spec is not e.spec:
        e = ConnectionProfile(
            L=e.L, N=e.N, values=e.values, wells=e.wells,
            action=float(line_action(e.values, e.spacing, spec)), spec=spec, tail=e.tail,
        )
    if eta is None:
        eta = hyperbolicity(e).eta
    elif eta <= 0:
        raise NotHyperbolic(eta)
    c0 = 0.5 * eta
    scan = np.asarray(qbar_scan if qbar_scan is not None else np.linspace(0.0, 0.5, 11), dtype=float)
    if np.any(scan < 0) or np.any(np.diff(scan) <= 0):
        raise ValueError("El barrido de q debe ser creciente y no negativo.")
    delta = 1e-3 * max(float(scan.max()), 1e-3)
    units = symmetric_bumps(e, directions, seed)
    if extra_directions:
        units = np.concatenate([units, np.stack([np.asarray(d, dtype=float) for d in extra_directions])])

    def _row(nu: np.ndarray) -> List[float]:
        return [second_derivative(e, nu, float(q), delta) for q in scan]

    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        table = np.array(list(pool.map(_row, list(units))))
    minima = table.min(axis=0)
    qbar = 0.0
    for q, value in zip(scan, minima):
        if value < c0:
            break
        qbar = float(q)
    report = WqqReport(
        eta=float(eta),
        c0=c0,
        qbar=qbar,
        lam_star=qbar,
        scan=scan.tolist(),
        min_dqq=minima.tolist(),
        per_direction=table,
    )
    LOGGER.info("D_qq𝒲: c₀ = %.4g, q̄ = λ* = %.4g", c0, qbar)
    return report


# ----------------------------------------------------------------------
# Desigualdades de interpolación
# ----------------------------------------------------------------------
# Holgura relativa al comprobar la envolvente |v| + |v_s| ≤ K e^{−k|s|}
ENVELOPE_TOL = 1e-9


@dataclass(frozen=True)
class InterpReport:
    linf: float
    l2: float
    grad_l2: float
    grad_linf: float
    sqrt2_rhs: float
    k: float
    K: float
    exp_class: bool
    two_thirds_constant: float
    two_thirds_rhs: float
    empirical_constant: float

    @property
    def sqrt2_holds(self) -> bool:
        return self.linf <= self.sqrt2_rhs * (1.0 + 1e-12)

    @property
    def two_thirds_holds(self) -> bool:
        return self.exp_class and self.linf <= self.two_thirds_rhs * (1.0 + 1e-12)

    @property
    def verdict(self) -> str:
        return "PASS" if self.sqrt2_holds and self.two_thirds_holds else "FAIL"

    def to_payload(self) -> Dict[str, object]:
        return {
            "verdict": self.verdict,
            "linf": self.linf,
            "l2": self.l2,
            "grad_l2": self.grad_l2,
            "grad_linf": self.grad_linf,
            "sqrt2_rhs": self.sqrt2_rhs,
            "k": self.k,
            "K": self.K,
            "exp_class": self.exp_class,
            "two_thirds_constant": self.two_thirds_constant,
            "two_thirds_rhs": self.two_thirds_rhs,
            "empirical_constant": self.empirical_constant,
        }


def interp_bound_check(
    v: np.ndarray, spacing: float, tail: Optional[Tuple[float, float]] = None
) -> InterpReport:
    """‖v‖_∞ ≤ √2‖v‖^{1/2}‖v_s‖^{1/2} y ‖v‖_∞ ≤ C(k, K)‖v‖^{2/3} con C(k, K) = (3K)^{1/3}.

    La segunda cota exige |v| + |v_s| ≤ K e^{−k|s|} sobre la malla simétrica
    s_i = −L + i·h; se comprueba en los puntos medios. Sin ``tail`` se toma
    k = 0 y K = sup(|v| + |v_s|).
    """

    values = np.asarray(v, dtype=float)
    if values.ndim == 1:
        values = values[:, None]
    derivative = np.diff(values, axis=0) / spacing
    linf = float(np.max(np.linalg.norm(values, axis=-1)))
    l2 = float(l2_norm(values, spacing))
    grad_l2 = float(math.sqrt(spacing * np.sum(derivative**2)))
    grad_linf = float(np.max(np.linalg.norm(derivative, axis=-1))) if derivative.size else 0.0
    midpoints = 0.5 * (values[1:] + values[:-1])
    envelope = np.linalg.norm(midpoints, axis=-1) + np.linalg.norm(derivative, axis=-1)
    s_mid = spacing * (np.arange(envelope.size) + 0.5 - 0.5 * (values.shape[0] - 1))
    if tail is None:
        k, K = 0.0, float(envelope.max(initial=0.0))
    else:
        k, K = float(tail[0]), float(tail[1])
    if not (k >= 0 and K > 0):
        raise ValueError("La envolvente exponencial necesita k ≥ 0 y K > 0.")
    exp_class = bool(np.all(envelope <= K * np.exp(-k * np.abs(s_mid)) * (1.0 + ENVELOPE_TOL)))
    if not exp_class:
        LOGGER.warning("La curva no cumple |v| + |v_s| ≤ %.4g e^{−%.4g|s|}", K, k)
    constant = (3.0 * K) ** (1.0 / 3.0)
    return InterpReport(
        linf=linf,
        l2=l2,
        grad_l2=grad_l2,
        grad_linf=grad_linf,
        sqrt2_rhs=math.sqrt(2.0) * math.sqrt(l2) * math.sqrt(grad_l2),
        k=k,
        K=K,
        exp_class=exp_class,
        two_thirds_constant=constant,
        two_thirds_rhs=constant * l2 ** (2.0 / 3.0),
        empirical_constant=(3.0 * grad_linf) ** (1.0 / 3.0),
    )


# ----------------------------------------------------------------------
# Forma polar cilíndrica
# ----------------------------------------------------------------------
@dataclass(eq=False)
class CylPolar:
    """q(y) = ‖u(·,y) − e‖, ν(·,y) y la densidad de energía modificada por celda en y."""

    y_grid: Grid
    q: np.ndarray
    nu: np.ndarray
    w_eff: np.ndarray
    density: np.ndarray
    cut: np.ndarray
    omitted: float

    def modified_energy(self, nodes: Optional[np.ndarray] = None) -> float:
        cells = (
            np.ones(self.density.shape, dtype=bool) if nodes is None else cells_inside(nodes)
        )
        return float(np.sum(self.density[cells]) * self.y_grid.cell_volume)

    def layer_energy(self, center: np.ndarray, radius: float) -> float:
        """Energía modificada de las celdas transversales en la capa de ancho √(n−1)·h."""

        grid = self.y_grid
        centers = corner_average(grid.coordinates(), grid.n)
        r = np.sqrt(np.sum((centers - center) ** 2, axis=-1))
        band = np.abs(r - radius) <= 0.5 * math.sqrt(grid.n) * grid.spacing
        return float(np.sum(self.density[band]) * grid.cell_volume)


def _check_truncation(u: Field, e: ConnectionProfile) -> None:
    grid = u.grid
    if grid.n < 2:
        raise TruncationMismatch("El cilindro necesita al menos un eje transversal.")
    if (
        grid.shape[0] != e.N
        or not math.isclose(grid.spacing, e.spacing, rel_tol=1e-12)
        or not math.isclose(grid.origin[0], -e.L, rel_tol=1e-12, abs_tol=1e-12)
    ):
        raise TruncationMismatch(
            f"El eje s de la malla ({grid.shape[0]} nodos desde {grid.origin[0]:g}) "
            f"no coincide con la conexión ({e.N} nodos en [−{e.L:g}, {e.L:g}])."
        )
    if u.m != e.values.shape[1]:
        raise TruncationMismatch("El campo y la conexión tienen distinto número de componentes.")


def cyl_polar(u: Field, e: ConnectionProfile, spec: Optional[PotentialSpec] = None) -> CylPolar:
    _check_truncation(u, e)
    potential = spec or e.spec
    h = e.spacing
    n = u.grid.n
    lines = np.moveaxis(u.values, 0, -2)
    offset = lines - e.values
    q = l2_norm(offset, h)
    nu = np.zeros_like(offset)
    alive = q > potential.q_min
    nu[alive] = offset[alive] / q[alive][..., None, None]
    w_eff = line_action(lines, h, potential) - e.action
    # Pesos de trapecio para que la norma euclídea de ν aplanado sea la norma L²
    weights = np.full(e.N, h)
    weights[[0, -1]] *= 0.5
    flat = (nu * np.sqrt(weights)[:, None]).reshape(q.shape + (-1,))
    grad_q, coupling, cut = split_cells(q, flat, h, n - 1)
    kinetic_direct = _transverse_kinetic(lines, weights, h, n - 1)
    omitted = float(
        np.sum(np.where(cut, np.maximum(kinetic_direct - grad_q, 0.0), 0.0)) * h ** (n - 1)
    )
    density = 0.5 * (grad_q + coupling) + corner_average(w_eff, n - 1)
    y_grid = Grid(shape=u.grid.shape[1:], spacing=h, origin=u.grid.origin[1:])
    return CylPolar(
        y_grid=y_grid, q=q, nu=nu, w_eff=w_eff, density=density, cut=cut, omitted=omitted
    )


def _transverse_kinetic(lines: np.ndarray, weights: np.ndarray, h: float, dims: int) -> np.ndarray:
    flat = (lines * np.sqrt(weights)[:, None]).reshape(lines.shape[:-2] + (-1,))
    total = None
    for axis in range(dims):
        diff = np.diff(flat, axis=axis) / h
        squared = np.sum(diff**2, axis=-1)
        for other in range(dims):
            if other != axis:
                lower = [slice(None)] * squared.ndim
                upper = [slice(None)] * squared.ndim
                lower[other] = slice(None, -1)
                upper[other] = slice(1, None)
                squared = 0.5 * (squared[tuple(lower)] + squared[tuple(upper)])
        total = squared if total is None else total + squared
    return total


def cylinder_energy_excess(u: Field, e: ConnectionProfile, spec: Optional[PotentialSpec] = None) -> float:
    """Energía directa del cilindro menos A(e) por la medida transversal."""

    potential = spec or e.spec
    _check_truncation(u, e)
    direct = energy(u, RegionMask.everything(u), potential)
    transverse = 1.0
    for size in u.grid.shape[1:]:
        transverse *= (size - 1) * u.grid.spacing
    return direct - e.action * transverse


def cylinder_blend(
    lower: ConnectionProfile,
    upper: ConnectionProfile,
    y_nodes: int,
    width: float,
) -> Field:
    """u(s, y) = (1 − t(y))e₋(s) + t(y)e₊(s) con t = ½(1 + tanh(y/width)).

    La malla comparte el eje s de la conexión; el borde queda fijo.
    """

    if y_nodes < 3:
        raise ValueError("El eje transversal necesita al menos 3 nodos.")
    h = upper.spacing
    grid = Grid(shape=(upper.N, y_nodes), spacing=h, origin=(-upper.L, -0.5 * (y_nodes - 1) * h))
    y = grid.axes()[1]
    t = 0.5 * (1.0 + np.tanh(y / width))
    values = (1.0 - t)[None, :, None] * lower.values[:, None, :] + t[None, :, None] * upper.values[:, None, :]
    return Field(grid, values, box_mask(grid))


def relax_cylinder(
    u0: Field,
    e: ConnectionProfile,
    sched: DescentSchedule,
    spec: Optional[PotentialSpec] = None,
) -> Tuple[Field, ConvergenceLog]:
    """Descenso simétrico del cilindro con el borde de u0; NoConvergence si no llega a la tolerancia."""

    _check_truncation(u0, e)
    potential = spec or e.spec
    project = symmetry_projector(u0)
    start = u0.with_values(project(u0.values))
    relaxed, log = descend_symmetric(start, potential, sched)
    LOGGER.info(
        "Cilindro relajado en %d iteraciones (residuo %.3e)", log.iterations, log.final_residual
    )
    return relaxed, log


def cyl_density_scan(
    u: Field,
    e: ConnectionProfile,
    y0: Sequence[float],
    radii: Sequence[float],
    lam: float,
    spec: Optional[PotentialSpec] = None,
    lam_star: Optional[float] = None,
) -> DensityReport:
    """𝒱_R, 𝒜_R y energía modificada sobre bolas 𝓑_R(y₀) ⊂ R^{n−1}."""

    if not lam > 0:
        raise ValueError("λ debe ser positivo.")
    if lam_star is not None and lam >= lam_star:
        raise LambdaAboveThreshold(f"λ = {lam:g} no es menor que λ* = {lam_star:g}.")
    polar = cyl_polar(u, e, spec)
    grid = polar.y_grid
    point = np.asarray(y0, dtype=float)
    radii_arr = np.asarray(radii, dtype=float)
    if point.shape != (grid.n,):
        raise ValueError("y₀ debe tener una coordenada por eje transversal.")
    room = np.minimum(point - np.asarray(grid.origin), np.asarray(grid.upper) - point)
    if radii_arr.size == 0 or radii_arr[-1] > room.min() + 1e-9:
        raise OutOfDomain("Los radios no caben en la sección transversal.")
    volume = grid.cell_volume
    rows = []
    for radius in radii_arr:
        nodes = RegionMask.ball(grid, point, float(radius)).nodes
        above = nodes & (polar.q > lam)
        below = nodes & ~(polar.q > lam)
        rows.append(
            (
                float(np.count_nonzero(above) * volume),
                float(np.sum(polar.w_eff[below]) * volume),
                polar.modified_energy(nodes),
                float(np.count_nonzero(nodes) * volume),
                float(np.count_nonzero(below) * volume),
                cell_layer_bound(grid, point, float(radius)),
                polar.layer_energy(point, float(radius)),
            )
        )
    columns = [np.array(c) for c in zip(*rows)]
    width = 2.0 * grid.spacing
    shells = int(math.floor(radii_arr[-1] / width + 1e-9))
    r = grid.distance_from(point)
    star = lam if lam_star is None else min(lam_star, lam)
    omega = np.array(
        [
            float(np.count_nonzero((r >= (j - 1) * width) & (r < j * width) & (polar.q > star)) * volume)
            for j in range(1, shells + 1)
        ]
    )
    report = DensityReport(
        center=tuple(point.tolist()),
        n=grid.n,
        lam=float(lam),
        lam_star=float(star),
        shell_width=width,
        radii=radii_arr,
        V=columns[0],
        A=columns[1],
        J=columns[2],
        modica=np.full(radii_arr.shape, np.nan),
        ball=columns[3],
        sublevel=columns[4],
        cell_layer=columns[5],
        layer_energy=columns[6],
        omega=omega,
        dominant_pairs=[None] * len(radii_arr),
    )
    LOGGER.info("Barrido cilíndrico: %d radios, 𝒱 máximo %.4g", len(radii_arr), report.V[-1])
    return report


# ----------------------------------------------------------------------
# Estructura de producto y empalmes
# ----------------------------------------------------------------------
@dataclass(frozen=True)
class ProductReport:
    verdict: str
    max_deviation: float
    k0: Optional[float]
    K0: Optional[float]

    def to_payload(self) -> Dict[str, object]:
        return {
            "verdict": self.verdict,
            "max_deviation": self.max_deviation,
            "k0": self.k0,
            "K0": self.K0,
        }


def product_structure_probe(u: Field, e: ConnectionProfile) -> ProductReport:
    """Ajusta sup_s|u(s,y) − e(s)| frente a d(y, ∂O)."""

    _check_truncation(u, e)
    lines = np.moveaxis(u.values, 0, -2)
    deviation = np.max(np.linalg.norm(lines - e.values, axis=-1), axis=-1)
    worst = float(deviation.max())
    if worst <= RIGID_TOL:
        LOGGER.info("Estructura de producto: RIGID (desviación %.3e)", worst)
        return ProductReport("RIGID", worst, None, None)
    h = u.grid.spacing
    inside = np.zeros(deviation.shape, dtype=bool)
    inside[tuple(slice(1, -1) for _ in deviation.shape)] = True
    depth = ndimage.distance_transform_edt(inside) * h
    top = int(math.floor(depth.max() / h + 1e-9))
    levels = h * np.arange(top + 1)
    sups = np.array(
        [float(deviation[np.abs(depth - d) < 0.5 * h].max(initial=0.0)) for d in levels]
    )
    window = (sups > RIGID_TOL) & (levels > 0)
    if np.count_nonzero(window) < 4:
        return ProductReport("NONRIGID", worst, None, None)
    slope, intercept = np.polyfit(levels[window], np.log(sups[window]), 1)
    report = ProductReport("NONRIGID", worst, float(-slope), float(math.exp(intercept)))
    LOGGER.info("Estructura de producto: k₀ = %.4g", report.k0)
    return report


@dataclass(frozen=True)
class SpliceReport:
    l: float
    delta: float
    bound: float

    @property
    def verdict(self) -> str:
        return "PASS" if self.delta >= -self.bound else "FAIL"

    def to_payload(self) -> Dict[str, object]:
        return {"l": self.l, "delta": self.delta, "bound": self.bound, "verdict": self.verdict}


def _fade(s: np.ndarray, inner: np.ndarray, outer: np.ndarray, l: float) -> np.ndarray:
    inner = np.asarray(inner, dtype=float)
    blend = np.clip(np.abs(s) - l, 0.0, 1.0).reshape((-1,) + (1,) * (inner.ndim - 1))
    return (1.0 - blend) * inner + blend * outer


def splice(e: ConnectionProfile, competitor: np.ndarray, l: float) -> np.ndarray:
    """Competidor en [−l, l], e fuera de [−l−1, l+1] y fundido lineal entre ambos."""

    return _fade(e.s, competitor, e.values, l)


def splice_check(e: ConnectionProfile, competitor: np.ndarray, l: float) -> SpliceReport:
    """A(empalme) − A(e) ≥ −K e^{−kl} para un competidor arbitrario en [−l, l]."""

    if not 0 < l < e.L - 1.0:
        raise ValueError("El empalme necesita 0 < l < L − 1.")
    spliced = splice(e, competitor, l)
    delta = float(line_action(spliced, e.spacing, e.spec)) - e.action
    k, K = e.tail
    bound = K * math.exp(-k * l) if np.isfinite(k) else 0.0
    return SpliceReport(l=float(l), delta=delta, bound=bound)


def cylinder_splice_check(
    u: Field,
    e: ConnectionProfile,
    competitor: np.ndarray,
    l: float,
    spec: Optional[PotentialSpec] = None,
) -> SpliceReport:
    """Empalme línea a línea del cilindro: competidor en |s| ≤ l, u en |s| ≥ l + 1.

    El competidor comparte con u el dato de borde transversal; la cota es
    K e^{−kl} por la medida de la sección.
    """

    _check_truncation(u, e)
    if not 0 < l < e.L - 1.0:
        raise ValueError("El empalme necesita 0 < l < L − 1.")
    competitor = np.asarray(competitor, dtype=float)
    if competitor.shape != u.values.shape:
        raise ValueError("El competidor debe tener la forma del campo del cilindro.")
    potential = spec or e.spec
    spliced = u.with_values(_fade(e.s, competitor, u.values, l))
    region = RegionMask.everything(u)
    delta = energy(spliced, region, potential) - energy(u, region, potential)
    k, K = e.tail
    transverse = 1.0
    for size in u.grid.shape[1:]:
        transverse *= (size - 1) * u.grid.spacing
    bound = K * math.exp(-k * l) * transverse if np.isfinite(k) else 0.0
    report = SpliceReport(l=float(l), delta=float(delta), bound=bound)
    if report.verdict == "FAIL":
        LOGGER.warning("Empalme cilíndrico en l = %g baja la energía %.3e", l, -delta)
    return report
