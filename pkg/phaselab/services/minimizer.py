"""Minimizadores locales de la energía por flujo gradiente y auditorías de minimalidad."""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, List, Optional, Tuple

import numpy as np
import pandas as pd
from scipy import ndimage

from phaselab.errors import NoConvergence
from phaselab.services.grid_field import (
    Field,
    RegionMask,
    energy,
    laplacian_values,
)
from phaselab.services.potentials import PotentialSpec

LOGGER = logging.getLogger(__name__)

DT_RULES = ("fixed", "adaptive")
# Fracción mínima del paso estable antes de aceptar sin más reducciones
DT_FLOOR = 1e-3
# Holgura relativa para aumentos de energía del orden del redondeo
ENERGY_SLACK = 1e-13

Projection = Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True)
class DescentSchedule:
    """Parámetros del flujo gradiente explícito."""

    dt0: Optional[float] = None
    dt_rule: str = "adaptive"
    tol: float = 1e-8
    max_iters: int = 1_000_000
    seed: int = 0
    log_every: int = 100

    def __post_init__(self) -> None:
        if self.dt0 is not None and not self.dt0 > 0:
            raise ValueError("dt0 debe ser positivo.")
        if self.dt_rule not in DT_RULES:
            raise ValueError(f"Regla de paso desconocida '{self.dt_rule}'.")
        if not self.tol > 0:
            raise ValueError("La tolerancia debe ser positiva.")
        if self.max_iters < 0:
            raise ValueError("max_iters no puede ser negativo.")


@dataclass
class ConvergenceLog:
    """Historial (iteración, paso, energía, residuo) de un descenso."""

    rows: List[Tuple[int, float, float, float, bool]] = field(default_factory=list)
    converged: bool = False
    iterations: int = 0
    rejected: int = 0
    # (iteración, aumento) de los pasos aceptados aunque la energía subiera
    increases: List[Tuple[int, float]] = field(default_factory=list)

    def record(
        self, iteration: int, dt: float, value: float, res: float, increased: bool = False
    ) -> None:
        self.rows.append((int(iteration), float(dt), float(value), float(res), bool(increased)))

    @property
    def monotone(self) -> bool:
        return not self.increases

    @property
    def energies(self) -> np.ndarray:
        return np.array([row[2] for row in self.rows])

    @property
    def final_residual(self) -> float:
        return self.rows[-1][3] if self.rows else float("nan")

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            self.rows, columns=["iter", "dt", "energy", "residual", "energy_increase"]
        )

    def to_csv(self, path: Path | str) -> Path:
        target = Path(path)
        target.parent.mkdir(parents=True, exist_ok=True)
        self.to_frame().to_csv(target, index=False, float_format="%.17g")
        return target


def stability_bound(f: Field, eps: float = 1.0) -> float:
    """Paso máximo h²/(2n·ε²) del esquema explícito."""

    return f.grid.spacing**2 / (2.0 * f.grid.n * eps**2)


def _dead_core(
    spec: PotentialSpec, current: np.ndarray, trial: np.ndarray, active: np.ndarray
) -> np.ndarray:
    """Fija en el pozo los nodos que lo cruzan o quedan a menos de q_min (α < 2)."""

    wells = spec.wells_array
    diff_now = current[..., None, :] - wells
    diff_next = trial[..., None, :] - wells
    nearest = np.argmin(np.sum(diff_now**2, axis=-1), axis=-1)
    take = np.take_along_axis
    now = take(diff_now, nearest[..., None, None], axis=-2)[..., 0, :]
    nxt = take(diff_next, nearest[..., None, None], axis=-2)[..., 0, :]
    crossed = np.sum(now * nxt, axis=-1) < 0.0
    close = np.linalg.norm(nxt, axis=-1) < spec.q_min
    snap = active & (crossed | close)
    if np.any(snap):
        trial = trial.copy()
        trial[snap] = wells[nearest[snap]]
    return trial


def descend(
    f0: Field,
    spec: PotentialSpec,
    sched: DescentSchedule,
    eps: float = 1.0,
    project: Optional[Projection] = None,
    raise_on_failure: bool = True,
) -> Tuple[Field, ConvergenceLog]:
    """Itera ``u ← u + dt(ε²Δu − W_u(u))`` con los nodos Dirichlet congelados."""

    if not eps > 0:
        raise ValueError("ε debe ser positivo.")
    if f0.m != spec.m:
        raise ValueError(f"El campo tiene {f0.m} componentes y el potencial {spec.m}.")
    bound = stability_bound(f0, eps)
    dt = sched.dt0 if sched.dt0 is not None else 0.9 * bound
    if dt > bound:
        LOGGER.warning("dt0 = %g supera la cota de estabilidad %g; se recorta", dt, bound)
        dt = bound
    floor = DT_FLOOR * bound
    region = RegionMask.everything(f0)
    interior = f0.interior
    spacing = f0.grid.spacing
    u = f0.values.copy()
    if project is not None:
        u = project(u)
    current = energy(Field(f0.grid, u, f0.mask), region, spec, eps)
    log = ConvergenceLog()
    res = float("inf")
    iteration = 0
    while True:
        lap = laplacian_values(u, f0.mask, spacing)
        grad, pinned = spec.gradient(u)
        force = eps**2 * lap - grad
        force[~interior] = 0.0
        if np.any(pinned):
            # Núcleo muerto: un nodo en el pozo sólo se mueve si sus vecinos lo arrastran más de q_min
            held = pinned & (dt * np.linalg.norm(force, axis=-1) <= spec.q_min)
            force[held] = 0.0
            active_force = force[interior & ~pinned]
        else:
            active_force = force[interior]
        res = float(np.linalg.norm(active_force, axis=-1).max()) if active_force.size else 0.0
        if iteration % sched.log_every == 0 and not (log.rows and log.rows[-1][0] == iteration):
            log.record(iteration, dt, current, res)
        if res <= sched.tol:
            log.converged = True
            break
        if iteration >= sched.max_iters:
            break
        while True:
            trial = u + dt * force
            if not spec.quadratic:
                trial = _dead_core(spec, u, trial, interior)
            if project is not None:
                trial = project(trial)
            candidate = energy(Field(f0.grid, trial, f0.mask), region, spec, eps)
            increased = candidate > current + ENERGY_SLACK * max(1.0, abs(current))
            if sched.dt_rule == "fixed" or not increased or dt <= floor:
                break
            dt = max(0.5 * dt, floor)
            log.rejected += 1
        if increased:
            # Paso aceptado en el suelo de dt (o con dt fijo) aunque la energía sube
            log.increases.append((iteration + 1, candidate - current))
            log.record(iteration + 1, dt, candidate, res, increased=True)
            LOGGER.warning(
                "Iteración %d: la energía sube %.3e con dt = %.3e", iteration + 1, candidate - current, dt
            )
        u = trial
        current = candidate
        iteration += 1
        if sched.dt_rule == "adaptive":
            dt = min(1.1 * dt, bound)
    if not log.rows or log.rows[-1][0] != iteration:
        log.record(iteration, dt, current, res)
    log.iterations = iteration
    result = Field(f0.grid, u, f0.mask.copy())
    if log.converged:
        LOGGER.info("Descenso convergido en %d iteraciones (residuo %.3e)", iteration, res)
        return result, log
    message = f"Sin convergencia tras {iteration} iteraciones (residuo {res:.3e} > {sched.tol:.1e})."
    if raise_on_failure:
        raise NoConvergence(message, best=result, log=log)
    LOGGER.warning(message)
    return result, log


# ----------------------------------------------------------------------
# Clase simétrica u(x̂) = û(x)
# ----------------------------------------------------------------------
def symmetry_projector(f: Field) -> Projection:
    """Proyección ½(u(x) + û(x̂)) respecto del hiperplano {x₁ = 0}."""

    grid = f.grid
    if not math.isclose(grid.origin[0], -grid.upper[0], abs_tol=1e-12 * max(1.0, grid.upper[0])):
        raise ValueError("La malla no es simétrica respecto de x₁ = 0.")
    if not np.array_equal(f.mask, np.flip(f.mask, axis=0)):
        raise ValueError("La máscara de dominio no es simétrica respecto de x₁ = 0.")

    def _project(values: np.ndarray) -> np.ndarray:
        mirrored = np.flip(values, axis=0).copy()
        mirrored[..., 0] *= -1.0
        return 0.5 * (values + mirrored)

    return _project


def symmetry_defect(f: Field) -> float:
    """‖u(x̂) − û(x)‖_∞ sobre los nodos del dominio."""

    mirrored = np.flip(f.values, axis=0).copy()
    mirrored[..., 0] *= -1.0
    gap = np.linalg.norm(f.values - mirrored, axis=-1)
    return float(gap[f.nonexterior].max())


def descend_symmetric(
    f0: Field,
    spec: PotentialSpec,
    sched: DescentSchedule,
    eps: float = 1.0,
    raise_on_failure: bool = True,
) -> Tuple[Field, ConvergenceLog]:
    if not spec.symmetric:
        raise ValueError("El potencial no declara simetría de reflexión.")
    project = symmetry_projector(f0)
    bc = f0.values[f0.dirichlet]
    projected_bc = project(f0.values)[f0.dirichlet]
    if not np.allclose(bc, projected_bc, atol=1e-12):
        raise ValueError("El dato de borde no pertenece a la clase simétrica.")
    return descend(f0, spec, sched, eps=eps, project=project, raise_on_failure=raise_on_failure)


# ----------------------------------------------------------------------
# Arranques múltiples
# ----------------------------------------------------------------------
@dataclass
class MultiStartResult:
    best: Field
    log: ConvergenceLog
    index: int
    energies: List[float]
    converged: List[bool]
    fields: List[Field]


def multistart(
    f0: Field,
    spec: PotentialSpec,
    sched: DescentSchedule,
    starts: int = 8,
    noise: float = 0.1,
    eps: float = 1.0,
    threads: int = 1,
    symmetric: bool = False,
) -> MultiStartResult:
    """Descensos independientes desde ``f0`` más ruido sembrado; se conserva la menor energía."""

    if starts < 1:
        raise ValueError("Se necesita al menos un arranque.")
    children = np.random.SeedSequence(sched.seed).spawn(starts)
    initial: List[Field] = []
    for child in children:
        rng = np.random.default_rng(child)
        perturbation = noise * rng.standard_normal(f0.values.shape)
        initial.append(f0.with_values(f0.values + perturbation))

    def _run(start: Field) -> Tuple[Field, ConvergenceLog]:
        if symmetric:
            return descend_symmetric(start, spec, sched, eps=eps, raise_on_failure=False)
        return descend(start, spec, sched, eps=eps, raise_on_failure=False)

    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        runs = list(pool.map(_run, initial))
    region = RegionMask.everything(f0)
    energies = [energy(run, region, spec, eps) for run, _ in runs]
    converged = [log.converged for _, log in runs]
    order = sorted(range(starts), key=lambda k: (not converged[k], energies[k], k))
    best = order[0]
    LOGGER.info(
        "Arranques múltiples: %d/%d convergidos, mejor energía %.10g (arranque %d)",
        sum(converged),
        starts,
        energies[best],
        best,
    )
    return MultiStartResult(
        best=runs[best][0],
        log=runs[best][1],
        index=best,
        energies=energies,
        converged=converged,
        fields=[run for run, _ in runs],
    )


# ----------------------------------------------------------------------
# Auditoría de minimalidad por perturbaciones
# ----------------------------------------------------------------------
@dataclass(frozen=True)
class MinimalityAudit:
    trials: int = 100
    radius: float = 1.0
    amplitude: float = 0.01
    seed: int = 0


@dataclass(frozen=True)
class AuditReport:
    deltas: List[float]
    tolerance: float
    base_energy: float

    @property
    def min_delta(self) -> float:
        return min(self.deltas) if self.deltas else 0.0

    @property
    def verdict(self) -> str:
        return "PASS" if self.min_delta >= -self.tolerance else "FAIL"

    def to_payload(self) -> dict:
        return {
            "verdict": self.verdict,
            "min_delta": self.min_delta,
            "tolerance": self.tolerance,
            "base_energy": self.base_energy,
            "trials": len(self.deltas),
        }


def bump(grid_coords: np.ndarray, center: np.ndarray, radius: float) -> np.ndarray:
    """Molificador exp(1 − 1/(1 − r²/ρ²)) con soporte compacto en B_ρ(center)."""

    r2 = np.sum((grid_coords - center) ** 2, axis=-1) / radius**2
    out = np.zeros(r2.shape)
    inside = r2 < 1.0
    out[inside] = np.exp(1.0 - 1.0 / (1.0 - r2[inside]))
    return out


def audit_minimality(
    f: Field,
    spec: PotentialSpec,
    audit: MinimalityAudit,
    eps: float = 1.0,
    tol_audit: Optional[float] = None,
) -> AuditReport:
    """Evalúa ΔJ = J(u+v) − J(u) para perturbaciones suaves que se anulan fuera del interior."""

    region = RegionMask.everything(f)
    base = energy(f, region, spec, eps)
    tolerance = tol_audit if tol_audit is not None else 1e-8 * abs(base)
    depth = ndimage.distance_transform_edt(f.interior) * f.grid.spacing
    candidates = np.argwhere(depth > audit.radius)
    if candidates.size == 0:
        raise ValueError("No hay nodos interiores a distancia suficiente del borde para la perturbación.")
    coords = f.grid.coordinates()
    rng = np.random.default_rng(audit.seed)
    deltas: List[float] = []
    for _ in range(audit.trials):
        center = coords[tuple(candidates[rng.integers(len(candidates))])]
        direction = rng.standard_normal(f.m)
        direction /= np.linalg.norm(direction)
        profile = bump(coords, center, audit.radius) * f.interior
        perturbed = f.values + audit.amplitude * profile[..., None] * direction
        deltas.append(energy(Field(f.grid, perturbed, f.mask), region, spec, eps) - base)
    report = AuditReport(deltas=deltas, tolerance=tolerance, base_energy=base)
    LOGGER.info("Auditoría de minimalidad: %s (min ΔJ = %.3e)", report.verdict, report.min_delta)
    return report
