"""Cantidades de densidad y crecimiento de energía sobre bolas, ajustes de exponentes y sondas.

Las constantes siempre se informan junto con su ventana y la cota de capa de
celdas, nunca como un simple booleano.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy import ndimage, optimize, special

from phaselab.errors import DegenerateWindow, NoDecayWindow, OutOfDomain, UnsupportedAlpha
from phaselab.services.grid_field import (
    Field,
    RegionMask,
    cell_layer_bound,
    cells_inside,
    corner_average,
    energy,
    kinetic_cells,
    measure_sublevel,
    measure_superlevel,
    modica_mortola,
    potential_cells,
    region_measure,
    sublevel_potential_integral,
)
from phaselab.services.minimizer import DescentSchedule, descend
from phaselab.services.polar import helmholtz_profile
from phaselab.services.potentials import PotentialSpec

LOGGER = logging.getLogger(__name__)

CONSTANT_THRESHOLD = 1e-6


@dataclass
class DensityReport:
    """Medidas por radio alrededor de un centro y medidas de capas ω_j."""

    center: Tuple[float, ...]
    n: int
    lam: float
    lam_star: float
    shell_width: float
    radii: np.ndarray
    V: np.ndarray
    A: np.ndarray
    J: np.ndarray
    modica: np.ndarray
    ball: np.ndarray
    sublevel: np.ndarray
    cell_layer: np.ndarray
    layer_energy: np.ndarray
    omega: np.ndarray
    dominant_pairs: List[Optional[str]] = field(default_factory=list)

    def to_frame(self) -> pd.DataFrame:
        frame = pd.DataFrame(
            {
                "R": self.radii,
                "V": self.V,
                "A": self.A,
                "J": self.J,
                "modica_mortola": self.modica,
                "ball": self.ball,
                "sublevel": self.sublevel,
                "cell_layer": self.cell_layer,
                "layer_energy": self.layer_energy,
            }
        )
        if any(pair is not None for pair in self.dominant_pairs):
            frame["dominant_pair"] = self.dominant_pairs
        return frame

    def shells_frame(self) -> pd.DataFrame:
        j = np.arange(1, len(self.omega) + 1)
        return pd.DataFrame({"j": j, "outer": j * self.shell_width, "omega": self.omega})

    def to_payload(self) -> Dict[str, object]:
        return {
            "center": list(self.center),
            "n": self.n,
            "lambda": self.lam,
            "lambda_star": self.lam_star,
            "shell_width": self.shell_width,
            "radii": self.radii.tolist(),
            "V": self.V.tolist(),
            "A": self.A.tolist(),
            "J": self.J.tolist(),
            "modica_mortola": self.modica.tolist(),
            "cell_layer": self.cell_layer.tolist(),
            "omega": self.omega.tolist(),
            "dominant_pairs": list(self.dominant_pairs),
        }


def _check_radii(f: Field, center: np.ndarray, radii: np.ndarray) -> None:
    if radii.size == 0:
        raise ValueError("Se necesita al menos un radio.")
    if np.any(radii <= 0) or np.any(np.diff(radii) <= 0):
        raise ValueError("Los radios deben ser positivos y crecientes.")
    room = np.minimum(center - np.asarray(f.grid.origin), np.asarray(f.grid.upper) - center)
    if radii[-1] > room.min() + 1e-9:
        raise OutOfDomain(
            f"El radio {radii[-1]:g} no cabe en la malla alrededor de {center.tolist()!r}."
        )


def _layer_energy(f: Field, spec: PotentialSpec, center: np.ndarray, radius: float) -> float:
    """Energía de las celdas cuyo centro cae en la capa de ancho √n·h alrededor de la esfera."""

    n = f.grid.n
    h = f.grid.spacing
    density = 0.5 * kinetic_cells(f.values, h, n) + potential_cells(f, spec)
    centers = corner_average(f.grid.coordinates(), n)
    r = np.sqrt(np.sum((centers - center) ** 2, axis=-1))
    band = (np.abs(r - radius) <= 0.5 * math.sqrt(n) * h) & cells_inside(f.nonexterior)
    return float(np.sum(density[band]) * f.grid.cell_volume)


def _dominant_pair(f: Field, spec: PotentialSpec, region: RegionMask, lam: float) -> Optional[str]:
    if len(spec.wells) < 3:
        return None
    measures = [measure_sublevel(f, well, lam, region) for well in spec.wells]
    first, second = sorted(np.argsort(measures)[::-1][:2].tolist())
    return f"{first}-{second}"


def scan(
    f: Field,
    a: Sequence[float],
    center: Sequence[float],
    radii: Sequence[float],
    lam: float,
    spec: PotentialSpec,
    lam_star: Optional[float] = None,
    shell_width: Optional[float] = None,
    threads: int = 1,
) -> DensityReport:
    """Llena V_R, A_R y J_R por radio; las capas ω_j usan λ* (por omisión λ)."""

    if not lam > 0:
        raise ValueError("λ debe ser positivo.")
    point = np.asarray(center, dtype=float)
    if point.shape != (f.grid.n,):
        raise ValueError("El centro debe tener una coordenada por eje de la malla.")
    radii_arr = np.asarray(radii, dtype=float)
    _check_radii(f, point, radii_arr)
    star = lam if lam_star is None else lam_star
    width = shell_width if shell_width is not None else 2.0 * f.grid.spacing
    if not width > 0:
        raise ValueError("El ancho de capa debe ser positivo.")

    def _per_radius(radius: float) -> Tuple[float, ...]:
        region = RegionMask.ball(f.grid, point, radius)
        return (
            measure_superlevel(f, a, lam, region),
            sublevel_potential_integral(f, a, lam, region, spec),
            energy(f, region, spec),
            modica_mortola(f, region, spec),
            region_measure(f, region),
            measure_sublevel(f, a, lam, region),
            cell_layer_bound(f.grid, point, radius),
            _layer_energy(f, spec, point, radius),
            _dominant_pair(f, spec, region, lam),
        )

    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        rows = list(pool.map(_per_radius, radii_arr.tolist()))

    shells = int(math.floor(radii_arr[-1] / width + 1e-9))
    omega = np.array(
        [
            measure_superlevel(
                f, a, star, RegionMask.annulus(f.grid, point, (j - 1) * width, j * width)
            )
            for j in range(1, shells + 1)
        ]
    )
    columns = list(zip(*rows))
    report = DensityReport(
        center=tuple(point.tolist()),
        n=f.grid.n,
        lam=float(lam),
        lam_star=float(star),
        shell_width=float(width),
        radii=radii_arr,
        V=np.array(columns[0]),
        A=np.array(columns[1]),
        J=np.array(columns[2]),
        modica=np.array(columns[3]),
        ball=np.array(columns[4]),
        sublevel=np.array(columns[5]),
        cell_layer=np.array(columns[6]),
        layer_energy=np.array(columns[7]),
        omega=omega,
        dominant_pairs=list(columns[8]),
    )
    LOGGER.info(
        "Barrido de densidad: %d radios hasta %g, %d capas de ancho %g",
        len(radii_arr),
        radii_arr[-1],
        shells,
        width,
    )
    return report


# ----------------------------------------------------------------------
# Ajuste de exponentes
# ----------------------------------------------------------------------
@dataclass(frozen=True)
class ExponentFit:
    exponent: float
    intercept: float
    window: Tuple[float, float]
    residual: float
    points: int
    dropped: int = 0

    def to_payload(self) -> Dict[str, object]:
        return {
            "exponent": self.exponent,
            "intercept": self.intercept,
            "window": list(self.window),
            "residual": self.residual,
            "points": self.points,
            "dropped": self.dropped,
        }


def fit_exponent(
    values: Sequence[float],
    radii: Sequence[float],
    window: Optional[Tuple[float, float]] = None,
) -> ExponentFit:
    """Pendiente por mínimos cuadrados de log(valor) frente a log(R)."""

    v = np.asarray(values, dtype=float)
    r = np.asarray(radii, dtype=float)
    if v.shape != r.shape:
        raise ValueError("Valores y radios deben tener la misma longitud.")
    lo, hi = window if window is not None else (float(r.min()), float(r.max()))
    inside = (r >= lo) & (r <= hi) & (r > 0)
    usable = inside & (v > 0)
    dropped = int(np.count_nonzero(inside & ~usable))
    if dropped:
        LOGGER.warning("Ajuste de exponente: %d valores no positivos excluidos", dropped)
    if np.count_nonzero(usable) < 4:
        raise DegenerateWindow(
            f"La ventana [{lo:g}, {hi:g}] tiene {int(np.count_nonzero(usable))} puntos utilizables; se necesitan 4."
        )
    x = np.log(r[usable])
    y = np.log(v[usable])
    slope, intercept = np.polyfit(x, y, 1)
    residual = float(np.max(np.abs(y - (slope * x + intercept))))
    return ExponentFit(
        exponent=float(slope),
        intercept=float(intercept),
        window=(float(lo), float(hi)),
        residual=residual,
        points=int(np.count_nonzero(usable)),
        dropped=dropped,
    )


# ----------------------------------------------------------------------
# Esquemas en diferencias
# ----------------------------------------------------------------------
def sphere_area(n: int) -> float:
    """Área de la esfera unidad de R^n, 2π^{n/2}/Γ(n/2)."""

    return 2.0 * math.pi ** (0.5 * n) / special.gamma(0.5 * n)


def shell_inequality_sides(
    omega: Sequence[float], c2: float, width: float, n: int
) -> Tuple[np.ndarray, np.ndarray]:
    """Para cada k devuelve ((Σ_{j≤k} ω_j)^{(n−1)/n}, Σ_j e^{−c₂jT}ω_{k+1−j} + ω_{k+1})."""

    w = np.asarray(omega, dtype=float)
    partial = np.cumsum(w)
    power = (n - 1.0) / n
    lhs = []
    rhs = []
    for k in range(1, len(w)):
        weights = np.exp(-c2 * width * np.arange(1, k + 1))
        tail = float(np.sum(weights * w[k - 1 :: -1][:k]))
        lhs.append(partial[k - 1] ** power)
        rhs.append(tail + w[k])
    return np.array(lhs), np.array(rhs)


def _largest_constant(lhs: np.ndarray, rhs: np.ndarray) -> float:
    active = lhs > 0
    if not np.any(active):
        return float("inf")
    return float(np.min(rhs[active] / lhs[active]))


def shell_inequality_constant(omega: Sequence[float], c2: float, width: float, n: int) -> float:
    """Mayor C₀ con C₀(Σω_j)^{(n−1)/n} ≤ Σ e^{−c₂jT}ω_{k+1−j} + ω_{k+1} para todo k."""

    lhs, rhs = shell_inequality_sides(omega, c2, width, n)
    return _largest_constant(lhs, rhs)


@dataclass
class SchemeReport:
    pair_radii: np.ndarray
    caff_lhs: np.ndarray
    caff_rhs: np.ndarray
    caff_constant: float
    basic_lhs: np.ndarray
    basic_rhs: np.ndarray
    basic_constant: float
    c2: float
    width: float

    @property
    def verdict(self) -> str:
        return "PASS" if self.caff_constant > 0 and self.basic_constant > 0 else "FAIL"

    def to_frame(self) -> pd.DataFrame:
        caff = pd.DataFrame(
            {"R": self.pair_radii, "kind": "caff", "lhs": self.caff_lhs, "rhs": self.caff_rhs}
        )
        basic = pd.DataFrame(
            {
                "R": self.width * np.arange(1, len(self.basic_lhs) + 1),
                "kind": "basic",
                "lhs": self.basic_lhs,
                "rhs": self.basic_rhs,
            }
        )
        return pd.concat([caff, basic], ignore_index=True)

    def to_payload(self) -> Dict[str, object]:
        return {
            "verdict": self.verdict,
            "caff_constant": self.caff_constant,
            "basic_constant": self.basic_constant,
            "c2": self.c2,
            "width": self.width,
        }


def difference_scheme_check(
    report: DensityReport,
    T: Optional[float] = None,
    c2: Optional[float] = None,
    c1: float = 1.0,
) -> SchemeReport:
    """Evalúa ambos lados de los dos esquemas en diferencias sobre un informe medido.

    Esquema de capas: ``C(V_{R−T}^{(n−1)/n} + V_{R−T}) ≤ (V_R − V_{R−T}) + (A_R − A_{R−T})``.
    Esquema básico: ``C₀(Σ_{j≤k}ω_j)^{(n−1)/n} ≤ Σ_j e^{−c₂jT}ω_{k+1−j} + ω_{k+1}``.
    Sin ``c2`` se toma el de la solución radial de Δφ = c₁φ en la bola mayor.
    """

    width = report.shell_width if T is None else float(T)
    n = report.n
    if c2 is None:
        c2 = helmholtz_profile(float(report.radii[-1]), c1, n=n, nodes=2001).c2
    power = (n - 1.0) / n
    pairs, lhs, rhs = [], [], []
    for i, radius in enumerate(report.radii):
        match = np.flatnonzero(np.isclose(report.radii, radius - width, atol=1e-9))
        if match.size == 0:
            continue
        j = int(match[0])
        inner = report.V[j]
        pairs.append(radius)
        lhs.append(inner**power + inner)
        rhs.append((report.V[i] - inner) + (report.A[i] - report.A[j]))
    caff_lhs = np.array(lhs)
    caff_rhs = np.array(rhs)
    caff_constant = _largest_constant(caff_lhs, caff_rhs)
    basic_lhs, basic_rhs = shell_inequality_sides(report.omega, c2, width, n)
    basic_constant = _largest_constant(basic_lhs, basic_rhs)
    scheme = SchemeReport(
        pair_radii=np.array(pairs),
        caff_lhs=caff_lhs,
        caff_rhs=caff_rhs,
        caff_constant=caff_constant,
        basic_lhs=basic_lhs,
        basic_rhs=basic_rhs,
        basic_constant=basic_constant,
        c2=float(c2),
        width=width,
    )
    LOGGER.info(
        "Esquemas en diferencias: C(λ) = %.4g, C₀ = %.4g (%s)",
        caff_constant,
        basic_constant,
        scheme.verdict,
    )
    return scheme


def growth_threshold(C0: float, n: int) -> float:
    """c* = (C₀/(2^{n+1}n^{(n−1)/n}))^n, tasa mínima garantizada por la inducción de capas."""

    if not C0 > 0:
        raise ValueError("C₀ debe ser positivo.")
    return (C0 / (2.0 ** (n + 1) * n ** ((n - 1.0) / n))) ** n


def minimal_shell_width(C0: float, c2: float, n: int) -> float:
    """Menor T tal que ηTⁿε/(1−ε) ≤ C₀/2^{n+1}·(c*/n)^{(n−1)/n} con ε = e^{−c₂T}."""

    if not c2 > 0:
        raise ValueError("c₂ debe ser positivo.")
    c_star = growth_threshold(C0, n)
    target = C0 / 2.0 ** (n + 1) * (c_star / n) ** ((n - 1.0) / n)
    eta = sphere_area(n)

    def _excess(width: float) -> float:
        eps = math.exp(-c2 * width)
        return eta * width**n * eps / (1.0 - eps) - target

    upper = (n + 10.0) / c2
    peak = optimize.minimize_scalar(
        lambda t: -_excess(t), bounds=(1e-9, upper), method="bounded"
    ).x
    if _excess(peak) <= 0.0:
        return 0.0
    hi = max(upper, 2.0 * peak)
    while _excess(hi) > 0.0:
        hi *= 2.0
    return float(optimize.brentq(_excess, peak, hi, xtol=1e-12))


def minimal_sequence(
    C0: float, c2: float, width: float, n: int, count: int, omega1: float
) -> np.ndarray:
    """Sucesión que satura el esquema básico, truncada a [0, η j^{n−1}Tⁿ]."""

    eta = sphere_area(n)
    omega = np.zeros(count)
    omega[0] = omega1
    power = (n - 1.0) / n
    for k in range(1, count):
        weights = np.exp(-c2 * width * np.arange(1, k + 1))
        tail = float(np.sum(weights * omega[k - 1 :: -1][:k]))
        value = C0 * float(np.sum(omega[:k])) ** power - tail
        cap = eta * (k + 1) ** (n - 1) * width**n
        omega[k] = min(max(0.0, value), cap)
    return omega


# ----------------------------------------------------------------------
# Sondas de Liouville y de decaimiento
# ----------------------------------------------------------------------
def boundary_distance(f: Field) -> np.ndarray:
    """Distancia euclídea de cada nodo interior al nodo no interior más cercano."""

    return ndimage.distance_transform_edt(f.interior) * f.grid.spacing


@dataclass(frozen=True)
class LiouvilleReport:
    depths: List[float]
    sup_deviation: List[float]
    innermost: float
    verdict: str

    def to_payload(self) -> Dict[str, object]:
        return {
            "verdict": self.verdict,
            "innermost": self.innermost,
            "depths": list(self.depths),
            "sup_deviation": list(self.sup_deviation),
        }


def liouville_probe(
    f: Field, a: Sequence[float], spec: Optional[PotentialSpec] = None
) -> LiouvilleReport:
    """sup|u−a| sobre nodos interiores a distancia ≥ d del borde, en función de d."""

    depth = boundary_distance(f)
    deviation = np.linalg.norm(f.values - np.asarray(a, dtype=float), axis=-1)
    interior = f.interior
    if not np.any(interior):
        raise ValueError("El campo no tiene nodos interiores.")
    levels = np.unique(np.round(depth[interior] / f.grid.spacing, 9)) * f.grid.spacing
    sups = [float(deviation[interior & (depth >= d - 1e-12)].max()) for d in levels]
    innermost = sups[-1]
    verdict = "CONSTANT" if innermost <= CONSTANT_THRESHOLD else "NONCONSTANT"
    LOGGER.info("Sonda de Liouville: %s (desviación interior %.3e)", verdict, innermost)
    return LiouvilleReport(
        depths=levels.tolist(), sup_deviation=sups, innermost=innermost, verdict=verdict
    )


@dataclass(frozen=True)
class DecayFit:
    k: float
    K: float
    residual: float
    window: Tuple[float, float]
    points: int

    def to_payload(self) -> Dict[str, object]:
        return {
            "k": self.k,
            "K": self.K,
            "residual": self.residual,
            "window": list(self.window),
            "points": self.points,
        }


def exp_decay_profile(f: Field, a: Sequence[float]) -> Tuple[np.ndarray, np.ndarray]:
    """sup de |u−a| por nivel de distancia al borde (niveles múltiplos de h)."""

    h = f.grid.spacing
    depth = ndimage.distance_transform_edt(f.interior) * h
    deviation = np.linalg.norm(f.values - np.asarray(a, dtype=float), axis=-1)
    nodes = f.nonexterior
    top = int(math.floor(depth[nodes].max() / h + 1e-9))
    levels = h * np.arange(top + 1)
    sups = np.array(
        [
            float(deviation[nodes & (np.abs(depth - d) < 0.5 * h)].max(initial=0.0))
            for d in levels
        ]
    )
    return levels, sups


def exp_decay_probe(
    f: Field,
    a: Sequence[float],
    spec: Optional[PotentialSpec] = None,
    lam: float = 0.5,
    floor: float = CONSTANT_THRESHOLD,
) -> DecayFit:
    """Ajusta log sup_{d(x,∂D)=d}|u−a| ≈ log K − k·d en la ventana floor < sup < λ."""

    if spec is not None and not spec.quadratic:
        raise UnsupportedAlpha("La sonda de decaimiento exponencial requiere α = 2.")
    levels, sups = exp_decay_profile(f, a)
    window = (sups > floor) & (sups < lam)
    if not np.any(sups < lam) or not np.any(window):
        raise NoDecayWindow("El perfil nunca entra en la ventana de decaimiento.")
    if np.count_nonzero(window) < 4:
        raise NoDecayWindow(
            f"La ventana de decaimiento sólo tiene {int(np.count_nonzero(window))} niveles."
        )
    x = levels[window]
    y = np.log(sups[window])
    slope, intercept = np.polyfit(x, y, 1)
    residual = float(np.max(np.abs(y - (slope * x + intercept))))
    fit = DecayFit(
        k=float(-slope),
        K=float(math.exp(intercept)),
        residual=residual,
        window=(float(x.min()), float(x.max())),
        points=int(x.size),
    )
    LOGGER.info("Decaimiento exponencial: k = %.4g, K = %.4g", fit.k, fit.K)
    return fit


# ----------------------------------------------------------------------
# Cota inferior de energía
# ----------------------------------------------------------------------
@dataclass(frozen=True)
class LowerBoundReport:
    verdict: str
    constant: float
    window: Tuple[float, float]
    normalized: List[float]
    violations: List[float]
    modica_below_energy: bool
    weak_bound: List[float]

    def to_payload(self) -> Dict[str, object]:
        return {
            "verdict": self.verdict,
            "constant": self.constant,
            "window": list(self.window),
            "normalized": list(self.normalized),
            "violations": list(self.violations),
            "modica_below_energy": self.modica_below_energy,
            "weak_bound": list(self.weak_bound),
        }


def lower_bound_check(report: DensityReport) -> LowerBoundReport:
    """J_R ≥ cR^{n−1} con el mayor c de la ventana y J_R/R^{n−2} no decreciente.

    La monotonía se acepta con tolerancia igual a la energía de las capas de
    celdas que cortan ambas esferas.
    """

    radii = report.radii
    window = (float(radii[0]), float(radii[-1]))
    if not np.any(report.J > 0):
        LOGGER.info("Cota inferior omitida: el campo es constante")
        return LowerBoundReport("SKIPPED", 0.0, window, [], [], True, [])
    n = report.n
    constant = float(np.min(report.J / radii ** (n - 1)))
    normalized = report.J / radii ** (n - 2)
    violations: List[float] = []
    for i in range(len(radii) - 1):
        slack = (report.layer_energy[i] + report.layer_energy[i + 1]) / radii[i + 1] ** (n - 2)
        if normalized[i + 1] < normalized[i] - slack:
            violations.append(float(radii[i + 1]))
    modica_ok = bool(np.all(report.modica <= report.J * (1.0 + 1e-12) + 1e-300))
    weak = report.J[0] * (radii / radii[0]) ** (n - 2)
    verdict = "PASS" if constant > 0 and not violations and modica_ok else "FAIL"
    if violations:
        LOGGER.warning("La monotonía de J_R/R^(n−2) falla en R = %s", violations)
    return LowerBoundReport(
        verdict=verdict,
        constant=constant,
        window=window,
        normalized=normalized.tolist(),
        violations=violations,
        modica_below_energy=modica_ok,
        weak_bound=weak.tolist(),
    )


# ----------------------------------------------------------------------
# Estimación empírica de R(λ)
# ----------------------------------------------------------------------
@dataclass(frozen=True)
class RadiusEstimate:
    radius: Optional[float]
    lam: float
    rows: List[Tuple[float, int, float]]

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(self.rows, columns=["R", "sample", "center_deviation"])


def blocking_radius_estimate(
    builder: Callable[[float, int], Field],
    radii: Sequence[float],
    lam: float,
    a: Sequence[float],
    spec: PotentialSpec,
    sched: DescentSchedule,
    samples: int = 4,
) -> RadiusEstimate:
    """Menor radio con |u(x₀)−a| < λ para todos los datos de borde del conjunto.

    ``builder(R, sample)`` devuelve el campo inicial en una bola de radio R
    centrada en x₀ = 0.
    """

    well = np.asarray(a, dtype=float)
    rows: List[Tuple[float, int, float]] = []
    found: Optional[float] = None
    for radius in sorted(float(r) for r in radii):
        worst = 0.0
        for sample in range(samples):
            start = builder(radius, sample)
            result, _ = descend(start, spec, sched)
            center = tuple(
                int(np.argmin(np.abs(axis))) for axis in result.grid.axes()
            )
            deviation = float(np.linalg.norm(result.values[center] - well))
            rows.append((radius, sample, deviation))
            worst = max(worst, deviation)
        if worst < lam and found is None:
            found = radius
    LOGGER.info("Radio de bloqueo estimado para λ = %g: %s", lam, found)
    return RadiusEstimate(radius=found, lam=float(lam), rows=rows)
