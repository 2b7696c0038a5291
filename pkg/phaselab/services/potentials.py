"""Familia de potenciales multipozo, sus derivadas y verificadores de hipótesis."""

from __future__ import annotations

import itertools
import logging
import math
from dataclasses import dataclass, replace
from typing import Dict, List, Optional, Sequence, Tuple

import networkx as nx
import numpy as np

from phaselab.config import Config
from phaselab.errors import DegenerateGradient, HypothesisViolated, UnsupportedAlpha

LOGGER = logging.getLogger(__name__)

Q_MIN: float = Config().Q_MIN

FORMS = ("product", "twopath")


@dataclass(frozen=True)
class PotentialSpec:
    """Potencial W con pozos aislados y derivadas analíticas.

    ``product`` es ``scale·Π_j |u−a_j|^α`` (producto de distancias al cuadrado
    cuando α = 2). ``twopath`` es la cuártica simétrica de dos pozos (±1, 0)
    con dos conexiones curvas ``e₊``/``e₋`` y la recta como punto de silla.
    """

    m: int
    wells: Tuple[Tuple[float, ...], ...]
    alpha: float = 2.0
    form: str = "product"
    scale: float = 1.0
    gamma: float = 0.9
    mu: float = 0.1
    symmetric: bool = False
    q_min: float = Q_MIN
    name: str = ""

    def __post_init__(self) -> None:
        if self.m < 1 or self.m > 4:
            raise ValueError(f"La dimensión del espacio de llegada debe estar en [1, 4], no {self.m}.")
        if self.form not in FORMS:
            raise ValueError(f"Forma de potencial desconocida '{self.form}'.")
        if not 0.0 < self.alpha <= 2.0:
            raise ValueError(f"El exponente α debe estar en (0, 2], no {self.alpha}.")
        if not self.wells:
            raise ValueError("Se necesita al menos un pozo.")
        for well in self.wells:
            if len(well) != self.m:
                raise ValueError(f"El pozo {well!r} no tiene {self.m} componentes.")
        if len(set(self.wells)) != len(self.wells):
            raise ValueError("Los pozos deben ser puntos distintos.")
        if self.scale <= 0:
            raise ValueError("El factor de escala debe ser positivo.")
        if self.form == "twopath":
            if self.m != 2 or self.alpha != 2.0:
                raise ValueError("La forma 'twopath' sólo existe con m = 2 y α = 2.")
            if not 0.0 < self.mu < self.gamma < 1.0:
                raise ValueError("La forma 'twopath' requiere 0 < μ < γ < 1.")

    @property
    def wells_array(self) -> np.ndarray:
        return np.asarray(self.wells, dtype=float)

    @property
    def quadratic(self) -> bool:
        return self.alpha == 2.0

    def well(self, index: int) -> np.ndarray:
        try:
            return self.wells_array[index]
        except IndexError as exc:
            raise ValueError(f"El potencial no tiene pozo {index}.") from exc

    def well_separation(self) -> float:
        """Distancia mínima entre dos pozos distintos (1 si sólo hay uno)."""

        points = self.wells_array
        if len(points) < 2:
            return 1.0
        return min(
            float(np.linalg.norm(points[i] - points[j]))
            for i, j in itertools.combinations(range(len(points)), 2)
        )

    # ------------------------------------------------------------------
    # Evaluación vectorizada sobre arreglos (..., m)
    # ------------------------------------------------------------------
    def value(self, u: np.ndarray) -> np.ndarray:
        u = np.asarray(u, dtype=float)
        if self.form == "twopath":
            p = 1.0 - u[..., 0] ** 2
            s = u[..., 1] ** 2
            w = 0.25 * p**2 - 0.5 * self.gamma * p * s + 0.25 * s**2 + 0.5 * self.mu * s
            return self.scale * w
        d2 = self._squared_distances(u)
        if self.quadratic:
            return self.scale * np.prod(d2, axis=-1)
        return self.scale * np.prod(d2 ** (0.5 * self.alpha), axis=-1)

    def gradient(self, u: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """Devuelve ``(W_u, pinned)``; ``pinned`` marca puntos a menos de q_min de un pozo (α < 2)."""

        u = np.asarray(u, dtype=float)
        pinned = np.zeros(u.shape[:-1], dtype=bool)
        if self.form == "twopath":
            u1, u2 = u[..., 0], u[..., 1]
            p = 1.0 - u1**2
            s = u2**2
            grad = np.stack(
                [-u1 * (p - self.gamma * s), u2 * (-self.gamma * p + s + self.mu)], axis=-1
            )
            return self.scale * grad, pinned
        diff = u[..., None, :] - self.wells_array
        d2 = np.sum(diff**2, axis=-1)
        if self.quadratic:
            grad = np.zeros_like(u)
            for j in range(d2.shape[-1]):
                grad += 2.0 * diff[..., j, :] * self._product_without(d2, (j,))[..., None]
            return self.scale * grad, pinned
        pinned = np.min(d2, axis=-1) < self.q_min**2
        safe = np.where(d2 < self.q_min**2, 1.0, d2)
        w = self.scale * np.prod(safe ** (0.5 * self.alpha), axis=-1)
        grad = w[..., None] * np.sum(self.alpha * diff / safe[..., None], axis=-2)
        grad[pinned] = 0.0
        return grad, pinned

    def hessian(self, u: np.ndarray) -> np.ndarray:
        if not self.quadratic:
            raise UnsupportedAlpha("La matriz hessiana sólo está disponible para α = 2.")
        u = np.asarray(u, dtype=float)
        if self.form == "twopath":
            u1, u2 = u[..., 0], u[..., 1]
            p = 1.0 - u1**2
            s = u2**2
            h = np.empty(u.shape + (2,))
            h[..., 0, 0] = -p + self.gamma * s + 2.0 * u1**2
            h[..., 0, 1] = h[..., 1, 0] = 2.0 * self.gamma * u1 * u2
            h[..., 1, 1] = -self.gamma * p + 3.0 * s + self.mu
            return self.scale * h
        diff = u[..., None, :] - self.wells_array
        d2 = np.sum(diff**2, axis=-1)
        count = d2.shape[-1]
        eye = np.eye(self.m)
        h = np.zeros(u.shape + (self.m,))
        for j in range(count):
            h += 2.0 * self._product_without(d2, (j,))[..., None, None] * eye
            grad_pj = np.zeros_like(u)
            for k in range(count):
                if k != j:
                    grad_pj += 2.0 * diff[..., k, :] * self._product_without(d2, (j, k))[..., None]
            h += 2.0 * diff[..., j, :, None] * grad_pj[..., None, :]
        return self.scale * h

    def reflect(self, u: np.ndarray) -> np.ndarray:
        """û: niega la primera coordenada."""

        reflected = np.array(u, dtype=float, copy=True)
        reflected[..., 0] *= -1.0
        return reflected

    def _squared_distances(self, u: np.ndarray) -> np.ndarray:
        diff = u[..., None, :] - self.wells_array
        return np.sum(diff**2, axis=-1)

    @staticmethod
    def _product_without(d2: np.ndarray, excluded: Tuple[int, ...]) -> np.ndarray:
        keep = [i for i in range(d2.shape[-1]) if i not in excluded]
        if not keep:
            return np.ones(d2.shape[:-1])
        return np.prod(d2[..., keep], axis=-1)


# ----------------------------------------------------------------------
# Constructores con nombre
# ----------------------------------------------------------------------
def two_well(alpha: float = 2.0) -> PotentialSpec:
    """Potencial escalar ¼(1−u²)² (o ¼|1−u²|^α)."""

    return PotentialSpec(
        m=1, wells=((-1.0,), (1.0,)), alpha=alpha, scale=0.25, symmetric=True, name="twowell"
    )


def product_well(
    wells: Sequence[Sequence[float]], alpha: float = 2.0, scale: float = 1.0
) -> PotentialSpec:
    points = tuple(tuple(float(c) for c in well) for well in wells)
    m = len(points[0])
    mirrored = {tuple([-p[0], *p[1:]]) for p in points}
    return PotentialSpec(
        m=m,
        wells=points,
        alpha=alpha,
        scale=scale,
        symmetric=mirrored == set(points),
        name="product",
    )


def two_path(gamma: float = 0.9, mu: float = 0.1, scale: float = 1.0) -> PotentialSpec:
    return PotentialSpec(
        m=2,
        wells=((-1.0, 0.0), (1.0, 0.0)),
        form="twopath",
        gamma=gamma,
        mu=mu,
        scale=scale,
        symmetric=True,
        name="twopath",
    )


def from_name(
    name: str,
    wells: Optional[Sequence[Sequence[float]]] = None,
    alpha: float = 2.0,
    scale: Optional[float] = None,
    gamma: float = 0.9,
    mu: float = 0.1,
) -> PotentialSpec:
    """Resuelve el nombre usado en los archivos de experimento."""

    key = name.strip().lower()
    if key == "twowell":
        spec = two_well(alpha)
        if scale is not None:
            spec = replace(spec, scale=scale)
        return spec
    if key == "product":
        if not wells:
            raise ValueError("El potencial 'product' necesita la lista de pozos.")
        return product_well(wells, alpha=alpha, scale=1.0 if scale is None else scale)
    if key == "twopath":
        return two_path(gamma=gamma, mu=mu, scale=1.0 if scale is None else scale)
    raise ValueError(f"Potencial desconocido '{name}'.")


# ----------------------------------------------------------------------
# Operaciones puntuales
# ----------------------------------------------------------------------
def _as_point(spec: PotentialSpec, u: Sequence[float] | float) -> np.ndarray:
    point = np.atleast_1d(np.asarray(u, dtype=float))
    if point.shape != (spec.m,):
        raise ValueError(f"Se esperaba un punto de R^{spec.m}, se recibió forma {point.shape}.")
    if not np.all(np.isfinite(point)):
        raise ValueError("El punto debe ser finito.")
    return point


def eval_w(spec: PotentialSpec, u: Sequence[float] | float) -> float:
    return float(spec.value(_as_point(spec, u)))


def eval_w_grad(spec: PotentialSpec, u: Sequence[float] | float) -> np.ndarray:
    point = _as_point(spec, u)
    if not spec.quadratic:
        distances = np.linalg.norm(spec.wells_array - point, axis=-1)
        index = int(np.argmin(distances))
        if distances[index] < spec.q_min:
            raise DegenerateGradient(point, index, float(distances[index]))
    grad, _ = spec.gradient(point)
    return grad


def eval_w_hess(spec: PotentialSpec, u: Sequence[float] | float) -> np.ndarray:
    return spec.hessian(_as_point(spec, u))


# ----------------------------------------------------------------------
# Verificación de hipótesis
# ----------------------------------------------------------------------
@dataclass(frozen=True)
class HypothesisReport:
    """Resumen del muestreo de hipótesis sobre un potencial."""

    nonnegative: bool
    min_sampled_value: float
    well_values: List[float]
    constants: List[float]
    constant_kind: str
    hessian_min_eigenvalues: List[float]
    rho0: float
    off_well_gap: float
    symmetric: Optional[bool]
    samples: int
    directions: int
    radii: int

    def to_payload(self) -> Dict[str, object]:
        return {
            "nonnegative": self.nonnegative,
            "min_sampled_value": self.min_sampled_value,
            "well_values": list(self.well_values),
            "constants": list(self.constants),
            "constant_kind": self.constant_kind,
            "hessian_min_eigenvalues": list(self.hessian_min_eigenvalues),
            "rho0": self.rho0,
            "off_well_gap": self.off_well_gap,
            "symmetric": self.symmetric,
            "samples": self.samples,
            "directions": self.directions,
            "radii": self.radii,
        }


def unit_directions(m: int, count: int, rng: Optional[np.random.Generator] = None) -> np.ndarray:
    """Direcciones unitarias reproducibles en R^m."""

    if m == 1:
        return np.array([[-1.0], [1.0]])
    if m == 2:
        angles = 2.0 * np.pi * np.arange(count) / count
        return np.stack([np.cos(angles), np.sin(angles)], axis=-1)
    if m == 3:
        # Espiral de Fibonacci
        k = np.arange(count) + 0.5
        z = 1.0 - 2.0 * k / count
        r = np.sqrt(1.0 - z**2)
        phi = np.pi * (3.0 - math.sqrt(5.0)) * k
        return np.stack([r * np.cos(phi), r * np.sin(phi), z], axis=-1)
    generator = rng or np.random.default_rng(0)
    raw = generator.normal(size=(count, m))
    return raw / np.linalg.norm(raw, axis=-1, keepdims=True)


def check_hypotheses(
    spec: PotentialSpec,
    box: Sequence[Tuple[float, float]],
    samples: int,
    directions: int = 64,
    radii: int = 32,
    rho0: Optional[float] = None,
    seed: int = 0,
) -> HypothesisReport:
    """Muestrea el potencial y estima C₀ (α = 2) o C* (α < 2) sobre rayos desde cada pozo."""

    if samples < 1:
        raise ValueError("Se necesita al menos una muestra.")
    if len(box) != spec.m:
        raise ValueError("La caja de muestreo debe tener un intervalo por componente.")
    rng = np.random.default_rng(seed)
    lows = np.array([lo for lo, _ in box], dtype=float)
    highs = np.array([hi for _, hi in box], dtype=float)
    points = lows + (highs - lows) * rng.random((samples, spec.m))
    values = spec.value(points)
    negative = np.flatnonzero(values < 0.0)
    if negative.size:
        worst = points[negative[np.argmin(values[negative])]]
        raise HypothesisViolated(
            f"W toma el valor negativo {float(spec.value(worst)):.3e} en {worst.tolist()!r}.",
            worst,
        )

    wells = spec.wells_array
    well_values = [float(v) for v in spec.value(wells)]
    for index, value in enumerate(well_values):
        if abs(value) > 1e-14:
            raise HypothesisViolated(f"W no se anula en el pozo {index}: {value:.3e}.", wells[index])

    rho = rho0 if rho0 is not None else 0.25 * spec.well_separation()
    distances = np.linalg.norm(points[:, None, :] - wells[None], axis=-1).min(axis=-1)
    far = distances >= rho
    gap = float(values[far].min()) if np.any(far) else float("nan")
    if np.any(far) and gap <= 0.0:
        worst = points[far][np.argmin(values[far])]
        raise HypothesisViolated("W se anula fuera de los pozos.", worst)

    units = unit_directions(spec.m, directions, rng)
    steps = rho * np.arange(1, radii + 1) / radii
    constants: List[float] = []
    hess_min: List[float] = []
    for index, well in enumerate(wells):
        ray_points = well[None, None, :] + steps[None, :, None] * units[:, None, :]
        grad, pinned = spec.gradient(ray_points)
        radial = np.sum(grad * units[:, None, :], axis=-1)
        ratio = radial / steps[None, :] ** (spec.alpha - 1.0)
        ratio = np.where(pinned, np.inf, ratio)
        estimate = float(ratio.min())
        if spec.quadratic:
            eigen = float(np.linalg.eigvalsh(spec.hessian(well)).min())
            hess_min.append(eigen)
            estimate = min(estimate, eigen)
        if not estimate > 0.0:
            ray, radius = np.unravel_index(int(np.argmin(ratio)), ratio.shape)
            bad = well + steps[radius] * units[ray]
            raise HypothesisViolated(
                f"La cota radial de W_u falla cerca del pozo {index}.", bad
            )
        constants.append(estimate)

    symmetric_verdict: Optional[bool] = None
    if spec.symmetric:
        mirrored = spec.value(spec.reflect(points))
        symmetric_verdict = bool(np.all(np.abs(mirrored - values) <= 1e-12 * (1.0 + values)))
        if not symmetric_verdict:
            raise HypothesisViolated("W no es invariante bajo la reflexión de la primera coordenada.")

    report = HypothesisReport(
        nonnegative=True,
        min_sampled_value=float(values.min()),
        well_values=well_values,
        constants=constants,
        constant_kind="C0" if spec.quadratic else "C*",
        hessian_min_eigenvalues=hess_min,
        rho0=float(rho),
        off_well_gap=gap,
        symmetric=symmetric_verdict,
        samples=samples,
        directions=len(units),
        radii=radii,
    )
    LOGGER.info(
        "Hipótesis verificadas para %s: %s = %s", spec.name or spec.form, report.constant_kind, constants
    )
    return report


# ----------------------------------------------------------------------
# Distancia geodésica degenerada
# ----------------------------------------------------------------------
def _lattice_offsets(m: int) -> List[Tuple[int, ...]]:
    """Vecindad completa (8 en m=2, 26 en m=3), tomando una sola orientación por arista."""

    offsets = []
    for offset in itertools.product((-1, 0, 1), repeat=m):
        if any(offset) and offset > tuple(0 for _ in range(m)):
            offsets.append(offset)
    return offsets


def _build_lattice(
    spec: PotentialSpec, lows: np.ndarray, counts: np.ndarray, step: float
) -> nx.Graph:
    graph = nx.Graph()
    shape = tuple(int(c) for c in counts)
    index = np.indices(shape).reshape(spec.m, -1).T
    for offset in _lattice_offsets(spec.m):
        target = index + np.asarray(offset)
        valid = np.all((target >= 0) & (target < counts), axis=1)
        start = index[valid]
        end = target[valid]
        midpoint = lows + 0.5 * (start + end) * step
        length = step * math.sqrt(sum(o * o for o in offset))
        weight = np.sqrt(2.0 * np.maximum(spec.value(midpoint), 0.0)) * length
        graph.add_weighted_edges_from(
            zip(map(tuple, start.tolist()), map(tuple, end.tolist()), weight.tolist())
        )
    return graph


def _lattice_box(
    spec: PotentialSpec,
    points: np.ndarray,
    resolution: float,
    box: Optional[Sequence[Tuple[float, float]]],
) -> Tuple[np.ndarray, np.ndarray]:
    if box is None:
        margin = 0.5 * spec.well_separation()
        lows = points.min(axis=0) - margin
        highs = points.max(axis=0) + margin
    else:
        lows = np.array([lo for lo, _ in box], dtype=float)
        highs = np.array([hi for _, hi in box], dtype=float)
    # El origen de la red se alinea con el primer punto
    anchor = points[0]
    lows = anchor - np.ceil((anchor - lows) / resolution) * resolution
    counts = np.floor((highs - lows) / resolution + 1e-9).astype(int) + 1
    return lows, counts


def _snap(point: np.ndarray, lows: np.ndarray, counts: np.ndarray, step: float) -> Tuple[int, ...]:
    index = np.rint((point - lows) / step).astype(int)
    if np.any(index < 0) or np.any(index >= counts):
        raise ValueError(f"El punto {point.tolist()!r} está fuera de la caja de muestreo.")
    return tuple(int(i) for i in index)


def segment_action(
    spec: PotentialSpec, z1: Sequence[float], z2: Sequence[float], nodes: int = 2001
) -> float:
    """Regla del punto medio de ∫√(2W)|ζ′| sobre el segmento recto z1→z2."""

    a = _as_point(spec, z1)
    b = _as_point(spec, z2)
    t = (np.arange(nodes - 1) + 0.5) / (nodes - 1)
    mids = a[None, :] + t[:, None] * (b - a)[None, :]
    length = float(np.linalg.norm(b - a))
    return float(np.sum(np.sqrt(2.0 * spec.value(mids))) * length / (nodes - 1))


def geodesic_table(
    spec: PotentialSpec,
    points: Sequence[Sequence[float]],
    resolution: float,
    box: Optional[Sequence[Tuple[float, float]]] = None,
) -> np.ndarray:
    """Distancias geodésicas entre todos los pares de ``points`` sobre una misma red."""

    if resolution <= 0:
        raise ValueError("La resolución debe ser positiva.")
    if spec.m > 3:
        raise ValueError("La red geodésica sólo admite m ≤ 3.")
    array = np.array([_as_point(spec, p) for p in points])
    lows, counts = _lattice_box(spec, array, resolution, box)
    total = int(np.prod(counts))
    LOGGER.debug("Red geodésica con %d nodos (paso %g)", total, resolution)
    graph = _build_lattice(spec, lows, counts, resolution)
    nodes = [_snap(p, lows, counts, resolution) for p in array]
    # Tramo residual entre cada punto y su nodo de red
    offsets = []
    for p, node in zip(array, nodes):
        snapped = lows + np.asarray(node) * resolution
        offsets.append(segment_action(spec, p, snapped, nodes=3) if np.any(snapped != p) else 0.0)
    table = np.zeros((len(nodes), len(nodes)))
    for i, source in enumerate(nodes):
        lengths = nx.single_source_dijkstra_path_length(graph, source)
        for j, target in enumerate(nodes):
            if i != j:
                table[i, j] = lengths[target] + offsets[i] + offsets[j]
    return table


def geodesic_distance(
    spec: PotentialSpec,
    z1: Sequence[float] | float,
    z2: Sequence[float] | float,
    resolution: float,
    box: Optional[Sequence[Tuple[float, float]]] = None,
) -> float:
    """Aproxima d(z₁, z₂) = inf ∫√(2W(ζ))|ζ′| por camino mínimo en una red de R^m."""

    a = _as_point(spec, z1)
    b = _as_point(spec, z2)
    if np.array_equal(a, b):
        return 0.0
    return float(geodesic_table(spec, [a, b], resolution, box)[0, 1])
