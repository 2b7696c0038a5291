"""Continuación en ε de minimizadores de Dirichlet y convergencia a la partición mínima.

Los conjuntos de nivel se extraen celda a celda por interpolación lineal
(marching squares). En las celdas de silla, con esquinas opuestas del mismo
lado, se decide con el promedio de las cuatro esquinas: si el promedio queda
dentro (|u−a| > γ) las esquinas interiores se consideran conectadas.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import networkx as nx
import numpy as np
import pandas as pd
from scipy import sparse
from scipy.sparse.linalg import spsolve
from scipy.spatial.distance import directed_hausdorff

from phaselab.errors import EmptyLevelSet, NoConvergence
from phaselab.services.density import ExponentFit, fit_exponent
from phaselab.services.grid_field import (
    Field,
    Grid,
    RegionMask,
    arc_data,
    disk_mask,
    make_field,
    measure_superlevel,
    rescale,
)
from phaselab.services.minimizer import ConvergenceLog, DescentSchedule, descend, multistart
from phaselab.services.potentials import PotentialSpec

LOGGER = logging.getLogger(__name__)

# Aristas de la celda (i, j) como pares de esquinas en orden antihorario
_CORNERS = ((0, 0), (1, 0), (1, 1), (0, 1))
_EDGES = ((0, 1), (1, 2), (2, 3), (3, 0))


@dataclass(frozen=True)
class ReferencePartition:
    """Interfaz de referencia: cuerda en un disco o segmento en un rectángulo."""

    kind: str
    p1: Tuple[float, float]
    p2: Tuple[float, float]
    center: Tuple[float, float] = (0.0, 0.0)
    radius: float = 0.0
    box: Optional[Tuple[Tuple[float, float], Tuple[float, float]]] = None

    @classmethod
    def chord(
        cls, center: Sequence[float], radius: float, theta1: float, theta2: float
    ) -> "ReferencePartition":
        c = np.asarray(center, dtype=float)
        p1 = c + radius * np.array([math.cos(theta1), math.sin(theta1)])
        p2 = c + radius * np.array([math.cos(theta2), math.sin(theta2)])
        return cls(
            kind="chord",
            p1=tuple(p1.tolist()),
            p2=tuple(p2.tolist()),
            center=tuple(c.tolist()),
            radius=float(radius),
        )

    @classmethod
    def segment(
        cls,
        p1: Sequence[float],
        p2: Sequence[float],
        box: Tuple[Tuple[float, float], Tuple[float, float]],
    ) -> "ReferencePartition":
        return cls(kind="segment", p1=tuple(map(float, p1)), p2=tuple(map(float, p2)), box=box)

    @property
    def length(self) -> float:
        return float(np.linalg.norm(np.subtract(self.p2, self.p1)))

    def sample(self, step: float) -> np.ndarray:
        count = max(2, int(math.ceil(self.length / step)) + 1)
        t = np.linspace(0.0, 1.0, count)[:, None]
        return np.asarray(self.p1) + t * (np.asarray(self.p2) - np.asarray(self.p1))

    def signed_distance(self, points: np.ndarray) -> np.ndarray:
        """Distancia con signo a la recta p₁p₂ (positiva a la izquierda de p₁→p₂)."""

        direction = np.subtract(self.p2, self.p1) / self.length
        normal = np.array([-direction[1], direction[0]])
        return (points - np.asarray(self.p1)) @ normal

    def inside(self, points: np.ndarray, margin: float = 0.0) -> np.ndarray:
        """Puntos del dominio reducido en ``margin``."""

        if self.kind == "chord":
            r = np.linalg.norm(points - np.asarray(self.center), axis=-1)
            return r <= self.radius - margin + 1e-12
        (x0, x1), (y0, y1) = self.box
        return (
            (points[:, 0] >= x0 + margin - 1e-12)
            & (points[:, 0] <= x1 - margin + 1e-12)
            & (points[:, 1] >= y0 + margin - 1e-12)
            & (points[:, 1] <= y1 - margin + 1e-12)
        )


@dataclass
class LevelSet:
    gamma: float
    segments: np.ndarray
    spacing: float
    epsilon: Optional[float] = None

    def sample(self, step: Optional[float] = None) -> np.ndarray:
        """Puntos sobre los segmentos con paso ≤ ``step`` (por omisión h/2)."""

        step = step or 0.5 * self.spacing
        points = []
        for start, end in self.segments:
            count = max(2, int(math.ceil(np.linalg.norm(end - start) / step)) + 1)
            t = np.linspace(0.0, 1.0, count)[:, None]
            points.append(start + t * (end - start))
        return np.concatenate(points)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            {
                "segment": np.arange(len(self.segments)),
                "x0": self.segments[:, 0, 0],
                "y0": self.segments[:, 0, 1],
                "x1": self.segments[:, 1, 0],
                "y1": self.segments[:, 1, 1],
            }
        )

    def to_payload(self) -> Dict[str, object]:
        return {
            "gamma": self.gamma,
            "epsilon": self.epsilon,
            "segments": self.segments.tolist(),
        }


def _crossing(points: np.ndarray, phi: np.ndarray, edge: Tuple[int, int]) -> np.ndarray:
    a, b = edge
    t = phi[a] / (phi[a] - phi[b])
    return points[a] + t * (points[b] - points[a])


def extract_levelset(
    f: Field, a: Sequence[float], gamma: float, epsilon: Optional[float] = None
) -> LevelSet:
    """Extrae {|u−a| = γ} como segmentos, uno o dos por celda."""

    if f.grid.n != 2:
        raise ValueError("La extracción de conjuntos de nivel requiere un campo bidimensional.")
    if not gamma > 0:
        raise ValueError("γ debe ser positivo.")
    phi = np.linalg.norm(f.values - np.asarray(a, dtype=float), axis=-1) - gamma
    inside = phi > 0.0
    valid = f.nonexterior
    cell_valid = valid[:-1, :-1] & valid[1:, :-1] & valid[1:, 1:] & valid[:-1, 1:]
    corners = np.stack(
        [inside[:-1, :-1], inside[1:, :-1], inside[1:, 1:], inside[:-1, 1:]], axis=-1
    )
    mixed = cell_valid & np.any(corners, axis=-1) & ~np.all(corners, axis=-1)
    h = f.grid.spacing
    origin = np.asarray(f.grid.origin)
    segments: List[Tuple[np.ndarray, np.ndarray]] = []
    for i, j in np.argwhere(mixed):
        points = np.array([origin + h * np.array([i + di, j + dj]) for di, dj in _CORNERS])
        values = np.array([phi[i + di, j + dj] for di, dj in _CORNERS])
        signs = values > 0.0
        crossed = [k for k, (p, q) in enumerate(_EDGES) if signs[p] != signs[q]]
        if len(crossed) == 2:
            segments.append(
                (_crossing(points, values, _EDGES[crossed[0]]), _crossing(points, values, _EDGES[crossed[1]]))
            )
            continue
        # Silla: se aíslan las dos esquinas del lado que no contiene al centro
        center_inside = values.mean() > 0.0
        isolate = [k for k in range(4) if signs[k] != center_inside]
        for corner in isolate:
            before = _EDGES[(corner - 1) % 4]
            after = _EDGES[corner]
            segments.append(
                (_crossing(points, values, before), _crossing(points, values, after))
            )
    if not segments:
        raise EmptyLevelSet(f"El campo no cruza el nivel γ = {gamma:g}.")
    array = np.array([[start, end] for start, end in segments])
    return LevelSet(gamma=float(gamma), segments=array, spacing=h, epsilon=epsilon)


def hausdorff_to_reference(
    ls: LevelSet, ref: ReferencePartition, margin: float = 0.0
) -> float:
    """Distancia de Hausdorff simétrica muestreando ambas curvas con paso h/2.

    Con ``margin`` > 0 ambas muestras se restringen al dominio reducido.
    """

    step = 0.5 * ls.spacing
    ours = ls.sample(step)
    theirs = ref.sample(step)
    if margin > 0:
        ours = ours[ref.inside(ours, margin)]
        theirs = theirs[ref.inside(theirs, margin)]
        if len(ours) == 0 or len(theirs) == 0:
            raise EmptyLevelSet("No quedan puntos tras aplicar el margen.")
    forward = directed_hausdorff(ours, theirs)[0]
    backward = directed_hausdorff(theirs, ours)[0]
    return float(max(forward, backward))


# ----------------------------------------------------------------------
# Validación de la interfaz de referencia
# ----------------------------------------------------------------------
_KNIGHT = [
    (1, 0), (0, 1), (-1, 0), (0, -1),
    (1, 1), (1, -1), (-1, 1), (-1, -1),
    (1, 2), (2, 1), (-1, 2), (-2, 1), (1, -2), (2, -1), (-1, -2), (-2, -1),
]


@dataclass(frozen=True)
class ChordValidation:
    lattice_length: float
    chord_length: float
    max_offset: float

    @property
    def ratio(self) -> float:
        return self.lattice_length / self.chord_length

    @property
    def verdict(self) -> str:
        return "PASS" if 1.0 - 1e-9 <= self.ratio <= 1.03 else "FAIL"


def validate_reference(ref: ReferencePartition, resolution: Optional[float] = None) -> ChordValidation:
    """Camino más corto en una red de 16 vecinos dentro del dominio entre p₁ y p₂."""

    if ref.kind == "chord":
        lows = np.asarray(ref.center) - ref.radius
        highs = np.asarray(ref.center) + ref.radius
        step = resolution or ref.radius / 40.0
    else:
        (x0, x1), (y0, y1) = ref.box
        lows, highs = np.array([x0, y0]), np.array([x1, y1])
        step = resolution or min(x1 - x0, y1 - y0) / 80.0
    counts = np.floor((highs - lows) / step + 1e-9).astype(int) + 1
    index = np.indices(tuple(counts)).reshape(2, -1).T
    coords = lows + step * index
    keep = ref.inside(coords)
    nodes = {tuple(idx) for idx in index[keep].tolist()}
    graph = nx.Graph()
    for (i, j) in nodes:
        for di, dj in _KNIGHT:
            other = (i + di, j + dj)
            if other in nodes:
                graph.add_edge((i, j), other, weight=step * math.hypot(di, dj))

    def _nearest(point: Sequence[float]) -> Tuple[Tuple[int, int], float]:
        candidates = index[keep]
        gaps = np.linalg.norm(lows + step * candidates - np.asarray(point), axis=-1)
        best = int(np.argmin(gaps))
        return tuple(candidates[best].tolist()), float(gaps[best])

    start, gap1 = _nearest(ref.p1)
    end, gap2 = _nearest(ref.p2)
    path = nx.dijkstra_path(graph, start, end)
    length = nx.path_weight(graph, path, weight="weight") + gap1 + gap2
    path_points = lows + step * np.asarray(path)
    offset = float(np.max(np.abs(ref.signed_distance(path_points))))
    report = ChordValidation(lattice_length=float(length), chord_length=ref.length, max_offset=offset)
    LOGGER.info("Validación de la cuerda: razón %.4f (%s)", report.ratio, report.verdict)
    return report


# ----------------------------------------------------------------------
# Problemas de Dirichlet y continuación en ε
# ----------------------------------------------------------------------
def disk_problem(
    radius: float,
    spacing: float,
    spec: PotentialSpec,
    theta1: float = math.pi / 6.0,
    theta2: float = 5.0 * math.pi / 6.0,
    width: float = 0.1,
    wells: Tuple[int, int] = (0, 1),
) -> Tuple[Field, ReferencePartition]:
    """Disco con dato de dos arcos y dato inicial tanh de la distancia con signo a la cuerda."""

    a_in = spec.well(wells[1])
    a_out = spec.well(wells[0])
    count = int(math.ceil(radius / spacing)) + 2
    grid = Grid.centered((2 * count + 1, 2 * count + 1), spacing)
    ref = ReferencePartition.chord((0.0, 0.0), radius, theta1, theta2)
    middle = 0.5 * (theta1 + theta2)
    arc_point = radius * np.array([math.cos(middle), math.sin(middle)])
    side = 1.0 if ref.signed_distance(arc_point[None])[0] > 0 else -1.0

    def _initial(coords: np.ndarray) -> np.ndarray:
        d = side * ref.signed_distance(coords.reshape(-1, 2)).reshape(coords.shape[:-1])
        t = 0.5 * (1.0 + np.tanh(d / width))
        return a_out + t[..., None] * (a_in - a_out)

    mask = disk_mask(grid, (0.0, 0.0), radius)
    boundary = arc_data((0.0, 0.0), theta1, theta2, a_in, a_out)
    return make_field(grid, mask, spec.m, _initial, boundary), ref


@dataclass
class ContinuationResult:
    eps: List[float]
    fields: List[Field]
    logs: List[ConvergenceLog]
    failures: List[float] = field(default_factory=list)


def eps_continuation(
    f0: Field,
    spec: PotentialSpec,
    eps_schedule: Sequence[float],
    sched: DescentSchedule,
    starts: int = 1,
    noise: float = 0.0,
    threads: int = 1,
) -> ContinuationResult:
    """Desciende la energía escalada por ε para cada ε, arrancando desde el anterior."""

    schedule = [float(e) for e in eps_schedule]
    if not schedule or any(e <= 0 for e in schedule):
        raise ValueError("El calendario de ε debe contener valores positivos.")
    if any(b >= a for a, b in zip(schedule, schedule[1:])):
        raise ValueError("El calendario de ε debe ser estrictamente decreciente.")
    result = ContinuationResult(eps=[], fields=[], logs=[])
    current = f0
    for eps in schedule:
        if starts > 1:
            run = multistart(current, spec, sched, starts=starts, noise=noise, eps=eps, threads=threads)
            field_eps, log = run.best, run.log
            if not log.converged:
                result.failures.append(eps)
                LOGGER.warning("Continuación: ningún arranque convergió para ε = %g", eps)
        else:
            try:
                field_eps, log = descend(current, spec, sched, eps=eps)
            except NoConvergence as exc:
                LOGGER.warning("Continuación: %s (ε = %g); se conserva el mejor iterado", exc, eps)
                field_eps, log = exc.best, exc.log
                result.failures.append(eps)
        result.eps.append(eps)
        result.fields.append(field_eps)
        result.logs.append(log)
        current = field_eps
        LOGGER.info("Continuación: etapa ε = %g terminada", eps)
    return result


def harmonic_extension(f: Field) -> Field:
    """Solución de Δ_h u = 0 en los nodos interiores con los valores Dirichlet de ``f``."""

    interior = f.interior
    order = -np.ones(f.grid.shape, dtype=int)
    order[interior] = np.arange(int(np.count_nonzero(interior)))
    size = int(np.count_nonzero(interior))
    rows: List[int] = []
    cols: List[int] = []
    data: List[float] = []
    rhs = np.zeros((size, f.m))
    n = f.grid.n
    for idx in np.argwhere(interior):
        row = order[tuple(idx)]
        rows.append(row)
        cols.append(row)
        data.append(-2.0 * n)
        for axis in range(n):
            for step in (-1, 1):
                neighbor = idx.copy()
                neighbor[axis] += step
                key = tuple(neighbor)
                if interior[key]:
                    rows.append(row)
                    cols.append(order[key])
                    data.append(1.0)
                else:
                    rhs[row] -= f.values[key]
    matrix = sparse.csc_matrix((data, (rows, cols)), shape=(size, size))
    solution = spsolve(matrix, rhs)
    values = f.values.copy()
    values[interior] = np.asarray(solution).reshape(size, f.m)
    return Field(f.grid, values, f.mask.copy())


def transition_width(f: Field, spec: PotentialSpec, ref: ReferencePartition, low: float = 0.1) -> float:
    """Máxima distancia a la interfaz de referencia de los nodos en transición entre pozos.

    Un nodo está en transición si dista más de ``low``·separación de ambos pozos.
    """

    separation = spec.well_separation()
    wells = spec.wells_array
    distances = np.linalg.norm(f.values[..., None, :] - wells, axis=-1)
    transition = f.nonexterior & np.all(distances > low * separation, axis=-1)
    if not np.any(transition):
        return 0.0
    coords = f.grid.coordinates()[transition]
    return float(np.max(np.abs(ref.signed_distance(coords))))


# ----------------------------------------------------------------------
# Densidad tras el reescalado
# ----------------------------------------------------------------------
@dataclass(frozen=True)
class BlowupReport:
    point: Tuple[float, ...]
    radii: List[float]
    V: List[float]
    fit: ExponentFit


def blowup_density(
    f: Field,
    a: Sequence[float],
    gamma: float,
    point: Sequence[float],
    eps: float,
    radii: Sequence[float],
    ls: Optional[LevelSet] = None,
) -> BlowupReport:
    """ϱ(x) = u(y + εx) alrededor del punto y del nivel más cercano a ``point``.

    Mide V_R = |B_R ∩ {|ϱ − a| > γ/2}| y ajusta su exponente (≈ n).
    """

    anchor = np.asarray(point, dtype=float)
    if ls is not None:
        samples = ls.sample()
        anchor = samples[int(np.argmin(np.linalg.norm(samples - anchor, axis=-1)))]
    radii_arr = np.asarray(radii, dtype=float)
    step = f.grid.spacing / eps
    count = int(math.ceil(radii_arr.max() / step)) + 1
    target = Grid.centered((2 * count + 1,) * f.grid.n, step)
    blown = rescale(f, anchor, eps, target)
    volumes = [
        measure_superlevel(blown, a, 0.5 * gamma, RegionMask.ball(target, (0.0,) * f.grid.n, r))
        for r in radii_arr
    ]
    fit = fit_exponent(volumes, radii_arr)
    LOGGER.info("Densidad reescalada en %s: exponente %.3f", anchor.tolist(), fit.exponent)
    return BlowupReport(point=tuple(anchor.tolist()), radii=radii_arr.tolist(), V=volumes, fit=fit)
