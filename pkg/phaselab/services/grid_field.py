"""Campos vectoriales sobre mallas rectangulares: operadores, energías y medidas.

La energía discreta es una suma exacta de términos por celda. En cada celda
la parte cinética promedia ``|Δu/h|²`` sobre las aristas paralelas de cada
eje y la parte potencial promedia ``W`` sobre las esquinas. Con esa elección
el gradiente de la energía respecto de un nodo interior es exactamente
``h^n·(W_u(u) − ε²Δ_h u)``, de modo que el flujo nodal y la energía medida son
coherentes.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Callable, ClassVar, Optional, Sequence, Tuple

import numpy as np
from scipy import ndimage
from scipy.interpolate import RegularGridInterpolator

from phaselab.errors import OutOfDomain
from phaselab.services.potentials import PotentialSpec

LOGGER = logging.getLogger(__name__)

INTERIOR = 0
DIRICHLET = 1
EXTERIOR = 2

# Componentes admitidas para campos de estado u: R^n → R^m
MAX_COMPONENTS = 4

BoundaryData = Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True)
class Grid:
    """Malla uniforme de ``n`` ejes (1 ≤ n ≤ 3)."""

    shape: Tuple[int, ...]
    spacing: float
    origin: Tuple[float, ...]

    def __post_init__(self) -> None:
        if not 1 <= len(self.shape) <= 3:
            raise ValueError("La malla debe tener entre 1 y 3 ejes.")
        if any(int(s) < 3 for s in self.shape):
            raise ValueError(f"Cada eje necesita al menos 3 nodos: {self.shape}.")
        if not self.spacing > 0:
            raise ValueError("El paso de malla debe ser positivo.")
        if len(self.origin) != len(self.shape):
            raise ValueError("El origen debe tener una coordenada por eje.")

    @classmethod
    def centered(cls, shape: Sequence[int], spacing: float) -> "Grid":
        """Malla simétrica respecto del origen de coordenadas."""

        shape = tuple(int(s) for s in shape)
        origin = tuple(-0.5 * (s - 1) * spacing for s in shape)
        return cls(shape=shape, spacing=float(spacing), origin=origin)

    @property
    def n(self) -> int:
        return len(self.shape)

    @property
    def cell_volume(self) -> float:
        return self.spacing**self.n

    @property
    def upper(self) -> Tuple[float, ...]:
        return tuple(o + (s - 1) * self.spacing for o, s in zip(self.origin, self.shape))

    def axes(self) -> list[np.ndarray]:
        return [o + self.spacing * np.arange(s) for o, s in zip(self.origin, self.shape)]

    def coordinates(self) -> np.ndarray:
        """Coordenadas nodales con forma ``(*shape, n)``."""

        return np.stack(np.meshgrid(*self.axes(), indexing="ij"), axis=-1)

    def distance_from(self, center: Sequence[float]) -> np.ndarray:
        offset = self.coordinates() - np.asarray(center, dtype=float)
        return np.sqrt(np.sum(offset**2, axis=-1))


@dataclass(eq=False)
class Field:
    """Función de R^n en R^m muestreada sobre una malla con máscara de dominio."""

    grid: Grid
    values: np.ndarray
    mask: np.ndarray

    max_components: ClassVar[int] = MAX_COMPONENTS

    def __post_init__(self) -> None:
        self.values = np.asarray(self.values, dtype=float)
        self.mask = np.asarray(self.mask, dtype=np.int8)
        if self.values.ndim == self.grid.n:
            self.values = self.values[..., None]
        if self.values.shape[:-1] != self.grid.shape:
            raise ValueError(
                f"Los valores tienen forma {self.values.shape} y la malla {self.grid.shape}."
            )
        if self.mask.shape != self.grid.shape:
            raise ValueError("La máscara debe tener la forma de la malla.")
        if not 1 <= self.m <= self.max_components:
            raise ValueError(
                f"El número de componentes debe estar entre 1 y {self.max_components}."
            )
        if not np.all(np.isfinite(self.values[self.nonexterior])):
            raise ValueError("Hay valores no finitos en nodos del dominio.")
        self.values = np.where(self.nonexterior[..., None], self.values, 0.0)
        interior = self.interior
        edge = np.zeros(self.grid.shape, dtype=bool)
        for axis in range(self.grid.n):
            index = [slice(None)] * self.grid.n
            index[axis] = 0
            edge[tuple(index)] = True
            index[axis] = -1
            edge[tuple(index)] = True
        if np.any(interior & edge):
            raise ValueError("Los nodos del borde de la malla no pueden ser interiores.")
        # Toda celda que toque un nodo interior debe estar completa en el dominio
        structure = np.ones((3,) * self.grid.n, dtype=bool)
        halo = ndimage.binary_dilation(interior, structure=structure)
        if np.any(halo & (self.mask == EXTERIOR)):
            raise ValueError("Un nodo interior tiene vecinos exteriores.")

    @property
    def m(self) -> int:
        return int(self.values.shape[-1])

    @property
    def interior(self) -> np.ndarray:
        return self.mask == INTERIOR

    @property
    def dirichlet(self) -> np.ndarray:
        return self.mask == DIRICHLET

    @property
    def nonexterior(self) -> np.ndarray:
        return self.mask != EXTERIOR

    @property
    def bc(self) -> np.ndarray:
        """Valores fijos en los nodos Dirichlet, en orden de filas."""

        return self.values[self.dirichlet]

    def copy(self) -> "Field":
        return Field(self.grid, self.values.copy(), self.mask.copy())

    def with_values(self, values: np.ndarray) -> "Field":
        """Nuevo campo con la misma máscara; los nodos Dirichlet conservan sus valores."""

        merged = np.where(self.dirichlet[..., None], self.values, values)
        return Field(self.grid, merged, self.mask.copy())


@dataclass(eq=False)
class ChannelField(Field):
    """Canales derivados de un estado, como q junto a ν, con una componente más que u."""

    max_components: ClassVar[int] = MAX_COMPONENTS + 1


@dataclass(frozen=True)
class RegionMask:
    """Conjunto de nodos (bola, anillo, cilindro) restringido al dominio."""

    nodes: np.ndarray
    label: str = "region"

    @classmethod
    def everything(cls, f: Field) -> "RegionMask":
        return cls(f.nonexterior.copy(), "domain")

    @classmethod
    def ball(cls, grid: Grid, center: Sequence[float], radius: float) -> "RegionMask":
        return cls(grid.distance_from(center) < radius, f"B_{radius:g}")

    @classmethod
    def annulus(
        cls, grid: Grid, center: Sequence[float], inner: float, outer: float
    ) -> "RegionMask":
        r = grid.distance_from(center)
        return cls((r >= inner) & (r < outer), f"B_{outer:g}\\B_{inner:g}")

    @classmethod
    def cylinder(cls, grid: Grid, y0: Sequence[float], radius: float) -> "RegionMask":
        """R × 𝓑_R(y₀): bola sobre los ejes transversales (todos menos el primero)."""

        coords = grid.coordinates()[..., 1:]
        offset = coords - np.asarray(y0, dtype=float)
        inside = np.sqrt(np.sum(offset**2, axis=-1)) < radius
        return cls(inside, f"C_{radius:g}")

    def within(self, f: Field) -> np.ndarray:
        return self.nodes & f.nonexterior

    def __and__(self, other: "RegionMask") -> "RegionMask":
        return RegionMask(self.nodes & other.nodes, f"{self.label}∩{other.label}")


# ----------------------------------------------------------------------
# Operadores en diferencias
# ----------------------------------------------------------------------
def laplacian_values(values: np.ndarray, mask: np.ndarray, spacing: float) -> np.ndarray:
    """Laplaciano centrado en nodos interiores; cero en el resto."""

    lap = np.zeros_like(values)
    n = mask.ndim
    for axis in range(n):
        forward = np.roll(values, -1, axis=axis)
        backward = np.roll(values, 1, axis=axis)
        lap += forward - 2.0 * values + backward
    lap /= spacing**2
    lap[mask != INTERIOR] = 0.0
    return lap


def laplacian(f: Field) -> Field:
    lap = laplacian_values(f.values, f.mask, f.grid.spacing)
    return Field(f.grid, lap, f.mask.copy())


def cells_inside(nodes: np.ndarray) -> np.ndarray:
    """Celdas cuyas 2^n esquinas pertenecen a ``nodes``."""

    cells = nodes.astype(bool)
    for axis in range(nodes.ndim):
        lower = [slice(None)] * cells.ndim
        upper = [slice(None)] * cells.ndim
        lower[axis] = slice(None, -1)
        upper[axis] = slice(1, None)
        cells = cells[tuple(lower)] & cells[tuple(upper)]
    return cells


def corner_average(node_values: np.ndarray, n: int) -> np.ndarray:
    """Promedio sobre las esquinas de cada celda de un arreglo nodal ``(*shape, ...)``."""

    out = node_values
    for axis in range(n):
        lower = [slice(None)] * out.ndim
        upper = [slice(None)] * out.ndim
        lower[axis] = slice(None, -1)
        upper[axis] = slice(1, None)
        out = 0.5 * (out[tuple(lower)] + out[tuple(upper)])
    return out


def edge_average(edge_values: np.ndarray, n: int, axis: int) -> np.ndarray:
    """Promedia valores por arista del eje ``axis`` sobre los demás ejes de la celda."""

    out = edge_values
    for other in range(n):
        if other == axis:
            continue
        lower = [slice(None)] * out.ndim
        upper = [slice(None)] * out.ndim
        lower[other] = slice(None, -1)
        upper[other] = slice(1, None)
        out = 0.5 * (out[tuple(lower)] + out[tuple(upper)])
    return out


def axis_difference(values: np.ndarray, axis: int, spacing: float) -> np.ndarray:
    return np.diff(values, axis=axis) / spacing


def kinetic_cells(values: np.ndarray, spacing: float, n: int) -> np.ndarray:
    """|∇u|² por celda con diferencias hacia adelante."""

    total = None
    for axis in range(n):
        diff = axis_difference(values, axis, spacing)
        squared = np.sum(diff**2, axis=-1)
        term = edge_average(squared, n, axis)
        total = term if total is None else total + term
    return total


def potential_cells(f: Field, spec: PotentialSpec) -> np.ndarray:
    return corner_average(spec.value(f.values), f.grid.n)


def energy(f: Field, region: RegionMask, spec: PotentialSpec, eps: float = 1.0) -> float:
    """∫_region (ε²/2)|∇u|² + W(u) como suma sobre celdas contenidas en la región."""

    if not eps > 0:
        raise ValueError("ε debe ser positivo.")
    cells = cells_inside(region.within(f))
    density = 0.5 * eps**2 * kinetic_cells(f.values, f.grid.spacing, f.grid.n)
    density = density + potential_cells(f, spec)
    return float(np.sum(density[cells]) * f.grid.cell_volume)


def modica_mortola(f: Field, region: RegionMask, spec: PotentialSpec) -> float:
    """∫_region √(2W(u))|∇u|, acotada celda a celda por la energía (desigualdad de Young)."""

    cells = cells_inside(region.within(f))
    kinetic = kinetic_cells(f.values, f.grid.spacing, f.grid.n)
    potential = np.maximum(potential_cells(f, spec), 0.0)
    density = np.sqrt(2.0 * potential * kinetic)
    return float(np.sum(density[cells]) * f.grid.cell_volume)


@dataclass(frozen=True)
class ResidualReport:
    value: float
    pinned: int


def residual_report(f: Field, spec: PotentialSpec, eps: float = 1.0) -> ResidualReport:
    """Máximo de |ε²Δu − W_u(u)| en nodos interiores, sin contar nodos fijados a un pozo."""

    lap = laplacian_values(f.values, f.mask, f.grid.spacing)
    grad, pinned = spec.gradient(f.values)
    per_node = np.linalg.norm(eps**2 * lap - grad, axis=-1)
    active = f.interior & ~pinned
    skipped = int(np.count_nonzero(f.interior & pinned))
    if skipped:
        LOGGER.debug("Residuo: %d nodos fijados a un pozo fueron omitidos", skipped)
    value = float(per_node[active].max()) if np.any(active) else 0.0
    return ResidualReport(value=value, pinned=skipped)


def residual(f: Field, spec: PotentialSpec, eps: float = 1.0) -> float:
    return residual_report(f, spec, eps).value


# ----------------------------------------------------------------------
# Medidas de conjuntos de nivel
# ----------------------------------------------------------------------
def _modulus(f: Field, a: Sequence[float]) -> np.ndarray:
    return np.linalg.norm(f.values - np.asarray(a, dtype=float), axis=-1)


def region_measure(f: Field, region: RegionMask) -> float:
    return float(np.count_nonzero(region.within(f)) * f.grid.cell_volume)


def measure_superlevel(f: Field, a: Sequence[float], lam: float, region: RegionMask) -> float:
    if not lam > 0:
        raise ValueError("λ debe ser positivo.")
    nodes = region.within(f) & (_modulus(f, a) > lam)
    return float(np.count_nonzero(nodes) * f.grid.cell_volume)


def measure_sublevel(f: Field, a: Sequence[float], lam: float, region: RegionMask) -> float:
    if not lam > 0:
        raise ValueError("λ debe ser positivo.")
    nodes = region.within(f) & (_modulus(f, a) <= lam)
    return float(np.count_nonzero(nodes) * f.grid.cell_volume)


def sublevel_potential_integral(
    f: Field, a: Sequence[float], lam: float, region: RegionMask, spec: PotentialSpec
) -> float:
    if not lam > 0:
        raise ValueError("λ debe ser positivo.")
    nodes = region.within(f) & (_modulus(f, a) <= lam)
    return float(np.sum(spec.value(f.values)[nodes]) * f.grid.cell_volume)


def cell_layer_bound(grid: Grid, center: Sequence[float], radius: float) -> float:
    """Medida de los nodos a distancia ≤ √n·h/2 de la esfera de radio ``radius``."""

    r = grid.distance_from(center)
    band = np.abs(r - radius) <= 0.5 * math.sqrt(grid.n) * grid.spacing
    return float(np.count_nonzero(band) * grid.cell_volume)


# ----------------------------------------------------------------------
# Reescalado
# ----------------------------------------------------------------------
def rescale(f: Field, center: Sequence[float], factor: float, target: Grid) -> Field:
    """Remuestrea ``u(center + factor·x)`` sobre ``target`` por interpolación multilineal."""

    if not factor > 0:
        raise ValueError("El factor de reescalado debe ser positivo.")
    if target.n != f.grid.n:
        raise ValueError("La malla destino debe tener la misma dimensión.")
    points = np.asarray(center, dtype=float) + factor * target.coordinates()
    flat = points.reshape(-1, target.n)
    lower = np.asarray(f.grid.origin) - 1e-12
    upper = np.asarray(f.grid.upper) + 1e-12
    if np.any(flat < lower) or np.any(flat > upper):
        raise OutOfDomain("El reescalado sale de la malla de origen.")
    axes = f.grid.axes()
    outside = RegularGridInterpolator(axes, (f.mask == EXTERIOR).astype(float))(
        np.clip(flat, f.grid.origin, f.grid.upper)
    )
    if np.any(outside > 0.0):
        raise OutOfDomain("El reescalado usa nodos exteriores del dominio de origen.")
    interpolator = RegularGridInterpolator(axes, f.values)
    values = interpolator(np.clip(flat, f.grid.origin, f.grid.upper)).reshape(
        target.shape + (f.m,)
    )
    return Field(target, values, box_mask(target))


# ----------------------------------------------------------------------
# Construcción de dominios
# ----------------------------------------------------------------------
def box_mask(grid: Grid) -> np.ndarray:
    """Rectángulo completo: los nodos del borde son Dirichlet."""

    mask = np.full(grid.shape, DIRICHLET, dtype=np.int8)
    inner = tuple(slice(1, -1) for _ in grid.shape)
    mask[inner] = INTERIOR
    return mask


def disk_mask(grid: Grid, center: Sequence[float], radius: float) -> np.ndarray:
    """Bola enmascarada: anillo Dirichlet de un nodo de espesor (vecindad completa)."""

    inside = grid.distance_from(center) < radius
    structure = np.ones((3,) * grid.n, dtype=bool)
    ring = ndimage.binary_dilation(inside, structure=structure) & ~inside
    mask = np.full(grid.shape, EXTERIOR, dtype=np.int8)
    mask[ring] = DIRICHLET
    mask[inside] = INTERIOR
    return mask


def make_field(
    grid: Grid,
    mask: np.ndarray,
    m: int,
    initial: Callable[[np.ndarray], np.ndarray] | Sequence[float] | float,
    boundary: Optional[BoundaryData] = None,
) -> Field:
    """Evalúa el dato inicial en todo el dominio y el dato de borde en los nodos Dirichlet."""

    coords = grid.coordinates()
    if callable(initial):
        values = np.asarray(initial(coords), dtype=float).reshape(grid.shape + (m,))
    else:
        values = np.broadcast_to(np.asarray(initial, dtype=float), grid.shape + (m,)).copy()
    if boundary is not None:
        dirichlet = mask == DIRICHLET
        values[dirichlet] = np.asarray(boundary(coords[dirichlet]), dtype=float).reshape(-1, m)
    return Field(grid, values, mask)


def constant_data(value: Sequence[float]) -> BoundaryData:
    point = np.asarray(value, dtype=float)

    def _data(coords: np.ndarray) -> np.ndarray:
        return np.broadcast_to(point, coords.shape[:-1] + point.shape).copy()

    return _data


def arc_data(
    center: Sequence[float],
    theta1: float,
    theta2: float,
    inside: Sequence[float],
    outside: Sequence[float],
) -> BoundaryData:
    """Dato de dos arcos: ``inside`` para ángulos en (θ₁, θ₂) y ``outside`` en el resto."""

    a_in = np.asarray(inside, dtype=float)
    a_out = np.asarray(outside, dtype=float)
    c = np.asarray(center, dtype=float)

    def _data(coords: np.ndarray) -> np.ndarray:
        offset = coords[..., :2] - c
        angle = np.mod(np.arctan2(offset[..., 1], offset[..., 0]), 2.0 * np.pi)
        lo, hi = np.mod(theta1, 2.0 * np.pi), np.mod(theta2, 2.0 * np.pi)
        if lo <= hi:
            selected = (angle > lo) & (angle < hi)
        else:
            selected = (angle > lo) | (angle < hi)
        return np.where(selected[..., None], a_in, a_out)

    return _data


def profile_data(
    a_minus: Sequence[float], a_plus: Sequence[float], width: float, axis: int = 1
) -> BoundaryData:
    """Perfil ``tanh`` entre dos pozos a lo largo de un eje (interfaz plana en x_axis = 0)."""

    lo = np.asarray(a_minus, dtype=float)
    hi = np.asarray(a_plus, dtype=float)

    def _data(coords: np.ndarray) -> np.ndarray:
        t = 0.5 * (1.0 + np.tanh(coords[..., axis] / width))
        return lo + t[..., None] * (hi - lo)

    return _data
