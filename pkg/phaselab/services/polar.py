"""Forma polar u = a + qν, reparto exacto de la energía cinética y mapas de comparación."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Dict, Optional, Sequence, Tuple

import numpy as np
from scipy.linalg import solve_banded

from phaselab.errors import CheckFailed
from phaselab.services.grid_field import (
    ChannelField,
    Field,
    Grid,
    RegionMask,
    axis_difference,
    box_mask,
    cells_inside,
    edge_average,
    energy,
    kinetic_cells,
    laplacian_values,
    potential_cells,
)
from phaselab.services.potentials import Q_MIN, PotentialSpec

LOGGER = logging.getLogger(__name__)


@dataclass(eq=False)
class PolarDecomposition:
    """Módulo ``q = |u−a|`` y dirección unitaria ``ν`` (nula donde q ≤ q_min)."""

    grid: Grid
    well: np.ndarray
    q: np.ndarray
    nu: np.ndarray
    mask: np.ndarray

    def reconstruct(self) -> np.ndarray:
        return self.well + self.q[..., None] * self.nu

    @property
    def degenerate(self) -> np.ndarray:
        return ~np.any(self.nu != 0.0, axis=-1)

    def to_field(self) -> ChannelField:
        """Canal 0 = q, canales siguientes = ν (para guardar como ``.fld``)."""

        return ChannelField(self.grid, np.concatenate([self.q[..., None], self.nu], axis=-1), self.mask)


def to_polar(f: Field, a: Sequence[float], q_min: float = Q_MIN) -> PolarDecomposition:
    well = np.asarray(a, dtype=float)
    offset = f.values - well
    q = np.linalg.norm(offset, axis=-1)
    nu = np.zeros_like(offset)
    alive = q > q_min
    nu[alive] = offset[alive] / q[alive][:, None]
    q = np.where(f.nonexterior, q, 0.0)
    return PolarDecomposition(f.grid, well, q, nu, f.mask.copy())


# ----------------------------------------------------------------------
# Reparto cinético
# ----------------------------------------------------------------------
@dataclass(frozen=True)
class EnergySplit:
    """∫|∇q|², ∫q²|∇ν|² y ∫W sobre las celdas de una región."""

    grad_q_term: float
    q2_gradnu_term: float
    potential_term: float
    omitted_kinetic: float
    direct_kinetic: float

    @property
    def total(self) -> float:
        return 0.5 * self.grad_q_term + 0.5 * self.q2_gradnu_term + self.potential_term

    @property
    def kinetic_mismatch(self) -> float:
        return self.direct_kinetic - (self.grad_q_term + self.q2_gradnu_term)

    def to_payload(self) -> Dict[str, float]:
        return {
            "grad_q_term": self.grad_q_term,
            "q2_gradnu_term": self.q2_gradnu_term,
            "potential_term": self.potential_term,
            "omitted_kinetic": self.omitted_kinetic,
            "direct_kinetic": self.direct_kinetic,
            "total": self.total,
        }


def split_cells(
    q: np.ndarray, nu: np.ndarray, spacing: float, n: int
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Densidades por celda de |∇q|², q²|∇ν|² y máscara de celdas cortadas (ν = 0 en alguna esquina)."""

    grad_q = None
    coupling = None
    for axis in range(n):
        dq = axis_difference(q, axis, spacing)
        dnu = axis_difference(nu, axis, spacing)
        lower = [slice(None)] * n
        upper = [slice(None)] * n
        lower[axis] = slice(None, -1)
        upper[axis] = slice(1, None)
        q_mid = 0.5 * (q[tuple(lower)] + q[tuple(upper)])
        term_q = edge_average(dq**2, n, axis)
        term_nu = edge_average(q_mid**2 * np.sum(dnu**2, axis=-1), n, axis)
        grad_q = term_q if grad_q is None else grad_q + term_q
        coupling = term_nu if coupling is None else coupling + term_nu
    alive = np.any(nu != 0.0, axis=-1)
    cut = ~cells_inside(alive)
    coupling = np.where(cut, 0.0, coupling)
    return grad_q, coupling, cut


def energy_split(
    f: Field, a: Sequence[float], region: RegionMask, spec: PotentialSpec
) -> EnergySplit:
    polar = to_polar(f, a, spec.q_min)
    n = f.grid.n
    h = f.grid.spacing
    cells = cells_inside(region.within(f))
    grad_q, coupling, cut = split_cells(polar.q, polar.nu, h, n)
    kinetic = kinetic_cells(f.values, h, n)
    omitted = np.where(cut, np.maximum(kinetic - grad_q, 0.0), 0.0)
    volume = f.grid.cell_volume
    return EnergySplit(
        grad_q_term=float(np.sum(grad_q[cells]) * volume),
        q2_gradnu_term=float(np.sum(coupling[cells]) * volume),
        potential_term=float(np.sum(potential_cells(f, spec)[cells]) * volume),
        omitted_kinetic=float(np.sum(omitted[cells]) * volume),
        direct_kinetic=float(np.sum(kinetic[cells]) * volume),
    )


# ----------------------------------------------------------------------
# Perfiles de comparación
# ----------------------------------------------------------------------
@dataclass(frozen=True)
class HelmholtzProfile:
    """Solución radial de Δφ = c₁φ en B_R con φ = 1 en ∂B_R."""

    radii: np.ndarray
    values: np.ndarray
    c1: float
    c2: float
    n: int

    def at(self, r: np.ndarray) -> np.ndarray:
        return np.interp(r, self.radii, self.values)


def _radial_solve(R: float, c1: float, n: int, nodes: int) -> np.ndarray:
    dr = R / (nodes - 1)
    r = dr * np.arange(nodes)
    size = nodes - 1
    lower = np.empty(size)
    diag = np.full(size, -2.0 - c1 * dr**2)
    upper = np.empty(size)
    diag[0] = -2.0 * n - c1 * dr**2
    upper[0] = 2.0 * n
    lower[0] = 0.0
    ri = r[1:size]
    upper[1:] = 1.0 + (n - 1) * dr / (2.0 * ri)
    lower[1:] = 1.0 - (n - 1) * dr / (2.0 * ri)
    rhs = np.zeros(size)
    rhs[-1] = -upper[-1]
    banded = np.zeros((3, size))
    banded[0, 1:] = upper[:-1]
    banded[1, :] = diag
    banded[2, :-1] = lower[1:]
    phi = np.empty(nodes)
    phi[:-1] = solve_banded((1, 1), banded, rhs)
    phi[-1] = 1.0
    return phi


def helmholtz_profile(R: float, c1: float, n: int = 1, nodes: int = 10001) -> HelmholtzProfile:
    """Resuelve φ'' + (n−1)/r·φ' = c₁φ con extrapolación de Richardson y estima c₂."""

    if not c1 > 0:
        raise ValueError("c₁ debe ser positivo.")
    if not R > 0 or nodes < 3:
        raise ValueError("Se necesitan R > 0 y al menos 3 nodos.")
    coarse = _radial_solve(R, c1, n, nodes)
    fine = _radial_solve(R, c1, n, 2 * nodes - 1)
    values = (4.0 * fine[::2] - coarse) / 3.0
    values[-1] = 1.0
    radii = np.linspace(0.0, R, nodes)
    inner = radii < R
    c2 = float(np.min(-np.log(values[inner]) / (R - radii[inner])))
    return HelmholtzProfile(radii=radii, values=values, c1=float(c1), c2=c2, n=n)


@dataclass(frozen=True)
class ComparisonProfile:
    """Perfil radial q^h: potencia ``H·(|x|−(R−T))₊^{2/(2−τ)}`` o ``q_M·φ``."""

    kind: str
    R: float
    T: float
    center: Tuple[float, ...]
    alpha: float = 1.0
    M: float = 1.0
    c1: float = 1.0

    def __post_init__(self) -> None:
        if self.kind not in ("power", "helmholtz"):
            raise ValueError(f"Tipo de perfil desconocido '{self.kind}'.")
        if not self.R > 0 or not self.M >= 0:
            raise ValueError("Se necesitan R > 0 y M ≥ 0.")
        if self.kind == "power":
            if not 0 < self.T <= self.R:
                raise ValueError("El ancho T debe estar en (0, R].")
            if self.alpha >= 2.0:
                raise ValueError("Con α = 2 el perfil de potencia degenera; usar 'helmholtz'.")
        elif not self.c1 > 0:
            raise ValueError("c₁ debe ser positivo.")

    @property
    def n(self) -> int:
        return len(self.center)

    @property
    def tau(self) -> float:
        return max(self.alpha, 1.0)

    @property
    def exponent(self) -> float:
        return 2.0 / (2.0 - self.tau)

    @property
    def H(self) -> float:
        return self.M / self.T**self.exponent

    def analytic_c1(self) -> float:
        """C₁ exacto del caso unidimensional: p(p−1)H^{2−τ}."""

        p = self.exponent
        return p * (p - 1.0) * self.H ** (2.0 - self.tau)

    def radial(self, r: np.ndarray, helmholtz: Optional[HelmholtzProfile] = None) -> np.ndarray:
        r = np.asarray(r, dtype=float)
        if self.kind == "power":
            s = np.maximum(r - (self.R - self.T), 0.0)
            return self.H * s**self.exponent
        profile = helmholtz or helmholtz_profile(self.R, self.c1, self.n)
        return self.M * profile.at(np.minimum(r, self.R))

    def values_on(self, grid: Grid, clip_outside: bool = True) -> np.ndarray:
        """q^h nodal; fuera de B_R vale +∞ salvo ``clip_outside=False``."""

        r = grid.distance_from(self.center)
        values = self.radial(r)
        if clip_outside:
            values = np.where(r <= self.R, values, np.inf)
        return values


@dataclass(frozen=True)
class CheckReport:
    c1: float
    c1_first_layers: float
    matching_gradient: float
    matching_bound: float
    checked_nodes: int

    def to_payload(self) -> Dict[str, float]:
        return {
            "c1": self.c1,
            "c1_first_layers": self.c1_first_layers,
            "matching_gradient": self.matching_gradient,
            "matching_bound": self.matching_bound,
            "checked_nodes": self.checked_nodes,
        }


def power_profile_check(profile: ComparisonProfile, spacing: Optional[float] = None) -> CheckReport:
    """Verifica Δq^h ≤ C₁(q^h)^{τ−1} en B_R∖B_{R−T} y ∇q^h = 0 sobre ∂B_{R−T}."""

    if profile.kind != "power":
        raise ValueError("La verificación sólo aplica a perfiles de potencia.")
    h = spacing or min(profile.T / 40.0, profile.R / 40.0)
    count = int(math.ceil((profile.R + 3 * h) / h))
    shape = (2 * count + 1,) * profile.n
    origin = tuple(c - count * h for c in profile.center)
    grid = Grid(shape=shape, spacing=h, origin=origin)
    mask = box_mask(grid)
    qh = profile.values_on(grid, clip_outside=False)
    lap = laplacian_values(qh[..., None], mask, h)[..., 0]
    r = grid.distance_from(profile.center)
    s = r - (profile.R - profile.T)
    ring = (mask == 0) & (s > 0.0) & (r < profile.R)
    smooth = ring & (s >= 3.0 * h)
    layers = ring & (s < 3.0 * h)
    weight = qh ** (profile.tau - 1.0)
    ratio = np.full(grid.shape, -np.inf)
    positive = ring & (weight > 0)
    ratio[positive] = lap[positive] / weight[positive]
    if not np.any(smooth):
        raise CheckFailed("La malla no resuelve el anillo B_R∖B_{R−T}.")
    c1 = float(ratio[smooth].max())
    if not np.isfinite(c1):
        node = np.unravel_index(int(np.argmax(np.where(smooth, ratio, -np.inf))), grid.shape)
        raise CheckFailed("Δq^h/(q^h)^{τ−1} no es finito.", node)
    first = float(ratio[layers & positive].max()) if np.any(layers & positive) else 0.0
    # Pegado C¹: gradiente centrado en los nodos a menos de h de la esfera interior
    grads = np.gradient(qh, h)
    if profile.n == 1:
        grads = [grads]
    slope = np.sqrt(sum(g**2 for g in grads))
    near = (mask == 0) & (np.abs(s) <= h)
    matching = float(slope[near].max()) if np.any(near) else 0.0
    p = profile.exponent
    bound = 2.0 * profile.H * p * (2.0 * h) ** (p - 1.0)
    if matching > bound:
        node = np.unravel_index(int(np.argmax(np.where(near, slope, -np.inf))), grid.shape)
        raise CheckFailed(
            f"∇q^h = {matching:.3e} sobre ∂B_(R−T) supera la cota {bound:.3e}.", node
        )
    return CheckReport(
        c1=c1,
        c1_first_layers=first,
        matching_gradient=matching,
        matching_bound=bound,
        checked_nodes=int(np.count_nonzero(smooth)),
    )


# ----------------------------------------------------------------------
# Mapa de comparación σ
# ----------------------------------------------------------------------
@dataclass(eq=False)
class Comparison:
    sigma: Field
    q_sigma: np.ndarray
    q_h: np.ndarray
    beta: Optional[np.ndarray]


def build_comparison(
    f: Field, a: Sequence[float], profile: ComparisonProfile, lam: Optional[float] = None
) -> Comparison:
    """σ = a + min{q^h, q^u}ν^u y, si se da λ, β = min{q^u − q^σ, λ}."""

    polar = to_polar(f, a)
    grid = f.grid
    lows = np.asarray(profile.center) - profile.R
    highs = np.asarray(profile.center) + profile.R
    if np.any(lows < np.asarray(grid.origin) - 1e-12) or np.any(highs > np.asarray(grid.upper) + 1e-12):
        raise ValueError("La bola del perfil no cabe en la malla.")
    q_h = profile.values_on(grid)
    q_sigma = np.minimum(q_h, polar.q)
    q_sigma = np.where(polar.degenerate, 0.0, q_sigma)
    sigma_values = polar.well + q_sigma[..., None] * polar.nu
    # Donde q^u ≤ q^h el mapa coincide bit a bit con u
    keep = polar.q <= q_h
    sigma_values = np.where(keep[..., None], f.values, sigma_values)
    sigma = Field(grid, sigma_values, f.mask.copy())
    beta = None
    if lam is not None:
        if not lam > 0:
            raise ValueError("λ debe ser positivo.")
        beta = np.minimum(polar.q - q_sigma, lam)
        beta = np.where(f.nonexterior, beta, 0.0)
    return Comparison(sigma=sigma, q_sigma=q_sigma, q_h=q_h, beta=beta)


@dataclass(frozen=True)
class IdentityReport:
    lhs: float
    rhs: float
    potential_gap: float
    coupling: float
    energy_u: float
    energy_sigma: float
    tolerance: float

    @property
    def mismatch(self) -> float:
        return self.lhs - self.rhs

    @property
    def slack(self) -> float:
        """Holgura de discretización |lhs − rhs|; no entra en el veredicto estricto."""

        return abs(self.mismatch)

    @property
    def inequality_holds(self) -> bool:
        return self.lhs <= self.potential_gap + self.tolerance

    @property
    def holds_within_slack(self) -> bool:
        return self.lhs <= self.potential_gap + self.tolerance + self.slack

    def to_payload(self) -> Dict[str, object]:
        return {
            "lhs": self.lhs,
            "rhs": self.rhs,
            "mismatch": self.mismatch,
            "potential_gap": self.potential_gap,
            "coupling": self.coupling,
            "energy_u": self.energy_u,
            "energy_sigma": self.energy_sigma,
            "tolerance": self.tolerance,
            "slack": self.slack,
            "inequality": "PASS" if self.inequality_holds else "FAIL",
            "inequality_within_slack": "PASS" if self.holds_within_slack else "FAIL",
        }


def verify_identity(
    u: Field,
    sigma: Field,
    a: Sequence[float],
    region: RegionMask,
    spec: PotentialSpec,
    tol_audit: Optional[float] = None,
) -> IdentityReport:
    """Evalúa ambos lados de la identidad que compara la energía de u con la de σ.

    ½∫(|∇q^u|² − |∇q^σ|²) = J(u) − J(σ) + ½∫((q^σ)² − (q^u)²)|∇ν^u|² + ∫(W(σ) − W(u))
    """

    polar_u = to_polar(u, a, spec.q_min)
    q_sigma = np.linalg.norm(sigma.values - polar_u.well, axis=-1)
    q_sigma = np.where(u.nonexterior, q_sigma, 0.0)
    n = u.grid.n
    h = u.grid.spacing
    volume = u.grid.cell_volume
    cells = cells_inside(region.within(u))
    grad_qu, coupling_u, _ = split_cells(polar_u.q, polar_u.nu, h, n)
    grad_qs, coupling_s, _ = split_cells(q_sigma, polar_u.nu, h, n)
    lhs = 0.5 * float(np.sum((grad_qu - grad_qs)[cells]) * volume)
    coupling = 0.5 * float(np.sum((coupling_s - coupling_u)[cells]) * volume)
    w_gap = potential_cells(sigma, spec) - potential_cells(u, spec)
    potential_gap = float(np.sum(w_gap[cells]) * volume)
    j_u = energy(u, region, spec)
    j_sigma = energy(sigma, region, spec)
    rhs = j_u - j_sigma + coupling + potential_gap
    tolerance = tol_audit if tol_audit is not None else 1e-8 * abs(j_u)
    return IdentityReport(
        lhs=lhs,
        rhs=rhs,
        potential_gap=potential_gap,
        coupling=coupling,
        energy_u=j_u,
        energy_sigma=j_sigma,
        tolerance=tolerance,
    )


# ----------------------------------------------------------------------
# Constantes de los argumentos de comparación
# ----------------------------------------------------------------------
def ball_blocking_radius(distance: float, n: int) -> float:
    """R(x₀) = 2^{1/(n−1)}/(2^{1/(n−1)} − 1)·d."""

    if n < 2:
        raise ValueError("El radio de bloqueo requiere n ≥ 2.")
    factor = 2.0 ** (1.0 / (n - 1))
    return factor / (factor - 1.0) * distance


def power_amplitude_bound(alpha: float, lam: float, c_star: float) -> float:
    """Cota inferior √(αλ^{2−α}/C*) para la amplitud del perfil de potencia."""

    if not c_star > 0:
        raise ValueError("C* debe ser positivo.")
    return math.sqrt(alpha * lam ** (2.0 - alpha) / c_star)


def cylinder_constants(eta: float) -> Dict[str, float]:
    """c₀ = η/2, c₁ ≤ c₀/4 y A ≥ √(2/c₀) para el caso cilíndrico."""

    if not eta > 0:
        raise ValueError("η debe ser positivo.")
    c0 = 0.5 * eta
    return {"c0": c0, "c1_max": 0.25 * c0, "amplitude_min": math.sqrt(2.0 / c0)}

