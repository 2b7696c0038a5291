"""Rutas HTTP para verificar hipótesis del potencial y distancias geodésicas."""

from __future__ import annotations

from typing import Any, Dict, List, Optional

from fastapi import APIRouter, HTTPException, status
from pydantic import BaseModel, Field, field_validator

from phaselab.services.potentials import PotentialSpec, check_hypotheses, from_name, geodesic_distance

router = APIRouter(tags=["hypotheses"])


class PotentialRequest(BaseModel):
    """Descripción de un potencial por nombre y parámetros."""

    potential: str = Field("twowell", description="twowell, product o twopath.")
    wells: Optional[List[List[float]]] = Field(
        None, description="Pozos del potencial 'product', por ejemplo '-1,0; 1,0'."
    )
    alpha: float = Field(2.0, ge=1.0, le=2.0, description="Exponente de los pozos.")
    scale: Optional[float] = Field(None, gt=0, description="Factor de escala de W.")
    gamma: float = Field(0.9, description="Parámetro γ del potencial 'twopath'.")
    mu: float = Field(0.1, description="Parámetro μ del potencial 'twopath'.")

    @field_validator("potential", mode="before")
    @classmethod
    def _normalize_name(cls, value: Any) -> Any:
        return value.strip().lower() if isinstance(value, str) else value

    @field_validator("wells", mode="before")
    @classmethod
    def _parse_wells(cls, value: Any) -> Any:
        """Acepta la notación de los archivos de experimento además de listas JSON."""
        if isinstance(value, str):
            rows = [row for row in value.replace("−", "-").split(";") if row.strip()]
            return [[float(part) for part in row.split(",")] for row in rows]
        return value

    def to_spec(self) -> PotentialSpec:
        return from_name(
            self.potential, wells=self.wells, alpha=self.alpha, scale=self.scale,
            gamma=self.gamma, mu=self.mu,
        )


class HypothesesRequest(PotentialRequest):
    box: List[List[float]] = Field(..., description="Intervalo [min, max] por componente.")
    samples: int = Field(2000, ge=1, le=200_000, description="Puntos de muestreo uniforme.")
    directions: int = Field(64, ge=2, description="Rayos por pozo.")
    seed: int = Field(0, description="Semilla del muestreo.")


class HypothesesResponse(BaseModel):
    potencial: str = Field(..., description="Nombre del potencial evaluado.")
    informe: Dict[str, Any] = Field(..., description="Informe de hipótesis.")


class GeodesicRequest(PotentialRequest):
    z1: List[float] = Field(..., description="Punto de partida.")
    z2: List[float] = Field(..., description="Punto de llegada.")
    resolution: float = Field(1e-2, gt=0, description="Paso de la red de caminos.")
    box: Optional[List[List[float]]] = Field(None, description="Caja de la red (opcional).")


class GeodesicResponse(BaseModel):
    distancia: float = Field(..., ge=0, description="Distancia d(z₁, z₂) aproximada.")
    resolucion: float = Field(..., description="Paso de la red utilizada.")


def _box(rows: Optional[List[List[float]]]) -> Optional[List[tuple]]:
    if rows is None:
        return None
    if any(len(row) != 2 for row in rows):
        raise ValueError("Cada fila de la caja debe ser [min, max].")
    return [(float(lo), float(hi)) for lo, hi in rows]


@router.post(
    "/hypotheses",
    response_model=HypothesesResponse,
    summary="Muestrear las hipótesis estructurales de un potencial",
)
async def create_hypotheses_report(payload: HypothesesRequest) -> HypothesesResponse:
    try:
        spec = payload.to_spec()
        report = check_hypotheses(
            spec, _box(payload.box), payload.samples, directions=payload.directions, seed=payload.seed
        )
    except ValueError as exc:
        raise HTTPException(status_code=status.HTTP_400_BAD_REQUEST, detail=str(exc)) from exc
    except Exception as exc:  # pragma: no cover - errores numéricos inesperados
        raise HTTPException(
            status_code=status.HTTP_500_INTERNAL_SERVER_ERROR,
            detail="No se pudo completar el muestreo del potencial.",
        ) from exc
    return HypothesesResponse(potencial=spec.name, informe=report.to_payload())


@router.post(
    "/geodesic",
    response_model=GeodesicResponse,
    summary="Distancia geodésica degenerada entre dos puntos",
)
async def create_geodesic(payload: GeodesicRequest) -> GeodesicResponse:
    try:
        spec = payload.to_spec()
        distance = geodesic_distance(
            spec, payload.z1, payload.z2, payload.resolution, _box(payload.box)
        )
    except ValueError as exc:
        raise HTTPException(status_code=status.HTTP_400_BAD_REQUEST, detail=str(exc)) from exc
    except Exception as exc:  # pragma: no cover - errores numéricos inesperados
        raise HTTPException(
            status_code=status.HTTP_500_INTERNAL_SERVER_ERROR,
            detail="No se pudo calcular la distancia geodésica.",
        ) from exc
    return GeodesicResponse(distancia=distance, resolucion=payload.resolution)
