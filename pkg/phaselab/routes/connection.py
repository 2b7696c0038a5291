"""Ruta HTTP que calcula conexiones heteroclínicas y su hiperbolicidad."""

from __future__ import annotations

from typing import Any, Dict, Optional, Tuple

from fastapi import APIRouter, Depends, HTTPException, Request, status
from pydantic import BaseModel, Field

from phaselab.config import Config
from phaselab.routes.hypotheses import PotentialRequest
from phaselab.services.connection1d import ConnectionProfile, hyperbolicity, solve_connection

router = APIRouter(tags=["connection"])

CacheKey = Tuple[Any, ...]


class ConnectionRequest(PotentialRequest):
    L: float = Field(10.0, gt=0, description="Semilongitud del intervalo [−L, L].")
    N: int = Field(2001, ge=5, description="Número impar de nodos.")
    branch: float = Field(0.0, description="Abultamiento transversal inicial (elige la rama).")
    tol: float = Field(1e-9, gt=0, description="Tolerancia del residuo.")


class ConnectionResponse(BaseModel):
    perfil: Dict[str, Any] = Field(..., description="Resumen de la conexión calculada.")
    eta: float = Field(..., description="Menor autovalor del operador linealizado simétrico.")
    hiperbolica: bool = Field(..., description="Indica si η > 0.")


class ConnectionCache:
    """Conexiones ya resueltas en este proceso, por parámetros de la petición."""

    def __init__(self, max_nodes: int) -> None:
        self.max_nodes = max_nodes
        self._profiles: Dict[CacheKey, ConnectionProfile] = {}

    def get(self, payload: ConnectionRequest) -> ConnectionProfile:
        if payload.N > self.max_nodes:
            raise ValueError(f"N = {payload.N} supera el máximo de {self.max_nodes} nodos.")
        key = (
            payload.potential,
            tuple(map(tuple, payload.wells or [])),
            payload.alpha,
            payload.scale,
            payload.gamma,
            payload.mu,
            payload.L,
            payload.N,
            payload.branch,
            payload.tol,
        )
        profile = self._profiles.get(key)
        if profile is None:
            profile = solve_connection(
                payload.to_spec(), payload.L, payload.N, tol=payload.tol, branch=payload.branch
            )
            self._profiles[key] = profile
        return profile


def _get_connection_cache(request: Request) -> ConnectionCache:
    cache: Optional[ConnectionCache] = getattr(request.app.state, "connection_cache", None)
    if cache is None:
        config: Config = getattr(request.app.state, "config", Config())
        cache = ConnectionCache(config.MAX_GRID_NODES)
        request.app.state.connection_cache = cache
    return cache


@router.post(
    "/connection",
    response_model=ConnectionResponse,
    summary="Conexión simétrica entre dos pozos y su constante de hiperbolicidad",
)
async def create_connection(
    payload: ConnectionRequest, cache: ConnectionCache = Depends(_get_connection_cache)
) -> ConnectionResponse:
    """Resuelve (o recupera) la conexión y evalúa η en el subespacio simétrico."""
    try:
        profile = cache.get(payload)
        report = hyperbolicity(profile, strict=False)
    except ValueError as exc:
        raise HTTPException(status_code=status.HTTP_400_BAD_REQUEST, detail=str(exc)) from exc
    except RuntimeError as exc:
        raise HTTPException(
            status_code=status.HTTP_500_INTERNAL_SERVER_ERROR, detail=str(exc)
        ) from exc
    except Exception as exc:  # pragma: no cover - errores numéricos inesperados
        raise HTTPException(
            status_code=status.HTTP_500_INTERNAL_SERVER_ERROR,
            detail="No se pudo calcular la conexión solicitada.",
        ) from exc
    return ConnectionResponse(perfil=profile.to_payload(), eta=report.eta, hiperbolica=report.eta > 0)
