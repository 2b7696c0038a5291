"""Laboratorio numérico para soluciones minimizantes del sistema de Allen–Cahn vectorial."""

from __future__ import annotations

from typing import Optional

from fastapi import FastAPI

from phaselab.config import Config
from phaselab.routes.connection import router as connection_router
from phaselab.routes.hypotheses import router as hypotheses_router

__version__ = "0.1.0"


def create_app(config: Optional[Config] = None) -> FastAPI:
    """Construye la instancia de :class:`FastAPI` con las rutas del laboratorio."""

    app = FastAPI(title="Phaselab API", version=__version__)
    # Almacenar la configuración en el estado permite accederla desde los routers
    app.state.config = config or Config()
    app.include_router(hypotheses_router, prefix="/api/v1")
    app.include_router(connection_router, prefix="/api/v1")
    return app
