"""Declaración de parámetros de configuración leídos desde variables de entorno."""

from __future__ import annotations

import os
from dataclasses import dataclass

from dotenv import load_dotenv

# Se cargan variables de entorno desde un archivo `.env` si está disponible
load_dotenv()


def _env_flag(name: str, default: str) -> bool:
    return os.getenv(name, default).strip().lower() in {"1", "true", "yes", "on"}


@dataclass(frozen=True)
class Config:
    """Modelo inmutable con la configuración global del laboratorio."""

    # Paralelismo y reproducibilidad
    THREADS: int = int(os.getenv("PHASELAB_THREADS", "1"))
    DETERMINISTIC: bool = _env_flag("PHASELAB_DETERMINISTIC", "true")

    # Umbral compartido por potenciales y forma polar
    Q_MIN: float = float(os.getenv("PHASELAB_Q_MIN", "1e-8"))

    # Salidas y límites de tamaño
    OUTPUT_DIR: str = os.getenv("PHASELAB_OUTPUT_DIR", "runs")
    MAX_GRID_NODES: int = int(os.getenv("PHASELAB_MAX_GRID_NODES", "4000000"))

    @property
    def threads(self) -> int:
        """Número de hilos efectivo, nunca menor que uno."""

        return max(1, int(self.THREADS))

    @property
    def deterministic(self) -> bool:
        return bool(self.DETERMINISTIC)
