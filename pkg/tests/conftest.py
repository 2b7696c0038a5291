"""Fixtures compartidas por las pruebas del laboratorio."""
from __future__ import annotations

import sys
from pathlib import Path

import pytest

# Aseguramos que la carpeta raíz del proyecto esté en ``sys.path`` para que los
# imports absolutos como ``import phaselab`` funcionen aunque las pruebas se
# ejecuten desde subdirectorios.
PROJECT_ROOT = Path(__file__).resolve().parents[1]
if str(PROJECT_ROOT) not in sys.path:
    sys.path.insert(0, str(PROJECT_ROOT))

from phaselab.services.potentials import PotentialSpec, product_well, two_path, two_well  # noqa: E402


@pytest.fixture
def scalar_two_well() -> PotentialSpec:
    """W(u) = ¼(1−u²)²."""
    return two_well()


@pytest.fixture
def planar_wells() -> PotentialSpec:
    """Potencial producto con pozos (±1, 0)."""
    return product_well([(-1.0, 0.0), (1.0, 0.0)])


@pytest.fixture
def two_path_potential() -> PotentialSpec:
    return two_path(gamma=0.9, mu=0.1)


@pytest.fixture
def write_config(tmp_path: Path):
    """Escribe un archivo de experimento y devuelve su ruta."""

    def _write(text: str, name: str = "experiment.cfg") -> Path:
        path = tmp_path / name
        path.write_text(text, encoding="utf-8")
        return path

    return _write
