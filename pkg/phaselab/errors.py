"""Excepciones propias del laboratorio numérico."""

from __future__ import annotations

from typing import Any, Optional, Sequence


class PhaselabError(Exception):
    """Raíz común de todos los errores emitidos por ``phaselab``."""


class DegenerateGradient(PhaselabError, ValueError):
    """El gradiente de un potencial con α < 2 no está definido tan cerca de un pozo."""

    def __init__(self, point: Sequence[float], well_index: int, distance: float) -> None:
        super().__init__(
            f"Gradiente degenerado: el punto {list(point)!r} está a {distance:.3e} "
            f"del pozo {well_index}."
        )
        self.point = list(point)
        self.well_index = well_index
        self.distance = distance


class UnsupportedAlpha(PhaselabError, ValueError):
    """Operación que sólo existe para pozos cuadráticos (α = 2)."""


class HypothesisViolated(PhaselabError, ValueError):
    """Un muestreo del potencial contradice alguna de las hipótesis estructurales."""

    def __init__(self, message: str, point: Optional[Sequence[float]] = None) -> None:
        super().__init__(message)
        self.point = None if point is None else list(point)


class OutOfDomain(PhaselabError, ValueError):
    """Un reescalado pide valores fuera de la malla de origen."""


class CheckFailed(PhaselabError, RuntimeError):
    """Una desigualdad verificada nodo a nodo falló."""

    def __init__(self, message: str, node: Optional[Sequence[int]] = None) -> None:
        super().__init__(message)
        self.node = None if node is None else tuple(int(i) for i in node)


class DegenerateWindow(PhaselabError, ValueError):
    """La ventana de ajuste tiene menos de cuatro puntos utilizables."""


class NoDecayWindow(PhaselabError, ValueError):
    """El perfil nunca entra en la ventana de decaimiento lineal."""


class NonAdmissible(PhaselabError, ValueError):
    """La curva no pertenece a la clase simétrica con los límites correctos."""


class NotHyperbolic(PhaselabError, RuntimeError):
    """El operador linealizado no es positivo en el subespacio simétrico."""

    def __init__(self, eta: float) -> None:
        super().__init__(f"El operador linealizado no es hiperbólico: η = {eta:.6g} ≤ 0.")
        self.eta = eta


class TruncationTooShort(PhaselabError, RuntimeError):
    """La cola de la conexión no muestra decaimiento exponencial suficiente."""


class TruncationMismatch(PhaselabError, ValueError):
    """La malla cilíndrica no coincide con la truncación de la conexión."""


class EmptyLevelSet(PhaselabError, ValueError):
    """El campo no cruza el nivel pedido en ninguna celda."""


class LambdaAboveThreshold(PhaselabError, ValueError):
    """El umbral λ pedido no es menor que λ*."""


class ConfigError(PhaselabError, ValueError):
    """Archivo de experimento inválido."""

    def __init__(self, message: str, key: Optional[str] = None) -> None:
        super().__init__(message)
        self.key = key


class NoConvergence(PhaselabError, RuntimeError):
    """El descenso agotó las iteraciones sin alcanzar la tolerancia."""

    def __init__(self, message: str, best: Any = None, log: Any = None) -> None:
        super().__init__(message)
        self.best = best
        self.log = log
