"""Pruebas de alto nivel para los endpoints de hipótesis, geodésicas y conexiones."""
from __future__ import annotations

import asyncio
import math
from types import SimpleNamespace

import pytest
from fastapi import HTTPException

from phaselab import create_app
from phaselab.config import Config
from phaselab.routes.connection import (
    ConnectionCache,
    ConnectionRequest,
    _get_connection_cache,
    create_connection,
)
from phaselab.routes.hypotheses import (
    GeodesicRequest,
    HypothesesRequest,
    PotentialRequest,
    create_geodesic,
    create_hypotheses_report,
)


class _StubRequest:
    """Petición mínima con el estado de la aplicación que usan las dependencias."""

    def __init__(self, config: Config | None = None) -> None:
        state = SimpleNamespace()
        if config is not None:
            state.config = config
        self.app = SimpleNamespace(state=state)


def test_app_registers_routes() -> None:
    app = create_app()
    paths = {route.path for route in app.routes}
    assert {"/api/v1/hypotheses", "/api/v1/geodesic", "/api/v1/connection"} <= paths
    assert isinstance(app.state.config, Config)


def test_potential_request_accepts_experiment_notation() -> None:
    payload = PotentialRequest(potential=" Product ", wells="−1,0; 1,0")
    assert payload.potential == "product"
    assert payload.wells == [[-1.0, 0.0], [1.0, 0.0]]
    assert payload.to_spec().m == 2


def test_hypotheses_endpoint_returns_report() -> None:
    payload = HypothesesRequest(potential="twowell", box=[[-2.0, 2.0]], samples=200, directions=8)
    response = asyncio.run(create_hypotheses_report(payload))
    assert response.potencial == "twowell"
    assert response.informe


@pytest.mark.parametrize(
    "kwargs",
    [
        {"potential": "twowell", "box": [[-2.0, 0.0, 2.0]]},
        {"potential": "triplewell", "box": [[-2.0, 2.0]]},
        {"potential": "product", "box": [[-2.0, 2.0], [-1.0, 1.0]]},
    ],
)
def test_hypotheses_endpoint_rejects_invalid_requests(kwargs: dict) -> None:
    payload = HypothesesRequest(samples=50, **kwargs)
    with pytest.raises(HTTPException) as info:
        asyncio.run(create_hypotheses_report(payload))
    assert info.value.status_code == 400


def test_geodesic_endpoint_matches_tanh_action() -> None:
    payload = GeodesicRequest(potential="twowell", z1=[-1.0], z2=[1.0], resolution=1e-3)
    response = asyncio.run(create_geodesic(payload))
    assert response.distancia == pytest.approx(2.0 * math.sqrt(2.0) / 3.0, rel=1e-2)
    assert response.resolucion == 1e-3


def test_geodesic_endpoint_rejects_wrong_dimension() -> None:
    payload = GeodesicRequest(potential="twowell", z1=[-1.0, 0.0], z2=[1.0, 0.0])
    with pytest.raises(HTTPException) as info:
        asyncio.run(create_geodesic(payload))
    assert info.value.status_code == 400


def test_connection_cache_is_stored_on_app_state() -> None:
    request = _StubRequest(Config(MAX_GRID_NODES=1000))
    cache = _get_connection_cache(request)
    assert cache.max_nodes == 1000
    assert _get_connection_cache(request) is cache
    assert isinstance(_get_connection_cache(_StubRequest()), ConnectionCache)


def test_connection_endpoint_reuses_profiles() -> None:
    cache = ConnectionCache(max_nodes=10_000)
    payload = ConnectionRequest(potential="twowell", L=5.0, N=201)
    first = asyncio.run(create_connection(payload, cache))
    second = asyncio.run(create_connection(payload, cache))
    assert first.hiperbolica
    assert first.eta == pytest.approx(1.5, rel=5e-2)
    assert second.eta == first.eta
    assert len(cache._profiles) == 1
    assert cache.get(payload) is cache.get(payload)


@pytest.mark.parametrize(
    "kwargs",
    [
        {"potential": "twowell", "N": 20_001},
        {"potential": "twowell", "N": 200},
        {"potential": "product", "wells": [[0.0], [1.0]], "N": 101},
    ],
)
def test_connection_endpoint_rejects_invalid_requests(kwargs: dict) -> None:
    cache = ConnectionCache(max_nodes=10_000)
    with pytest.raises(HTTPException) as info:
        asyncio.run(create_connection(ConnectionRequest(**kwargs), cache))
    assert info.value.status_code == 400
