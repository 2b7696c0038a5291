"""Pruebas del formato binario de instantáneas ``.fld``."""
from __future__ import annotations

from pathlib import Path

import numpy as np
import pytest

from phaselab.services.grid_field import MAX_COMPONENTS, ChannelField, Field, Grid, box_mask, disk_mask, make_field
from phaselab.services.snapshot import HEADER, decode_field, encode_field, load_field, save_field


def test_header_is_64_bytes() -> None:
    assert HEADER.size == 64


def test_save_and_load_preserve_field_bytes(tmp_path: Path) -> None:
    """Guardar y volver a guardar produce exactamente los mismos bytes."""
    grid = Grid.centered((21, 21), 0.1)
    rng = np.random.default_rng(7)
    f = make_field(grid, disk_mask(grid, (0.0, 0.0), 0.8), 2, lambda x: rng.normal(size=x.shape[:-1] + (2,)))
    path = save_field(tmp_path / "sub" / "u.fld", f)
    loaded = load_field(path)
    assert loaded.grid == f.grid
    assert np.array_equal(loaded.mask, f.mask)
    assert np.array_equal(loaded.values, f.values)
    assert encode_field(loaded) == path.read_bytes()


def test_missing_snapshot_raises_file_not_found(tmp_path: Path) -> None:
    with pytest.raises(FileNotFoundError):
        load_field(tmp_path / "nada.fld")


@pytest.mark.parametrize(
    "mutate, message",
    [
        (lambda data: b"XXXX" + data[4:], "válida"),
        (lambda data: data[:-3], "inconsistente"),
        (lambda data: data[:10], "cabecera"),
    ],
)
def test_corrupt_snapshots_are_rejected(mutate, message: str) -> None:
    grid = Grid.centered((5,), 0.5)
    payload = encode_field(make_field(grid, np.array([1, 0, 0, 0, 1], dtype=np.int8), 1, 0.25))
    with pytest.raises(ValueError, match=message):
        decode_field(mutate(payload))


def test_polar_channels_round_trip_as_channel_fields(tmp_path: Path) -> None:
    """Una instantánea con cinco canales sólo puede venir de una forma polar."""
    grid = Grid.centered((5, 5), 0.5)
    values = np.ones(grid.shape + (MAX_COMPONENTS + 1,))
    path = save_field(tmp_path / "polar.fld", ChannelField(grid, values, box_mask(grid)))
    loaded = load_field(path)
    assert isinstance(loaded, ChannelField)
    assert loaded.m == MAX_COMPONENTS + 1
    state = load_field(save_field(tmp_path / "u.fld", make_field(grid, box_mask(grid), 2, 0.5)))
    assert type(state) is Field
