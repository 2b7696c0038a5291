"""Lectura y escritura de instantáneas de campos en formato ``.fld``.

Cabecera fija de 64 bytes en little-endian::

    magic   4s   b"PHLB"
    version H
    n       B
    m       B
    shape   3I   (ejes sobrantes en 0)
    spacing d
    origin  3d   (ejes sobrantes en 0)
    reserva 12x

Siguen los valores en orden de filas como ``float64`` little-endian con forma
``(*shape, m)`` y un byte de máscara por nodo.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from phaselab.services.grid_field import MAX_COMPONENTS, ChannelField, Field, Grid

MAGIC = b"PHLB"
VERSION = 1
HEADER = struct.Struct("<4sHBB3Id3d12x")


def encode_field(field: Field) -> bytes:
    grid = field.grid
    shape = list(grid.shape) + [0] * (3 - grid.n)
    origin = list(grid.origin) + [0.0] * (3 - grid.n)
    header = HEADER.pack(MAGIC, VERSION, grid.n, field.m, *shape, grid.spacing, *origin)
    values = np.ascontiguousarray(field.values, dtype="<f8").tobytes()
    mask = np.ascontiguousarray(field.mask, dtype=np.uint8).tobytes()
    return header + values + mask


def decode_field(payload: bytes) -> Field:
    if len(payload) < HEADER.size:
        raise ValueError("La instantánea es más corta que su cabecera.")
    magic, version, n, m, s0, s1, s2, spacing, o0, o1, o2 = HEADER.unpack_from(payload)
    if magic != MAGIC:
        raise ValueError("El archivo no es una instantánea .fld válida.")
    if version != VERSION:
        raise ValueError(f"Versión de instantánea no soportada: {version}.")
    shape = (s0, s1, s2)[:n]
    origin = (o0, o1, o2)[:n]
    grid = Grid(shape=tuple(int(s) for s in shape), spacing=float(spacing), origin=origin)
    count = int(np.prod(shape))
    offset = HEADER.size
    value_bytes = count * m * 8
    expected = offset + value_bytes + count
    if len(payload) != expected:
        raise ValueError(
            f"Tamaño de instantánea inconsistente: {len(payload)} bytes, se esperaban {expected}."
        )
    values = np.frombuffer(payload, dtype="<f8", count=count * m, offset=offset)
    mask = np.frombuffer(payload, dtype=np.uint8, count=count, offset=offset + value_bytes)
    # Más componentes que un estado sólo pueden ser canales polares (q, ν)
    kind = ChannelField if m > MAX_COMPONENTS else Field
    return kind(grid, values.reshape(grid.shape + (m,)).astype(float), mask.reshape(grid.shape))


def save_field(path: Path | str, field: Field) -> Path:
    target = Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    target.write_bytes(encode_field(field))
    return target


def load_field(path: Path | str) -> Field:
    source = Path(path)
    if not source.exists():
        raise FileNotFoundError(f"No se encontró la instantánea {source!s}.")
    return decode_field(source.read_bytes())
