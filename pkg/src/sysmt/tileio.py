"""``.qtile`` binary and CSV persistence for :class:`QTile`.

Binary layout, little-endian::

    "QTIL" | version u16 | kind u8 (0=act, 1=wgt) | rows u32 | cols u32 |
    n_scales u32 | n_scales x f64 | rows*cols payload (uint8 act / int8 wgt)
"""

from __future__ import annotations

import csv
import struct
from pathlib import Path

import numpy as np

from sysmt.lowering import QTile

MAGIC = b"QTIL"
VERSION = 1
_HEADER = struct.Struct("<4sHBIII")
_KIND_CODE = {"act": 0, "wgt": 1}
_CODE_KIND = {v: k for k, v in _KIND_CODE.items()}


class TileFormatError(ValueError):
    pass


def dumps(tile: QTile) -> bytes:
    rows, cols = tile.shape
    dtype = np.uint8 if tile.kind == "act" else np.int8
    data = tile.data
    info = np.iinfo(dtype)
    if data.size and (data.min() < info.min or data.max() > info.max):
        raise TileFormatError(f"{tile.kind} levels do not fit {np.dtype(dtype).name}")
    head = _HEADER.pack(MAGIC, VERSION, _KIND_CODE[tile.kind], rows, cols, tile.scales.size)
    return head + tile.scales.astype("<f8").tobytes() + data.astype(dtype).tobytes(order="C")


def loads(buf: bytes) -> QTile:
    if len(buf) < _HEADER.size:
        raise TileFormatError("truncated header")
    magic, version, kind, rows, cols, n_scales = _HEADER.unpack_from(buf)
    if magic != MAGIC:
        raise TileFormatError(f"bad magic {magic!r}")
    if version != VERSION:
        raise TileFormatError(f"unsupported version {version}")
    if kind not in _CODE_KIND:
        raise TileFormatError(f"unknown kind code {kind}")
    off = _HEADER.size
    end = off + 8 * n_scales + rows * cols
    if len(buf) != end:
        raise TileFormatError(f"expected {end} bytes, got {len(buf)}")
    scales = np.frombuffer(buf, dtype="<f8", count=n_scales, offset=off)
    dtype = np.uint8 if kind == 0 else np.int8
    data = np.frombuffer(buf, dtype=dtype, count=rows * cols, offset=off + 8 * n_scales)
    return QTile(data.reshape(rows, cols).astype(np.int64), _CODE_KIND[kind], scales.copy())


def save(tile: QTile, path) -> None:
    Path(path).write_bytes(dumps(tile))


def load(path, kind: str | None = None) -> QTile:
    """Load by extension (``.csv`` or binary); malformed content raises TileFormatError.

    ``kind`` names the role of a headerless CSV; a header or binary kind must agree with it.
    """
    path = Path(path)
    try:
        tile = load_csv(path, kind) if path.suffix == ".csv" else loads(path.read_bytes())
    except TileFormatError:
        raise
    except (ValueError, TypeError) as e:
        raise TileFormatError(f"{path}: {e}") from None
    if kind is not None and tile.kind != kind:
        raise TileFormatError(f"{path}: expected a {kind} tile, found {tile.kind}")
    return tile


def save_csv(tile: QTile, path) -> None:
    """First line ``# kind,scale...``, then one row of integer levels per line."""
    with open(path, "w", newline="") as f:
        f.write("# " + ",".join([tile.kind, *(repr(float(s)) for s in tile.scales)]) + "\n")
        writer = csv.writer(f)
        writer.writerows(tile.data.tolist())


def load_csv(path, kind: str | None = None) -> QTile:
    with open(path, newline="") as f:
        lines = f.read().splitlines()
    scales = [1.0]
    if lines and lines[0].startswith("#"):
        head = [h.strip() for h in lines[0][1:].split(",")]
        if kind is not None and head[0] != kind:
            raise TileFormatError(f"{path}: expected a {kind} tile, found {head[0]}")
        kind = head[0]
        scales = [float(s) for s in head[1:]] or [1.0]
        lines = lines[1:]
    if kind is None:
        raise TileFormatError(f"{path}: no kind header and no kind given")
    rows = [[int(v) for v in r] for r in csv.reader(lines) if r]
    if not rows or len({len(r) for r in rows}) != 1:
        raise TileFormatError(f"{path}: ragged or empty CSV tile")
    return QTile(np.array(rows, dtype=np.int64), kind, scales)
