"""Binary image/sinogram files and their CSV mirrors.

All binary fields are little-endian.

``CTG1`` grid image::

    b"CTG1" | u32 nx | u32 ny | f64 xmin xmax ymin ymax | f64 values[ny][nx] | u64 checksum

``CTS1`` sinogram::

    b"CTS1" | u32 count | (f64 arc, f64 angle, f64 weight, f64 value) * count | u64 checksum

The checksum is 64-bit FNV-1a over the payload bytes (the f64 values or
node records, not the header). Sinogram angles are measured from the
outward normal at the boundary point.
"""

from __future__ import annotations

import io
import os
import struct
from dataclasses import dataclass

import numpy as np

from .errors import FileFormatError
from .grids import SourceImage, SpatialGrid
from .raytransform import BoundarySinogram

__all__ = ["fnv1a64", "write_image", "read_image", "SinogramRecord", "write_sinogram",
           "read_sinogram", "write_image_csv", "write_sinogram_csv", "write_table_csv",
           "read_table_csv"]

IMAGE_MAGIC = b"CTG1"
SINO_MAGIC = b"CTS1"
_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3
_MASK = 0xFFFFFFFFFFFFFFFF


def fnv1a64(data: bytes) -> int:
    """64-bit FNV-1a hash."""
    h = _FNV_OFFSET
    # 8-byte blocks through numpy would reorder the byte loop; a plain loop
    # over a memoryview is fast enough for desk-scale files.
    for b in memoryview(data).cast("B"):
        h ^= b
        h = (h * _FNV_PRIME) & _MASK
    return h


def _atomic_write(path, blob: bytes):
    path = os.fspath(path)
    tmp = path + ".tmp"
    with open(tmp, "wb") as fh:
        fh.write(blob)
    os.replace(tmp, path)


def _read(path) -> bytes:
    with open(path, "rb") as fh:
        return fh.read()


# -- images ------------------------------------------------------------------------------

def write_image(path, image: SourceImage):
    g = image.grid
    payload = np.ascontiguousarray(image.values, dtype="<f8").tobytes()
    head = IMAGE_MAGIC + struct.pack("<II4d", g.nx, g.ny, *g.bounds)
    _atomic_write(path, head + payload + struct.pack("<Q", fnv1a64(payload)))


def read_image(path) -> SourceImage:
    """Read a ``CTG1`` file; the support is the whole grid."""
    blob = _read(path)
    head = 4 + struct.calcsize("<II4d")
    if len(blob) < head + 8:
        raise FileFormatError(f"{path}: truncated image header ({len(blob)} bytes)")
    if blob[:4] != IMAGE_MAGIC:
        raise FileFormatError(f"{path}: bad magic {blob[:4]!r}, expected {IMAGE_MAGIC!r}")
    nx, ny, *bounds = struct.unpack_from("<II4d", blob, 4)
    expected = head + 8 * nx * ny + 8
    if len(blob) != expected:
        raise FileFormatError(f"{path}: header declares {nx}x{ny} values ({expected} bytes) "
                              f"but the file has {len(blob)} bytes")
    payload = blob[head:-8]
    (stored,) = struct.unpack_from("<Q", blob, len(blob) - 8)
    if stored != fnv1a64(payload):
        raise FileFormatError(f"{path}: checksum mismatch")
    try:
        grid = SpatialGrid(nx, ny, tuple(bounds))
    except ValueError as exc:
        raise FileFormatError(f"{path}: invalid grid header: {exc}") from None
    vals = np.frombuffer(payload, dtype="<f8").reshape(ny, nx).astype(float)
    return SourceImage(vals, grid)


# -- sinograms ----------------------------------------------------------------------------

@dataclass
class SinogramRecord:
    """Node records of a sinogram file."""

    arc: np.ndarray
    angle: np.ndarray
    weight: np.ndarray
    value: np.ndarray

    def __len__(self):
        return len(self.value)

    @classmethod
    def from_sinogram(cls, g: BoundarySinogram) -> "SinogramRecord":
        n = g.nodes
        return cls(n.arc.copy(), n.alpha.copy(), n.weight.copy(), g.values.copy())

    def on_nodes(self, nodes, rtol: float = 1e-10) -> BoundarySinogram:
        """Attach the values to ``nodes`` after checking that positions,
        angles and weights agree."""
        if len(nodes) != len(self):
            raise FileFormatError(f"sinogram has {len(self)} nodes, operator expects {len(nodes)}")
        for name, a, b in (("arc", self.arc, nodes.arc), ("angle", self.angle, nodes.alpha),
                           ("weight", self.weight, nodes.weight)):
            scale = max(float(np.max(np.abs(b))), 1e-300)
            if np.max(np.abs(a - b)) > rtol * scale:
                raise FileFormatError(f"sinogram node {name}s do not match the operator nodes")
        return BoundarySinogram(nodes, self.value)


def write_sinogram(path, g):
    rec = g if isinstance(g, SinogramRecord) else SinogramRecord.from_sinogram(g)
    table = np.stack([rec.arc, rec.angle, rec.weight, rec.value], axis=1)
    payload = np.ascontiguousarray(table, dtype="<f8").tobytes()
    head = SINO_MAGIC + struct.pack("<I", len(rec))
    _atomic_write(path, head + payload + struct.pack("<Q", fnv1a64(payload)))


def read_sinogram(path) -> SinogramRecord:
    blob = _read(path)
    if len(blob) < 16:
        raise FileFormatError(f"{path}: truncated sinogram header ({len(blob)} bytes)")
    if blob[:4] != SINO_MAGIC:
        raise FileFormatError(f"{path}: bad magic {blob[:4]!r}, expected {SINO_MAGIC!r}")
    (count,) = struct.unpack_from("<I", blob, 4)
    expected = 8 + 32 * count + 8
    if len(blob) != expected:
        raise FileFormatError(f"{path}: header declares {count} nodes ({expected} bytes) "
                              f"but the file has {len(blob)} bytes")
    payload = blob[8:-8]
    (stored,) = struct.unpack_from("<Q", blob, len(blob) - 8)
    if stored != fnv1a64(payload):
        raise FileFormatError(f"{path}: checksum mismatch")
    t = np.frombuffer(payload, dtype="<f8").reshape(count, 4).astype(float)
    return SinogramRecord(t[:, 0].copy(), t[:, 1].copy(), t[:, 2].copy(), t[:, 3].copy())


# -- CSV ------------------------------------------------------------------------------------

def _fmt(v) -> str:
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return format(float(v), ".17g")


def write_table_csv(path, header, columns):
    cols = [np.asarray(c) for c in columns]
    n = len(cols[0])
    if any(len(c) != n for c in cols) or len(header) != len(cols):
        raise ValueError("CSV columns must have equal length and match the header")
    buf = io.StringIO(newline="")
    buf.write(",".join(header) + "\n")
    for i in range(n):
        buf.write(",".join(_fmt(c[i]) for c in cols) + "\n")
    _atomic_write(path, buf.getvalue().encode("ascii"))


def read_table_csv(path):
    """Parse a CSV written by :func:`write_table_csv`; returns ``(header, dict of arrays)``."""
    with open(path, "r", newline="") as fh:
        lines = fh.read().split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if not lines:
        raise FileFormatError(f"{path}:1: empty file, expected a header row")
    header = lines[0].split(",")
    rows = []
    for k, line in enumerate(lines[1:], start=2):
        parts = line.split(",")
        if len(parts) != len(header):
            raise FileFormatError(f"{path}:{k}: expected {len(header)} fields, got {len(parts)}")
        try:
            rows.append([float(p) for p in parts])
        except ValueError as exc:
            raise FileFormatError(f"{path}:{k}: {exc}") from None
    data = np.array(rows, dtype=float).reshape(-1, len(header))
    return header, {h: data[:, i] for i, h in enumerate(header)}


def write_image_csv(path, image: SourceImage):
    g = image.grid
    I, J = np.meshgrid(np.arange(g.ny), np.arange(g.nx), indexing="ij")
    P = g.points
    write_table_csv(path, ["row", "col", "x", "y", "value"],
                    [I.ravel(), J.ravel(), P[..., 0].ravel(), P[..., 1].ravel(),
                     image.values.ravel()])


def write_sinogram_csv(path, g):
    rec = g if isinstance(g, SinogramRecord) else SinogramRecord.from_sinogram(g)
    write_table_csv(path, ["arc", "angle", "weight", "value"],
                    [rec.arc, rec.angle, rec.weight, rec.value])
