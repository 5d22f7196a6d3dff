"""Binary container for grid fields and boundary-map matrices.

Layout (little-endian throughout):

    bytes 0..3    magic b"CGOF"
    u32           format version (currently 1)
    3 x f64       grid origin
    3 x f64       grid extent
    3 x u32       nodes per axis
    u8            rank: 0 scalar, 1 vector, 2 two-form
    payload       f64 pairs (re, im) per node, x index fastest

Vector and two-form payloads store the 3 components as consecutive scalar
blocks (component-major), each block in x-fastest node order; the two-form
block order is (W_12, W_13, W_23).

Boundary-map matrices reuse the same header with rank tag 2, node counts
(rows, cols, 1) and a JSON sidecar ``<path>.basis.json`` describing the
boundary basis; `load_dn_matrix` requires the sidecar, and `load_field`
refuses rank-2 files that have one.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .grid import Grid, ScalarField, TwoForm, VectorField

__all__ = ["save_field", "load_field", "save_matrix", "load_matrix"]

MAGIC = b"CGOF"
VERSION = 1
_HEADER = struct.Struct("<4sI3d3d3IB")


def _pack_header(origin, extent, n_points, rank: int) -> bytes:
    return _HEADER.pack(MAGIC, VERSION, *origin, *extent, *n_points, rank)


def _unpack_header(buf: bytes):
    magic, version, o0, o1, o2, e0, e1, e2, n0, n1, n2, rank = _HEADER.unpack(buf)
    if magic != MAGIC:
        raise ValueError(f"container-bad-magic: expected {MAGIC!r}, got {magic!r}")
    if version != VERSION:
        raise ValueError(f"container-unsupported-version: {version}")
    return (o0, o1, o2), (e0, e1, e2), (n0, n1, n2), rank


def _payload(values: np.ndarray) -> bytes:
    # x-fastest order = Fortran order for our (nx, ny, nz) C-indexed arrays
    flat = np.asarray(values, dtype=np.complex128).ravel(order="F")
    out = np.empty(2 * flat.size, dtype="<f8")
    out[0::2] = flat.real
    out[1::2] = flat.imag
    return out.tobytes()


def _read_payload(raw: bytes, shape) -> np.ndarray:
    flat = np.frombuffer(raw, dtype="<f8")
    vals = flat[0::2] + 1j * flat[1::2]
    return vals.reshape(shape, order="F")


def save_field(path: str | Path, field: ScalarField | VectorField | TwoForm) -> None:
    path = Path(path)
    g = field.grid
    if isinstance(field, ScalarField):
        rank, blocks = 0, [field.values]
    elif isinstance(field, VectorField):
        rank, blocks = 1, [field.values[c] for c in range(3)]
    elif isinstance(field, TwoForm):
        rank, blocks = 2, [field.components[c] for c in range(3)]
    else:
        raise ValueError(f"container-unsupported-rank: cannot serialize {type(field).__name__}")
    with open(path, "wb") as fh:
        fh.write(_pack_header(g.origin, g.extent, g.n_points, rank))
        for b in blocks:
            fh.write(_payload(b))


def load_field(path: str | Path) -> ScalarField | VectorField | TwoForm:
    path = Path(path)
    raw = path.read_bytes()
    origin, extent, n_points, rank = _unpack_header(raw[: _HEADER.size])
    if rank == 2 and _sidecar(path).exists():
        raise ValueError("container-is-matrix: rank-2 file has a basis sidecar; use load_matrix")
    grid = Grid(origin, extent, n_points)
    n = grid.size
    body = raw[_HEADER.size :]
    block_bytes = 16 * n
    if rank == 0:
        if len(body) != block_bytes:
            raise ValueError(f"container-truncated: expected {block_bytes} payload bytes, got {len(body)}")
        return ScalarField(grid, _read_payload(body, grid.n_points))
    if rank in (1, 2):
        if len(body) != 3 * block_bytes:
            raise ValueError(f"container-truncated: expected {3 * block_bytes} payload bytes, got {len(body)}")
        comps = np.stack(
            [_read_payload(body[c * block_bytes : (c + 1) * block_bytes], grid.n_points) for c in range(3)]
        )
        return VectorField(grid, comps) if rank == 1 else TwoForm(grid, comps)
    raise ValueError(f"container-unsupported-rank: {rank}")


def _sidecar(path: Path) -> Path:
    return path.with_name(path.name + ".basis.json")


def save_matrix(path: str | Path, matrix: np.ndarray, basis_descriptor: dict) -> None:
    """Store a dense complex matrix with rank tag 2 and a JSON basis sidecar."""
    path = Path(path)
    m = np.asarray(matrix, dtype=np.complex128)
    if m.ndim != 2:
        raise ValueError(f"container-unsupported-rank: matrix must be 2-D, got shape {m.shape}")
    with open(path, "wb") as fh:
        fh.write(_pack_header((0.0, 0.0, 0.0), (1.0, 1.0, 1.0), (m.shape[0], m.shape[1], 1), 2))
        fh.write(_payload(m.reshape(m.shape + (1,))))
    _sidecar(path).write_text(json.dumps(basis_descriptor, indent=2, sort_keys=True))


def load_matrix(path: str | Path) -> tuple[np.ndarray, dict]:
    path = Path(path)
    side = _sidecar(path)
    if not side.exists():
        raise ValueError(f"container-missing-sidecar: {side} not found")
    raw = path.read_bytes()
    _, _, (rows, cols, one), rank = _unpack_header(raw[: _HEADER.size])
    if rank != 2 or one != 1:
        raise ValueError(f"container-unsupported-rank: expected matrix rank tag 2, got rank={rank}")
    body = raw[_HEADER.size :]
    if len(body) != 16 * rows * cols:
        raise ValueError(f"container-truncated: expected {16 * rows * cols} payload bytes, got {len(body)}")
    m = _read_payload(body, (rows, cols, 1))[:, :, 0]
    return m, json.loads(side.read_text())
