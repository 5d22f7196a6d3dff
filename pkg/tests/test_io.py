"""Round-trip and layout checks for the CGOF container."""

import struct

import numpy as np
import pytest

from cgolab.grid import Grid, ScalarField, TwoForm, VectorField
from cgolab.io import load_field, load_matrix, save_field, save_matrix


def small_grid():
    return Grid((-1.0, 0.0, 0.5), (2.0, 1.0, 1.5), (4, 3, 5))


def test_scalar_round_trip_bit_exact(tmp_path):
    g = small_grid()
    rng = np.random.default_rng(3)
    f = ScalarField(g, rng.standard_normal(g.n_points) + 1j * rng.standard_normal(g.n_points))
    p = tmp_path / "f.cgof"
    save_field(p, f)
    back = load_field(p)
    assert isinstance(back, ScalarField)
    assert back.grid.compatible(g)
    assert np.array_equal(back.values, f.values)


def test_vector_and_two_form_round_trip(tmp_path):
    g = small_grid()
    rng = np.random.default_rng(4)
    v = VectorField(g, rng.standard_normal((3,) + g.n_points) + 0j)
    w = TwoForm(g, rng.standard_normal((3,) + g.n_points) * 1j)
    save_field(tmp_path / "v.cgof", v)
    save_field(tmp_path / "w.cgof", w)
    bv, bw = load_field(tmp_path / "v.cgof"), load_field(tmp_path / "w.cgof")
    assert isinstance(bv, VectorField) and np.array_equal(bv.values, v.values)
    assert isinstance(bw, TwoForm) and np.array_equal(bw.components, w.components)


def test_header_layout_and_x_fastest_order(tmp_path):
    g = Grid((0.0, 0.0, 0.0), (1.0, 1.0, 1.0), (2, 2, 2))
    vals = np.arange(8, dtype=float).reshape(2, 2, 2)  # value = 4*ix + 2*iy + iz
    p = tmp_path / "f.cgof"
    save_field(p, ScalarField(g, vals))
    raw = p.read_bytes()
    assert raw[:4] == b"CGOF"
    (version,) = struct.unpack_from("<I", raw, 4)
    assert version == 1
    origin = struct.unpack_from("<3d", raw, 8)
    extent = struct.unpack_from("<3d", raw, 32)
    npts = struct.unpack_from("<3I", raw, 56)
    (rank,) = struct.unpack_from("<B", raw, 68)
    assert origin == (0.0, 0.0, 0.0) and extent == (1.0, 1.0, 1.0) and npts == (2, 2, 2) and rank == 0
    payload = np.frombuffer(raw[69:], dtype="<f8")
    res = payload[0::2]
    # x index changes fastest: node order (0,0,0), (1,0,0), (0,1,0), (1,1,0), ...
    assert np.array_equal(res, [0, 4, 2, 6, 1, 5, 3, 7])
    assert np.array_equal(payload[1::2], np.zeros(8))


def test_bad_magic_rejected(tmp_path):
    p = tmp_path / "junk.cgof"
    p.write_bytes(b"NOPE" + b"\x00" * 80)
    with pytest.raises(ValueError, match="container-bad-magic"):
        load_field(p)


def test_matrix_round_trip_with_sidecar(tmp_path):
    rng = np.random.default_rng(5)
    m = rng.standard_normal((6, 4)) + 1j * rng.standard_normal((6, 4))
    desc = {"faces": 6, "modes_per_face": 2, "kind": "sine"}
    p = tmp_path / "dn.cgof"
    save_matrix(p, m, desc)
    back, desc2 = load_matrix(p)
    assert np.array_equal(back, m)
    assert desc2 == desc
    with pytest.raises(ValueError, match="container-is-matrix"):
        load_field(p)


def test_matrix_without_sidecar_rejected(tmp_path):
    p = tmp_path / "dn.cgof"
    save_matrix(p, np.eye(3), {"kind": "sine"})
    (tmp_path / "dn.cgof.basis.json").unlink()
    with pytest.raises(ValueError, match="container-missing-sidecar"):
        load_matrix(p)
