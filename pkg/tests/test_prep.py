import struct

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from lcpattern.errors import SchemaError, ValidationError
from lcpattern.hmm import Primitive
from lcpattern.prep import (
    flatten, normalize, prepare, read_matrix_bin, read_matrix_csv, resample, unflatten,
    write_matrix_bin, write_matrix_csv,
)

finite = st.floats(-1e3, 1e3, allow_nan=False)


def test_affine_resample_is_exact():
    t = np.arange(23, dtype=float)
    P = np.column_stack([2.0 * t + 1, -0.5 * t, np.full(23, 3.0), t / 7, 4 - t, 0.25 * t])
    out = resample(P, 75)
    u = np.linspace(0, 22, 75)
    expected = np.column_stack([2.0 * u + 1, -0.5 * u, np.full(75, 3.0), u / 7, 4 - u, 0.25 * u])
    np.testing.assert_allclose(out, expected, rtol=0, atol=1e-12)


def test_resample_identity_at_same_length(rng):
    P = rng.normal(size=(40, 6))
    np.testing.assert_allclose(resample(P, 40), P, rtol=0, atol=1e-12)


def test_resample_sine_round_trip():
    t = np.linspace(0, 2 * np.pi, 75)
    P = np.column_stack([np.sin(t + k) for k in range(6)])
    back = resample(resample(P, 150), 75)
    assert np.abs(back - P).max() < 2e-3


def test_resample_accepts_primitive_and_rejects_short(rng):
    pts = rng.normal(size=(12, 6))
    prim = Primitive("e", 0, 0, 11, pts)
    np.testing.assert_array_equal(resample(prim, 30), resample(pts, 30))
    with pytest.raises(ValidationError):
        resample(pts[:1], 75)
    with pytest.raises(ValidationError):
        resample(pts, 1)


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(2, 60), st.just(6)), elements=finite),
       st.integers(2, 120))
def test_resample_keeps_endpoints_and_range(P, length):
    out = resample(P, length)
    assert out.shape == (length, 6)
    np.testing.assert_array_equal(out[0], P[0])
    np.testing.assert_array_equal(out[-1], P[-1])
    assert np.all(out >= P.min(axis=0) - 1e-9) and np.all(out <= P.max(axis=0) + 1e-9)


@settings(max_examples=30, deadline=None)
@given(st.lists(finite, min_size=2, max_size=40))
def test_resample_preserves_monotonicity(values):
    v = np.sort(np.asarray(values))
    assert np.all(np.diff(resample(v, 75)[:, 0]) >= 0)


def test_normalize_example():
    np.testing.assert_allclose(normalize(np.array([[2.0], [4.0], [6.0]]))[:, 0], [-1.0, 0.0, 1.0],
                               atol=1e-12)


def test_constant_dimension_is_zero(rng):
    S = rng.normal(size=(75, 6))
    S[:, 2] = 7.5
    out = normalize(S)
    assert np.all(out[:, 2] == 0.0)


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(2, 80), st.just(6)), elements=finite))
def test_normalized_range_and_extrema(S):
    out = normalize(S)
    assert np.all(out >= -1.0) and np.all(out <= 1.0)
    for d in range(6):
        if S[:, d].max() > S[:, d].min():
            assert abs(out[:, d].min() + 1.0) <= 1e-12 and abs(out[:, d].max() - 1.0) <= 1e-12


def test_flatten_layout():
    s = np.arange(12, dtype=float).reshape(2, 6)
    assert flatten(s).tolist() == list(range(12))
    np.testing.assert_array_equal(unflatten(flatten(s)), s)
    with pytest.raises(ValidationError):
        unflatten(np.zeros(7))


@settings(max_examples=30, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(1, 30), st.just(6)), elements=finite))
def test_flatten_preserves_norm(S):
    assert np.linalg.norm(flatten(S)) == pytest.approx(np.linalg.norm(S), rel=1e-12, abs=1e-12)


def test_prepare_shape(rng):
    prims = [rng.normal(size=(n, 6)) for n in (10, 33, 90)]
    out = prepare(prims, 75)
    assert out.shape == (3, 75, 6)
    assert np.all(np.abs(out) <= 1.0)
    assert prepare([], 75).shape == (0, 75, 6)


@pytest.mark.parametrize("writer, reader", [(write_matrix_csv, read_matrix_csv),
                                            (write_matrix_bin, read_matrix_bin)])
def test_matrix_round_trip(tmp_path, rng, writer, reader):
    X = rng.normal(size=(5, 75, 6))
    ids = np.array([3, 1, 4, 1, 5]) * 1000
    got_ids, got = reader(writer(ids, X, tmp_path / "m"))
    assert got_ids.tolist() == ids.tolist()
    assert got.tobytes() == X.tobytes()
    e_ids, empty = reader(writer([], np.empty((0, 75, 6)), tmp_path / "e"))
    assert len(e_ids) == 0 and empty.shape == (0, 75, 6)


def test_binary_layout(tmp_path):
    X = np.arange(12, dtype=float).reshape(1, 2, 6)
    raw = write_matrix_bin([7], X, tmp_path / "m.bin").read_bytes()
    assert struct.unpack_from("<4sIII", raw) == (b"LCPM", 1, 1, 12)
    assert struct.unpack_from("<q", raw, 16) == (7,)
    assert struct.unpack_from("<12d", raw, 24) == tuple(range(12))
    assert len(raw) == 16 + 8 + 12 * 8
    (tmp_path / "bad.bin").write_bytes(b"XXXX" + raw[4:])
    with pytest.raises(SchemaError):
        read_matrix_bin(tmp_path / "bad.bin")


def test_csv_requires_id_column(tmp_path):
    (tmp_path / "m.csv").write_text("v0,v1\n1,2\n")
    with pytest.raises(SchemaError):
        read_matrix_csv(tmp_path / "m.csv")
