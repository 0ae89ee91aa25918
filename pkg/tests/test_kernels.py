import os
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from lcpattern import _kernels_py, kernels
from oracles import dtw_loops, enumerate_hmm, random_hmm

seqs = st.integers(1, 9).flatmap(
    lambda n: arrays(np.float64, (n, 3), elements=st.floats(-50, 50, allow_nan=False)))


def test_dtw_matches_loop_oracle(backend, rng):
    for _ in range(50):
        a = rng.normal(size=(rng.integers(1, 12), 4))
        b = rng.normal(size=(rng.integers(1, 12), 4))
        assert backend.dtw_distance(a, b) == pytest.approx(dtw_loops(a, b), rel=1e-12, abs=1e-12)


def test_dtw_path_is_valid_and_costs_match(backend, rng):
    a, b = rng.normal(size=(9, 2)), rng.normal(size=(13, 2))
    path, cost = backend.dtw_path(a, b)
    assert tuple(path[0]) == (0, 0) and tuple(path[-1]) == (8, 12)
    steps = np.diff(path, axis=0)
    assert np.all((steps >= 0) & (steps <= 1)) and np.all(steps.sum(axis=1) >= 1)
    along = np.linalg.norm(a[path[:, 0]] - b[path[:, 1]], axis=1).sum()
    assert cost == pytest.approx(along, rel=1e-12)
    assert cost == pytest.approx(backend.dtw_distance(a, b), rel=1e-12)


def test_dtw_rejects_mismatched_dims(backend):
    with pytest.raises(ValueError):
        backend.dtw_distance(np.zeros((3, 2)), np.zeros((3, 3)))
    with pytest.raises(ValueError):
        backend.dtw_distance(np.zeros((0, 2)), np.zeros((3, 2)))


def test_forward_backward_matches_enumeration(backend, rng):
    for _ in range(20):
        N, T = int(rng.integers(1, 4)), int(rng.integers(1, 7))
        logB, A, pi = random_hmm(rng, N, T)
        gamma, xi, ll = backend.forward_backward(logB, A, pi)
        g_ref, ll_ref, _, _ = enumerate_hmm(logB, A, pi)
        np.testing.assert_allclose(gamma, g_ref, atol=1e-12)
        assert ll == pytest.approx(ll_ref, abs=1e-10)
        assert xi.sum() == pytest.approx(T - 1, abs=1e-9)


def test_viterbi_matches_enumeration(backend, rng):
    for _ in range(20):
        N, T = int(rng.integers(1, 4)), int(rng.integers(1, 7))
        logB, A, pi = random_hmm(rng, N, T)
        path, lp = backend.viterbi(logB, np.log(A), np.log(pi))
        _, _, _, best = enumerate_hmm(logB, A, pi)
        assert lp == pytest.approx(best, abs=1e-10)


def test_viterbi_ties_go_to_lower_state(backend):
    logB = np.zeros((4, 3))
    A = np.full((3, 3), 1 / 3)
    path, _ = backend.viterbi(logB, np.log(A), np.log(np.full(3, 1 / 3)))
    assert path.tolist() == [0, 0, 0, 0]


def test_zero_likelihood_reports_minus_inf(backend):
    logB = np.array([[0.0, -np.inf], [-np.inf, 0.0]])
    A = np.eye(2)
    _, _, ll = backend.forward_backward(logB, A, np.array([1.0, 0.0]))
    assert ll == -np.inf


@settings(max_examples=60, deadline=None)
@given(seqs, seqs)
def test_backends_agree_on_dtw(a, b):
    from conftest import _compiled

    if _compiled is None:
        pytest.skip("compiled kernels not built")
    assert _compiled.dtw_distance(a, b) == pytest.approx(_kernels_py.dtw_distance(a, b), rel=1e-12, abs=1e-12)
    p1, c1 = _compiled.dtw_path(a, b)
    p2, c2 = _kernels_py.dtw_path(a, b)
    np.testing.assert_array_equal(p1, p2)
    assert c1 == pytest.approx(c2, rel=1e-12, abs=1e-12)


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 4), st.integers(1, 30), st.integers(0, 2**32 - 1))
def test_backends_agree_on_hmm_recursions(N, T, seed):
    from conftest import _compiled

    if _compiled is None:
        pytest.skip("compiled kernels not built")
    logB, A, pi = random_hmm(np.random.default_rng(seed), N, T)
    for x, y in zip(_compiled.forward_backward(logB, A, pi), _kernels_py.forward_backward(logB, A, pi)):
        np.testing.assert_allclose(x, y, rtol=1e-12, atol=1e-14)
    (p1, l1), (p2, l2) = (m.viterbi(logB, np.log(A), np.log(pi)) for m in (_compiled, _kernels_py))
    np.testing.assert_array_equal(p1, p2)
    assert l1 == pytest.approx(l2, rel=1e-12)


def test_backend_selection_honours_environment():
    code = "from lcpattern import kernels; print(kernels.BACKEND)"
    env = dict(os.environ, LCPATTERN_PURE_PYTHON="1")
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "python"
    assert kernels.BACKEND in ("python", "cython")
