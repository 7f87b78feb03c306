import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from dctse.dct import (
    build_dct_plan,
    conjugate_symmetric_part,
    dct_forward,
    dct_inverse,
    even_symmetric_extend,
    verify_dft_dct_relation,
)
from dctse.errors import InvalidArgumentError


def brute_dct(x):
    """Direct double sum over the DCT-II definition."""
    N = len(x)
    out = []
    for k in range(N):
        b = 1 / math.sqrt(2) if k == 0 else 1.0
        s = sum(x[n] * math.cos(math.pi * k * (2 * n + 1) / (2 * N)) for n in range(N))
        out.append(math.sqrt(2 / N) * b * s)
    return np.array(out)


def test_plan_n2_by_hand():
    r = 1 / math.sqrt(2)
    np.testing.assert_allclose(build_dct_plan(2).basis, [[r, r], [r, -r]], atol=1e-15)


def test_plan_n1():
    np.testing.assert_allclose(build_dct_plan(1).basis, [[1.0]], atol=1e-15)


@pytest.mark.parametrize("N", [1, 2, 3, 8, 64, 1024])
def test_orthogonality(N):
    W = build_dct_plan(N).basis
    eye = np.eye(N)
    assert np.max(np.abs(W @ W.T - eye)) <= 1e-12
    assert np.max(np.abs(W.T @ W - eye)) <= 1e-12
    np.testing.assert_allclose(np.linalg.norm(W, axis=1), 1.0, atol=1e-12)


@pytest.mark.parametrize("bad", [0, -3])
def test_plan_rejects_nonpositive(bad):
    with pytest.raises(InvalidArgumentError):
        build_dct_plan(bad)


def test_plan_is_read_only():
    plan = build_dct_plan(4)
    with pytest.raises(ValueError):
        plan.basis[0, 0] = 2.0


@pytest.mark.parametrize("N", [1, 5, 8, 16])
def test_forward_matches_brute_force(N):
    x = np.random.default_rng(N).standard_normal(N)
    plan = build_dct_plan(N)
    np.testing.assert_allclose(dct_forward(plan, x), brute_dct(x), atol=1e-12)


def test_forward_all_ones():
    plan = build_dct_plan(8)
    expected = np.zeros(8)
    expected[0] = math.sqrt(8)
    np.testing.assert_allclose(brute_dct(np.ones(8)), expected, atol=1e-12)
    np.testing.assert_allclose(dct_forward(plan, np.ones(8)), expected, atol=1e-12)


def test_forward_impulse_selects_column():
    plan = build_dct_plan(4)
    x = np.array([1.0, 0, 0, 0])
    np.testing.assert_array_equal(dct_forward(plan, x), plan.basis[:, 0])


def test_inverse_examples():
    plan = build_dct_plan(8)
    X = np.zeros(8)
    X[0] = math.sqrt(8)
    np.testing.assert_allclose(dct_inverse(plan, X), np.ones(8), atol=1e-12)
    np.testing.assert_array_equal(dct_inverse(plan, np.zeros(8)), np.zeros(8))
    for k in range(8):
        np.testing.assert_allclose(dct_inverse(plan, np.eye(8)[k]), plan.basis[k], atol=0)


def test_length_mismatch():
    plan = build_dct_plan(8)
    with pytest.raises(InvalidArgumentError):
        dct_forward(plan, np.ones(7))
    with pytest.raises(InvalidArgumentError):
        dct_inverse(plan, np.ones(9))


def test_roundtrip_1024():
    plan = build_dct_plan(1024)
    x = np.random.default_rng(0).standard_normal(1024)
    assert np.max(np.abs(dct_inverse(plan, dct_forward(plan, x)) - x)) <= 1e-12


@pytest.mark.parametrize("N", [2, 3, 8, 64, 1024])
def test_perfect_inversion_many(N):
    rng = np.random.default_rng(N)
    plan = build_dct_plan(N)
    x = rng.standard_normal((N, 1000))
    back = dct_inverse(plan, dct_forward(plan, x))
    scale = np.max(np.abs(x), axis=0)
    assert np.all(np.max(np.abs(back - x), axis=0) <= 1e-10 * scale)


def test_frames_along_axis0_match_columnwise():
    plan = build_dct_plan(16)
    X = np.random.default_rng(1).standard_normal((16, 5))
    cols = np.stack([dct_forward(plan, X[:, t]) for t in range(5)], axis=1)
    np.testing.assert_allclose(dct_forward(plan, X), cols, atol=1e-14)


@pytest.mark.parametrize("N", [1, 2, 7, 64, 1024])
def test_fast_path_matches_matrix(N):
    plan = build_dct_plan(N)
    x = np.random.default_rng(3).standard_normal((N, 10))
    diff = dct_forward(plan, x, method="fft") - dct_forward(plan, x, method="matrix")
    assert np.max(np.abs(diff)) <= 1e-10


finite = st.floats(-1e3, 1e3, allow_nan=False)


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, st.integers(1, 96), elements=finite))
def test_parseval(x):
    plan = build_dct_plan(x.size)
    norm = np.linalg.norm(x)
    assert abs(np.linalg.norm(dct_forward(plan, x)) - norm) <= 1e-10 * max(norm, 1e-300)


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 80), st.floats(-10, 10), st.floats(-10, 10), st.integers(0, 2**31))
def test_linearity(N, a, b, seed):
    rng = np.random.default_rng(seed)
    x, y = rng.standard_normal((2, N))
    plan = build_dct_plan(N)
    lhs = dct_forward(plan, a * x + b * y)
    rhs = a * dct_forward(plan, x) + b * dct_forward(plan, y)
    np.testing.assert_allclose(lhs, rhs, atol=1e-10)


def test_even_symmetric_extend_by_index():
    # x_es(n) = x((n))_6 + x((-n-1))_6 with x zero-padded to 6 points.
    x = np.array([2.0, 3.0, 5.0])
    padded = np.concatenate([x, np.zeros(3)])
    direct = np.array([padded[n % 6] + padded[(-n - 1) % 6] for n in range(6)])
    np.testing.assert_array_equal(direct, [2, 3, 5, 5, 3, 2])
    np.testing.assert_array_equal(even_symmetric_extend(x), direct)
    np.testing.assert_array_equal(even_symmetric_extend([7.0]), [7.0, 7.0])
    with pytest.raises(InvalidArgumentError):
        even_symmetric_extend([])


@settings(max_examples=30, deadline=None)
@given(arrays(np.float64, st.integers(1, 50), elements=finite))
def test_even_symmetric_mirror(x):
    e = even_symmetric_extend(x)
    N = x.size
    assert all(e[n] == e[2 * N - 1 - n] for n in range(N))


def test_dft_relation_examples():
    assert verify_dft_dct_relation(np.ones(4), tol=1e-12) <= 1e-12
    x = np.random.default_rng(5).standard_normal(64)
    assert verify_dft_dct_relation(x, tol=1e-9) <= 1e-9
    assert verify_dft_dct_relation(np.zeros(8)) == 0.0


def test_dft_relation_tolerance_trips():
    with pytest.raises(AssertionError):
        verify_dft_dct_relation(np.random.default_rng(0).standard_normal(64), tol=1e-30)


def test_conjugate_symmetric_part():
    even = np.array([4.0, 1.0, 2.0, 1.0])
    np.testing.assert_array_equal(conjugate_symmetric_part(even), even)
    np.testing.assert_array_equal(conjugate_symmetric_part([0.0, 1, 0, -1]), np.zeros(4))
    with pytest.raises(InvalidArgumentError):
        conjugate_symmetric_part([])


def test_conjugate_symmetric_part_has_real_spectrum():
    x = np.random.default_rng(2).standard_normal(16)
    n = np.arange(16)
    dft = np.exp(-2j * np.pi * np.outer(n, n) / 16)
    Xe = dft @ conjugate_symmetric_part(x)
    np.testing.assert_allclose(Xe.real, (dft @ x).real, atol=1e-12)
    assert np.max(np.abs(Xe.imag)) <= 1e-12


def test_phase_sign_is_positive_under_forward_dft_kernel():
    # The opposite rotation leaves a residual of order |X_c|, so the sign is pinned.
    x = np.random.default_rng(9).standard_normal(8)
    N = 8
    n = np.arange(2 * N)
    X_es = np.array([np.sum(even_symmetric_extend(x) * np.exp(-2j * np.pi * k * n / (2 * N))) for k in range(N)])
    X_c = brute_dct(x)
    b = np.where(np.arange(N) == 0, 1 / math.sqrt(2), 1.0)
    for sign, small in [(+1, True), (-1, False)]:
        pred = math.sqrt(2 * N) / b * np.exp(sign * 1j * np.pi * np.arange(N) / (2 * N)) * X_c
        assert (np.max(np.abs(X_es - pred)) < 1e-12) == small


def test_fast_path_returns_contiguous_array():
    # a strided view out of the complex FFT buffer makes the later matmul fall off BLAS
    plan = build_dct_plan(1024)
    X = dct_forward(plan, np.random.default_rng(0).standard_normal((1024, 8)), method="fft")
    assert X.flags.c_contiguous
