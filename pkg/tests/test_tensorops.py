import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from oracles import conv_forward_loop, conv_transpose_loop, frobenius_loop
from subgoal_discovery.tensorops import (
    band_smooth,
    conv_forward,
    conv_transpose,
    frobenius_sq,
    off_diagonal_ones,
    shift_columns,
    smoothing_matrix,
)


def rel_err(a, b):
    return np.max(np.abs(a - b)) / max(np.max(np.abs(b)), 1e-300)


@st.composite
def factor_pair(draw, max_dim=8):
    D = draw(st.integers(1, max_dim))
    J = draw(st.integers(1, max_dim))
    L = draw(st.integers(1, max_dim))
    T = draw(st.integers(1, max_dim))
    vals = st.floats(0, 10, allow_nan=False, allow_infinity=False)
    O = draw(arrays(np.float64, (D, J, L), elements=vals))
    H = draw(arrays(np.float64, (J, T), elements=vals))
    return O, H


# conv_forward


def test_conv_forward_hand_example():
    O = np.array([1.0, 2.0]).reshape(1, 1, 2)
    np.testing.assert_array_equal(conv_forward(O, [[1, 0, 1, 0]]), [[1, 2, 1, 2]])


def test_conv_forward_L1_is_matrix_product(rng):
    O = rng.random((4, 3, 1))
    H = rng.random((3, 9))
    np.testing.assert_allclose(conv_forward(O, H), O[:, :, 0] @ H, rtol=1e-14)


def test_conv_forward_zero_H():
    assert not conv_forward(np.ones((2, 2, 3)), np.zeros((2, 5))).any()


def test_conv_forward_rejects_J_mismatch():
    with pytest.raises(ValueError):
        conv_forward(np.ones((2, 3, 2)), np.ones((2, 5)))


def test_conv_forward_matches_loop_on_random_instances(rng):
    for _ in range(100):
        D, J, L, T = rng.integers(1, 9, size=4)
        O, H = rng.random((D, J, L)), rng.random((J, T))
        assert rel_err(conv_forward(O, H), conv_forward_loop(O, H)) <= 1e-12


@settings(max_examples=60, deadline=None)
@given(factor_pair())
def test_conv_forward_loop_property(pair):
    O, H = pair
    ref = conv_forward_loop(O, H)
    np.testing.assert_allclose(conv_forward(O, H), ref, rtol=1e-12, atol=1e-12 * max(ref.max(initial=0), 1))


# conv_transpose


def test_conv_transpose_hand_example():
    O = np.array([1.0, 2.0]).reshape(1, 1, 2)
    np.testing.assert_array_equal(conv_transpose(O, [[1, 2, 1, 2]]), [[5, 4, 5, 2]])


def test_conv_transpose_zero_O():
    assert not conv_transpose(np.zeros((2, 3, 2)), np.ones((2, 6))).any()


def test_conv_transpose_L1(rng):
    O = rng.random((4, 3, 1))
    X = rng.random((4, 7))
    np.testing.assert_allclose(conv_transpose(O, X), O[:, :, 0].T @ X, rtol=1e-14)


def test_conv_transpose_rejects_D_mismatch():
    with pytest.raises(ValueError):
        conv_transpose(np.ones((2, 3, 2)), np.ones((3, 5)))


def test_conv_transpose_matches_loop_on_random_instances(rng):
    for _ in range(100):
        D, J, L, T = rng.integers(1, 9, size=4)
        O, X = rng.random((D, J, L)), rng.random((D, T))
        assert rel_err(conv_transpose(O, X), conv_transpose_loop(O, X)) <= 1e-12


@settings(max_examples=60, deadline=None)
@given(factor_pair(), st.integers(0, 2**32 - 1))
def test_adjointness(pair, seed):
    O, B = pair
    A = np.random.default_rng(seed).normal(size=(O.shape[0], B.shape[1]))
    lhs = np.sum(conv_forward(O, B) * A)
    rhs = np.sum(B * conv_transpose(O, A))
    scale = np.sum(np.abs(conv_forward(O, B)) * np.abs(A)) + 1e-300
    assert abs(lhs - rhs) <= 1e-10 * scale


# shift_columns


def test_shift_examples():
    M = np.array([[1.0, 2.0, 3.0]])
    np.testing.assert_array_equal(shift_columns(M, 0), M)
    np.testing.assert_array_equal(shift_columns(M, 1), [[0, 1, 2]])
    np.testing.assert_array_equal(shift_columns(M, -1), [[2, 3, 0]])


def test_shift_rejects_full_width():
    with pytest.raises(ValueError):
        shift_columns(np.ones((2, 3)), 3)


@settings(max_examples=60, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(1, 5), st.integers(2, 10)),
              elements=st.floats(-5, 5, allow_nan=False)), st.data())
def test_shift_round_trip(M, data):
    T = M.shape[1]
    lag = data.draw(st.integers(-(T - 1), T - 1))
    back = shift_columns(shift_columns(M, lag), -lag)
    keep = slice(0, T - lag) if lag >= 0 else slice(-lag, T)
    np.testing.assert_array_equal(back[:, keep], M[:, keep])


# frobenius_sq


def test_frobenius_examples(rng):
    A = rng.random((3, 4))
    assert frobenius_sq(A, A) == 0
    assert frobenius_sq([[1, 2]], [[0, 0]]) == 5
    B = rng.random((3, 4))
    assert frobenius_sq(A, B) == pytest.approx(frobenius_loop(A, B), rel=1e-12)
    with pytest.raises(ValueError):
        frobenius_sq(A, B.T)


# smoothing_matrix and band_smooth


def test_smoothing_matrix_examples():
    np.testing.assert_array_equal(smoothing_matrix(4, 1), np.eye(4))
    np.testing.assert_array_equal(smoothing_matrix(3, 2), [[1, 1, 0], [1, 1, 1], [0, 1, 1]])
    np.testing.assert_array_equal(smoothing_matrix(3, 5), np.ones((3, 3)))


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 20), st.integers(1, 25))
def test_smoothing_matrix_symmetric_binary(T, L):
    S = smoothing_matrix(T, L)
    np.testing.assert_array_equal(S, S.T)
    assert set(np.unique(S)) <= {0.0, 1.0}


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 15), st.integers(1, 20), st.integers(1, 4), st.integers(0, 2**32 - 1))
def test_band_smooth_equals_explicit_product(T, L, rows, seed):
    M = np.random.default_rng(seed).random((rows, T))
    np.testing.assert_allclose(band_smooth(M, L), M @ smoothing_matrix(T, L), rtol=1e-12, atol=1e-12)


def test_off_diagonal_ones():
    np.testing.assert_array_equal(off_diagonal_ones(1), [[0]])
    np.testing.assert_array_equal(off_diagonal_ones(2), [[0, 1], [1, 0]])
