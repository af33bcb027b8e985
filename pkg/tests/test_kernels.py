import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rnngraph.kernels import (
    Batch,
    KernelError,
    activation,
    activation_deriv,
    assert_finite,
    ewise,
    gemm,
    get_threads,
    max_threads,
    set_threads,
)
from rnngraph.netdef import Activation

from oracles import naive_gemm_accum

finite = st.floats(min_value=-30, max_value=30, allow_nan=False)


# ---------------------------------------------------------------------------
# gemm


def test_gemm_identity():
    a = np.eye(3)
    b = np.arange(12, dtype=np.float64).reshape(3, 4)
    assert np.array_equal(gemm(a, b), b)


def test_gemm_known_2x2():
    a = np.array([[1.0, 2.0], [3.0, 4.0]])
    b = np.array([[5.0, 6.0], [7.0, 8.0]])
    assert np.array_equal(gemm(a, b), np.array([[19.0, 22.0], [43.0, 50.0]]))


def test_gemm_matches_naive_accumulation_exactly():
    rng = np.random.default_rng(3)
    a = rng.standard_normal((5, 4))
    b = rng.standard_normal((4, 3))
    c0 = rng.standard_normal((5, 3))
    got = gemm(a, b, out=c0.copy())
    assert np.array_equal(got, naive_gemm_accum(a, b, c0))


def test_gemm_transpose_a_matches_naive_exactly():
    rng = np.random.default_rng(4)
    a = rng.standard_normal((6, 4))
    b = rng.standard_normal((6, 5))
    c0 = rng.standard_normal((4, 5))
    got = gemm(a, b, out=c0.copy(), transpose_a=True)
    assert np.array_equal(got, naive_gemm_accum(a, b, c0, transpose_a=True))


def test_gemm_accumulates_into_out():
    a = np.ones((2, 2))
    b = np.ones((2, 2))
    out = np.full((2, 2), 10.0)
    assert np.array_equal(gemm(a, b, out=out), np.full((2, 2), 12.0))


def test_gemm_rejects_bad_shapes():
    with pytest.raises(KernelError, match="inner dims"):
        gemm(np.ones((2, 3)), np.ones((4, 2)))
    with pytest.raises(KernelError, match="out shape"):
        gemm(np.ones((2, 3)), np.ones((3, 2)), out=np.ones((3, 3)))


def test_gemm_rows_independent_of_batch_width():
    # computing a row alone must give the same bits as inside a big batch
    rng = np.random.default_rng(11)
    a = rng.standard_normal((8, 6))
    b = rng.standard_normal((6, 5))
    whole = gemm(a, b)
    for r in range(8):
        assert np.array_equal(gemm(a[r : r + 1], b), whole[r : r + 1])


def test_gemm_works_on_strided_views():
    rng = np.random.default_rng(12)
    a = rng.standard_normal((10, 4))
    b = rng.standard_normal((10, 3))
    got = gemm(a[1::2], b[1::2], transpose_a=True)
    assert np.array_equal(got, naive_gemm_accum(a[1::2], b[1::2], np.zeros((4, 3)), transpose_a=True))


# ---------------------------------------------------------------------------
# ewise


def batch_of(arr, frames, streams):
    return Batch(np.asarray(arr, dtype=np.float64), frames, streams)


def test_ewise_add_and_mul():
    x = batch_of([[1.0, 2.0], [3.0, 4.0]], 2, 1)
    y = batch_of([[10.0, 20.0], [30.0, 40.0]], 2, 1)
    assert np.array_equal(ewise("add", [x, y]).values, [[11.0, 22.0], [33.0, 44.0]])
    assert np.array_equal(ewise("mul", [x, y]).values, [[10.0, 40.0], [90.0, 160.0]])


def test_ewise_three_way_fold_matches_loop():
    rng = np.random.default_rng(0)
    parts = [batch_of(rng.standard_normal((6, 3)), 3, 2) for _ in range(3)]
    got = ewise("mul", parts)
    want = parts[0].values.copy()
    for p in parts[1:]:
        want = want * p.values
    assert np.array_equal(got.values, want)


def test_ewise_errors():
    x = batch_of(np.ones((2, 2)), 2, 1)
    y = batch_of(np.ones((4, 2)), 2, 2)
    with pytest.raises(KernelError, match="shapes differ"):
        ewise("add", [x, y])
    with pytest.raises(KernelError, match="unknown ewise op"):
        ewise("sub", [x, x])
    with pytest.raises(KernelError, match="at least one"):
        ewise("add", [])


# ---------------------------------------------------------------------------
# activations


def test_activation_fixed_points():
    x = batch_of(np.zeros((1, 3)), 1, 1)
    assert np.allclose(activation(Activation.SIGMOID, x).values, 0.5)
    assert np.array_equal(activation(Activation.TANH, x).values, np.zeros((1, 3)))
    assert np.allclose(activation(Activation.SOFTMAX, x).values, 1.0 / 3.0)
    assert np.array_equal(activation(Activation.IDENTITY, x).values, x.values)


def test_activation_deriv_values():
    y = activation(Activation.SIGMOID, batch_of(np.zeros((1, 1)), 1, 1))
    assert np.allclose(activation_deriv(Activation.SIGMOID, y).values, 0.25)
    y = activation(Activation.TANH, batch_of(np.zeros((1, 1)), 1, 1))
    assert np.allclose(activation_deriv(Activation.TANH, y).values, 1.0)
    ones = activation_deriv(Activation.IDENTITY, batch_of([[3.0]], 1, 1))
    assert np.array_equal(ones.values, [[1.0]])


def test_standalone_softmax_derivative_is_an_error():
    y = activation(Activation.SOFTMAX, batch_of([[1.0, 2.0]], 1, 1))
    with pytest.raises(KernelError, match="softmax"):
        activation_deriv(Activation.SOFTMAX, y)


@pytest.mark.parametrize("kind", [Activation.SIGMOID, Activation.TANH])
def test_deriv_matches_central_difference(kind):
    rng = np.random.default_rng(8)
    x = rng.uniform(-4, 4, size=(1, 1000))
    step = 1e-6
    up = activation(kind, batch_of(x + step, 1, 1)).values
    down = activation(kind, batch_of(x - step, 1, 1)).values
    fd = (up - down) / (2 * step)
    y = activation(kind, batch_of(x, 1, 1))
    ana = activation_deriv(kind, y).values
    rel = np.abs(ana - fd) / np.maximum(np.abs(ana), 1e-8)
    # 1e-6 is the fd noise floor where the activation saturates (the
    # difference of two values near 1.0 loses ~10 digits to cancellation)
    assert rel.max() < 1e-6


@settings(max_examples=80, deadline=None)
@given(st.lists(finite, min_size=2, max_size=6))
def test_softmax_rows_normalize_and_shift_invariant(row):
    x = np.array([row])
    y = activation(Activation.SOFTMAX, batch_of(x, 1, 1)).values
    assert abs(y.sum() - 1.0) < 1e-12
    assert (y > 0).all()
    shifted = activation(Activation.SOFTMAX, batch_of(x + 17.5, 1, 1)).values
    assert np.abs(y - shifted).max() < 1e-12


@settings(max_examples=80, deadline=None)
@given(finite, finite)
def test_sigmoid_range_and_order(a, b):
    y = activation(Activation.SIGMOID, batch_of([[a, b]], 1, 1)).values[0]
    assert 0.0 <= y[0] <= 1.0
    if a < b:
        assert y[0] <= y[1]


def test_softmax_stable_at_large_magnitudes():
    x = batch_of([[1000.0, 1000.0, -1000.0]], 1, 1)
    y = activation(Activation.SOFTMAX, x).values[0]
    assert np.isfinite(y).all()
    assert abs(y[0] - 0.5) < 1e-12 and y[2] < 1e-300


def test_elementwise_position_independence():
    # the same input value must map to the same output bits no matter
    # where it sits in the array (no vector-lane effects)
    rng = np.random.default_rng(13)
    x = rng.uniform(-3, 3, size=(4, 7))
    whole = activation(Activation.TANH, batch_of(x.copy(), 4, 1)).values
    for i in range(4):
        alone = activation(Activation.TANH, batch_of(x[i : i + 1].copy(), 1, 1)).values
        assert np.array_equal(alone[0], whole[i])
    single = activation(Activation.TANH, batch_of(x[2:3, 3:4].copy(), 1, 1)).values
    assert single[0, 0] == whole[2, 3]


# ---------------------------------------------------------------------------
# Batch container


def test_batch_addressing():
    values = np.arange(24, dtype=np.float64).reshape(6, 4)
    b = Batch(values, frames=3, streams=2)
    assert b.width == 4
    assert np.array_equal(b.col(1, 0), values[2])
    assert np.array_equal(b.col(2, 1), values[5])
    assert np.array_equal(b.frame(1), values[2:4])
    assert np.array_equal(b.stream(1), values[1::2])


def test_batch_bounds_and_shape_checks():
    b = Batch.zeros(4, 3, 2)
    with pytest.raises(KernelError):
        b.col(3, 0)
    with pytest.raises(KernelError):
        b.frame(-1)
    with pytest.raises(KernelError):
        b.stream(2)
    with pytest.raises(KernelError, match="batch needs shape"):
        Batch(np.zeros((5, 4)), frames=3, streams=2)


def test_batch_zeros_and_copy_are_independent():
    b = Batch.zeros(2, 2, 2)
    c = b.copy()
    c.values[0, 0] = 5.0
    assert b.values[0, 0] == 0.0


# ---------------------------------------------------------------------------
# misc


def test_assert_finite():
    assert_finite(np.ones(3), "ok")
    with pytest.raises(FloatingPointError, match="layer 'h'"):
        assert_finite(np.array([1.0, np.nan]), "layer 'h'")


def test_thread_controls_clamp():
    current = get_threads()
    try:
        assert set_threads(10**6) == max_threads()
        assert set_threads(0) == 1
        assert 1 <= get_threads() <= max_threads()
    finally:
        set_threads(current)


def test_gemm_results_stable_across_thread_setting():
    rng = np.random.default_rng(17)
    a = rng.standard_normal((16, 8))
    b = rng.standard_normal((8, 8))
    current = get_threads()
    try:
        set_threads(1)
        one = gemm(a, b)
        set_threads(max_threads())
        many = gemm(a, b)
    finally:
        set_threads(current)
    assert np.array_equal(one, many)
