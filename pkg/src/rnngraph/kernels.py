"""Deterministic compute kernels and the Batch container.

Everything numeric that involves a reduction or a transcendental goes
through the jitted kernels in this module, never through BLAS or numpy's
vectorized math.  Reason: results here must be bit-identical across thread
counts, batch widths, chunked vs per-frame execution, and one-vs-many
stream runs.  BLAS reorders summation with blocking and threading; numpy's
SIMD transcendentals can differ between vector lanes and scalar tails.
The kernels below fix the summation order per output element (k ascending)
and parallelize only across independent output rows, so the schedule can
change but the arithmetic cannot.

Bit-reproducibility contract, relied on by the engine and asserted in
tests:

* `c[i, j]` is updated by a k-ascending sequence of `+= a*b` terms,
  regardless of thread count or whether neighbouring rows/columns exist;
* elementwise ops (add/mul/activations) are pure per-element functions;
* nothing here depends on array strides, only on element order.

Data layout: a Batch stores samples as rows, `(frames * streams, width)`,
frame-major (`row = t * streams + n`).  Whole chunks, single frames, and
delay-shifted windows are all contiguous row slices of history buffers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numba
import numpy as np
from numba import njit, prange

from .netdef import Activation

__all__ = [
    "Batch",
    "KernelError",
    "DTYPE",
    "gemm",
    "ewise",
    "activation",
    "activation_deriv",
    "assert_finite",
    "set_threads",
    "get_threads",
    "max_threads",
]

DTYPE = np.float64


class KernelError(ValueError):
    """Shape/argument misuse of a kernel."""


# ---------------------------------------------------------------------------
# threading


def max_threads() -> int:
    """Upper bound fixed at process start (NUMBA_NUM_THREADS)."""
    return numba.config.NUMBA_NUM_THREADS


def set_threads(n: int) -> int:
    """Clamp to [1, max_threads()] and apply; returns the effective count."""
    eff = max(1, min(int(n), max_threads()))
    numba.set_num_threads(eff)
    return eff


def get_threads() -> int:
    return numba.get_num_threads()


# ---------------------------------------------------------------------------
# jitted primitives

_JIT = dict(cache=True, fastmath=False)


@njit(**_JIT, parallel=True)
def mm_ab(a, b, c):  # c += a @ b
    m, kdim = a.shape
    n = b.shape[1]
    for i in prange(m):
        for k in range(kdim):
            aik = a[i, k]
            for j in range(n):
                c[i, j] += aik * b[k, j]


@njit(**_JIT, parallel=True)
def mm_atb(a, b, c):  # c += a.T @ b
    t, m = a.shape
    n = b.shape[1]
    for i in prange(m):
        for k in range(t):
            aki = a[k, i]
            for j in range(n):
                c[i, j] += aki * b[k, j]


@njit(**_JIT, parallel=True)
def rows_gather_add(wt, ids, out):  # out[r, :] += wt[ids[r], :]
    rows = ids.shape[0]
    n = wt.shape[1]
    for r in prange(rows):
        src = ids[r]
        if src < 0:  # before the stream started: one-hot of nothing
            continue
        for j in range(n):
            out[r, j] += wt[src, j]


@njit(**_JIT, parallel=True)
def grad_scatter_fold(eps, ids, n_streams, gtmp, g):
    """g[i, v] -= sum_t eps[row(t,n), i] for ids[row]==v, folded per stream.

    One-hot-input gradient.  Matches the dense path bit for bit: for each
    output element, a per-stream partial is built (t ascending) and the
    partials are folded in ascending stream order, exactly like the dense
    per-stream mm_atb fold.  The subtraction at fold time mirrors how the
    engine accumulates gradients.
    """
    frames = eps.shape[0] // n_streams
    width = eps.shape[1]
    for n in range(n_streams):
        for i in prange(width):
            for j in range(gtmp.shape[1]):
                gtmp[i, j] = 0.0
            for t in range(frames):
                r = t * n_streams + n
                v = ids[r]
                if v >= 0:  # negative means a pre-start frame, zero row
                    gtmp[i, v] += eps[r, i]
            for j in range(gtmp.shape[1]):
                g[i, j] -= gtmp[i, j]


@njit(**_JIT, parallel=True)
def sigmoid_(x):
    rows, cols = x.shape
    for i in prange(rows):
        for j in range(cols):
            x[i, j] = 1.0 / (1.0 + math.exp(-x[i, j]))


@njit(**_JIT, parallel=True)
def tanh_(x):
    rows, cols = x.shape
    for i in prange(rows):
        for j in range(cols):
            x[i, j] = math.tanh(x[i, j])


@njit(**_JIT, parallel=True)
def softmax_rows_(x):
    rows, cols = x.shape
    for i in prange(rows):
        m = x[i, 0]
        for j in range(1, cols):
            if x[i, j] > m:
                m = x[i, j]
        s = 0.0
        for j in range(cols):
            e = math.exp(x[i, j] - m)
            x[i, j] = e
            s += e
        for j in range(cols):
            x[i, j] /= s


@njit(**_JIT, parallel=True)
def dsigmoid_mul_(y, g):  # g *= y * (1 - y)
    rows, cols = y.shape
    for i in prange(rows):
        for j in range(cols):
            g[i, j] *= y[i, j] * (1.0 - y[i, j])


@njit(**_JIT, parallel=True)
def dtanh_mul_(y, g):  # g *= 1 - y^2
    rows, cols = y.shape
    for i in prange(rows):
        for j in range(cols):
            g[i, j] *= 1.0 - y[i, j] * y[i, j]


# ---------------------------------------------------------------------------
# Batch


@dataclass
class Batch:
    """A block of activations: `frames` frames for `streams` parallel
    streams, one sample per row, frame-major (`row = t * streams + n`)."""

    values: np.ndarray
    frames: int
    streams: int

    def __post_init__(self):
        expect = self.frames * self.streams
        if self.values.ndim != 2 or self.values.shape[0] != expect:
            raise KernelError(
                f"batch needs shape ({expect}, width), got {self.values.shape}"
            )

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @classmethod
    def zeros(cls, width: int, frames: int, streams: int) -> "Batch":
        return cls(np.zeros((frames * streams, width), dtype=DTYPE), frames, streams)

    def col(self, t: int, n: int) -> np.ndarray:
        """The sample vector of stream n at frame offset t (view)."""
        if not (0 <= t < self.frames and 0 <= n < self.streams):
            raise KernelError(f"sample ({t}, {n}) outside batch {self.frames}x{self.streams}")
        return self.values[t * self.streams + n]

    def frame(self, t: int) -> np.ndarray:
        """All streams at frame offset t, shape (streams, width) (view)."""
        if not (0 <= t < self.frames):
            raise KernelError(f"frame {t} outside batch of {self.frames}")
        return self.values[t * self.streams : (t + 1) * self.streams]

    def stream(self, n: int) -> np.ndarray:
        """One stream across all frames, shape (frames, width) (strided view)."""
        if not (0 <= n < self.streams):
            raise KernelError(f"stream {n} outside batch of {self.streams}")
        return self.values[n :: self.streams]

    def copy(self) -> "Batch":
        return Batch(self.values.copy(), self.frames, self.streams)


def _same_shape(batches: list[Batch]) -> None:
    first = batches[0]
    for b in batches[1:]:
        if (b.frames, b.streams, b.width) != (first.frames, first.streams, first.width):
            raise KernelError(
                f"batch shapes differ: {(first.frames, first.streams, first.width)}"
                f" vs {(b.frames, b.streams, b.width)}"
            )


# ---------------------------------------------------------------------------
# public ops


def gemm(a: np.ndarray, b: np.ndarray, out: np.ndarray | None = None, *, transpose_a: bool = False) -> np.ndarray:
    """out += op(a) @ b with op = transpose if transpose_a.  Deterministic:
    per output element the k-summation is ascending, independent of thread
    count.  Allocates a zero `out` when not given."""
    a = np.ascontiguousarray(a, dtype=DTYPE) if a.dtype != DTYPE else a
    b = np.ascontiguousarray(b, dtype=DTYPE) if b.dtype != DTYPE else b
    rows = a.shape[1] if transpose_a else a.shape[0]
    inner = a.shape[0] if transpose_a else a.shape[1]
    if inner != b.shape[0]:
        raise KernelError(f"gemm inner dims differ: {inner} vs {b.shape[0]}")
    if out is None:
        out = np.zeros((rows, b.shape[1]), dtype=DTYPE)
    elif out.shape != (rows, b.shape[1]):
        raise KernelError(f"gemm out shape {out.shape} != {(rows, b.shape[1])}")
    if transpose_a:
        mm_atb(a, b, out)
    else:
        mm_ab(a, b, out)
    return out


def ewise(op: str, batches: list[Batch]) -> Batch:
    """Fold batches elementwise with 'add' or 'mul', left to right.

    Pure per-element arithmetic, so plain numpy is already exact and
    order-stable here."""
    if not batches:
        raise KernelError("ewise needs at least one batch")
    _same_shape(batches)
    acc = batches[0].values.copy()
    for b in batches[1:]:
        if op == "add":
            acc += b.values
        elif op == "mul":
            acc *= b.values
        else:
            raise KernelError(f"unknown ewise op {op!r}")
    return Batch(acc, batches[0].frames, batches[0].streams)


def act_inplace(kind: Activation, x: np.ndarray) -> None:
    """Apply an activation over rows of x, in place (identity is a no-op)."""
    if kind is Activation.IDENTITY:
        return
    if kind is Activation.SIGMOID:
        sigmoid_(x)
    elif kind is Activation.TANH:
        tanh_(x)
    elif kind is Activation.SOFTMAX:
        softmax_rows_(x)
    else:  # pragma: no cover - closed enum
        raise KernelError(f"unknown activation {kind}")


def act_deriv_mul_inplace(kind: Activation, y: np.ndarray, g: np.ndarray) -> None:
    """g *= f'(s) expressed through the stored activation output y."""
    if kind is Activation.IDENTITY:
        return
    if kind is Activation.SIGMOID:
        dsigmoid_mul_(y, g)
    elif kind is Activation.TANH:
        dtanh_mul_(y, g)
    else:
        raise KernelError(
            "standalone softmax derivative is not defined; softmax is only"
            " supported fused with cross-entropy error injection at the output"
        )


def activation(kind: Activation, batch: Batch) -> Batch:
    """New batch with f applied per sample (softmax normalizes each row)."""
    out = batch.copy()
    act_inplace(kind, out.values)
    return out


def activation_deriv(kind: Activation, y: Batch) -> Batch:
    """f'(s) evaluated from the activation output y (new batch).

    sigmoid: y(1-y); tanh: 1-y^2; identity: ones.  Softmax raises: its
    Jacobian is not elementwise and is only ever used fused with
    cross-entropy, where it cancels into (d - y).
    """
    out = Batch(np.ones_like(y.values), y.frames, y.streams)
    act_deriv_mul_inplace(kind, y.values, out.values)
    return out


def assert_finite(x: np.ndarray, what: str) -> None:
    """Debug guard: raise FloatingPointError naming the site on NaN/inf."""
    if not np.isfinite(x).all():
        bad = int(np.count_nonzero(~np.isfinite(x)))
        raise FloatingPointError(f"{bad} non-finite values in {what}")
