"""Finite-difference verification of the analytic gradients.

The probe runs the whole test sequence as a single full window
(h = h' = L, so truncation clamps to the stream start and the analytic
gradient is the exact full-unroll gradient), then compares it against
central differences of the total window loss, one weight element at a
time.  Losses are accumulated with fsum so the difference of two
nearly-equal sums is not dominated by accumulation noise.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .condense import condense
from .engine import (
    BpttWindow,
    Criterion,
    GradStore,
    StreamState,
    Weights,
    backward_window,
    forward_chunk,
    inject_output_error,
    loss_value,
)
from .kernels import Batch
from .netdef import NetworkDef

__all__ = ["ConnCheck", "GradReport", "analytic_grad", "numeric_grad", "compare", "check_gradients"]

DEFAULT_STEP = 1e-5
DEFAULT_THRESHOLD = 1e-4


def _run_loss(net, cg, weights, inputs, targets, criterion, n_streams, frames) -> float:
    state = StreamState(net, n_streams, h=frames)
    out = forward_chunk(net, cg, weights, state, inputs)
    return loss_value(targets, out, criterion)


def analytic_grad(
    net: NetworkDef,
    weights: Weights,
    inputs,
    targets,
    criterion: Criterion,
    n_streams: int = 1,
) -> GradStore:
    """Gradient of the total loss over the full sequence (errors injected
    on every frame, nothing truncated)."""
    cg = condense(net)
    frames = inputs.frames if isinstance(inputs, Batch) else len(inputs) // n_streams
    state = StreamState(net, n_streams, h=frames)
    out = forward_chunk(net, cg, weights, state, inputs)
    lout = net.output_layers()[0]
    delta = inject_output_error(targets, out, criterion, lout.activation)
    window = BpttWindow(t1=frames, h=frames, h_prime=frames)
    return backward_window(net, cg, weights, state, window, delta)


def numeric_grad(
    net: NetworkDef,
    weights: Weights,
    inputs,
    targets,
    criterion: Criterion,
    n_streams: int = 1,
    step: float = DEFAULT_STEP,
) -> dict[int, np.ndarray]:
    """Central differences (loss(w+step) - loss(w-step)) / (2 step), every
    element of every dense matrix.  The transpose cache is patched in
    lockstep with each probe so the forward pass sees the perturbation."""
    cg = condense(net)
    frames = inputs.frames if isinstance(inputs, Batch) else len(inputs) // n_streams
    grads: dict[int, np.ndarray] = {}
    for cid, w in sorted(weights.w.items()):
        wt = weights.wt[cid]
        g = np.zeros_like(w)
        for i in range(w.shape[0]):
            for j in range(w.shape[1]):
                keep = w[i, j]
                w[i, j] = keep + step
                wt[j, i] = w[i, j]
                up = _run_loss(net, cg, weights, inputs, targets, criterion, n_streams, frames)
                w[i, j] = keep - step
                wt[j, i] = w[i, j]
                down = _run_loss(net, cg, weights, inputs, targets, criterion, n_streams, frames)
                w[i, j] = keep
                wt[j, i] = keep
                g[i, j] = (up - down) / (2.0 * step)
        grads[cid] = g
    return grads


@dataclass(frozen=True)
class ConnCheck:
    connection_id: int
    max_rel: float
    at: tuple[int, int]
    analytic: float
    numeric: float


@dataclass
class GradReport:
    checks: list[ConnCheck]
    threshold: float = DEFAULT_THRESHOLD

    @property
    def max_rel(self) -> float:
        return max((c.max_rel for c in self.checks), default=0.0)

    @property
    def ok(self) -> bool:
        return self.max_rel < self.threshold

    def table(self, net: NetworkDef) -> str:
        lines = [
            f"{'connection':<28} {'max rel err':>12} {'analytic':>13} {'numeric':>13}"
        ]
        for c in self.checks:
            conn = net.connection(c.connection_id)
            name = f"{net.layer(conn.src).name}->{net.layer(conn.dst).name}"
            if conn.delay:
                name += f" (d={conn.delay})"
            lines.append(
                f"{name:<28} {c.max_rel:>12.3e} {c.analytic:>13.6e} {c.numeric:>13.6e}"
            )
        verdict = "PASS" if self.ok else "FAIL"
        lines.append(f"max relative error {self.max_rel:.3e} ({verdict}, threshold {self.threshold:g})")
        return "\n".join(lines)


def compare(analytic: GradStore, numeric: dict[int, np.ndarray], threshold: float = DEFAULT_THRESHOLD) -> GradReport:
    """Relative error per element: |a - n| / max(|a|, |n|, 1e-8)."""
    checks = []
    for cid in sorted(analytic.g):
        a, n = analytic.g[cid], numeric[cid]
        denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), 1e-8)
        rel = np.abs(a - n) / denom
        flat = int(np.argmax(rel))
        at = np.unravel_index(flat, rel.shape)
        checks.append(
            ConnCheck(
                connection_id=cid,
                max_rel=float(rel[at]),
                at=(int(at[0]), int(at[1])),
                analytic=float(a[at]),
                numeric=float(n[at]),
            )
        )
    return GradReport(checks=checks, threshold=threshold)


def check_gradients(
    net: NetworkDef,
    *,
    seq_len: int = 12,
    seed: int = 0,
    step: float = DEFAULT_STEP,
    threshold: float = DEFAULT_THRESHOLD,
    n_streams: int = 1,
    ids_input: bool = False,
    criterion: Criterion | None = None,
) -> GradReport:
    """End-to-end check on random weights, inputs, and targets.

    The criterion defaults to whatever the output activation supports
    (softmax -> cross-entropy with random class targets, identity -> MSE
    with random dense targets)."""
    from .netdef import Activation

    lin = net.input_layers()[0]
    lout = net.output_layers()[0]
    if criterion is None:
        criterion = (
            Criterion.CROSS_ENTROPY_SOFTMAX
            if lout.activation is Activation.SOFTMAX
            else Criterion.MSE_IDENTITY
        )
    rng = np.random.default_rng(seed)
    weights = Weights.init(net, seed)
    rows = seq_len * n_streams
    if ids_input:
        inputs = rng.integers(0, lin.size, size=rows, dtype=np.int64)
    else:
        inputs = Batch(rng.uniform(-1.0, 1.0, size=(rows, lin.size)), seq_len, n_streams)
    if criterion is Criterion.CROSS_ENTROPY_SOFTMAX:
        targets = rng.integers(0, lout.size, size=rows, dtype=np.int64)
    else:
        targets = Batch(rng.uniform(-1.0, 1.0, size=(rows, lout.size)), seq_len, n_streams)
    ana = analytic_grad(net, weights, inputs, targets, criterion, n_streams)
    num = numeric_grad(net, weights, inputs, targets, criterion, n_streams, step)
    return compare(ana, num, threshold)
