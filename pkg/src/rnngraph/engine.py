"""Graph execution: chunked forward, truncated backward, SGD, training.

Training regime: BPTT(h; h') over N parallel streams.  Each iteration
advances every stream by h' frames, runs the forward pass for those frames
(simple supernodes whole-chunk, recurrent supernodes frame by frame),
injects output errors on the newest h' frames, and backpropagates through
the latest h frames.  Gradient contributions older than the horizon
t0' = max(t1 - h, 0) are truncated; the clamp at 0 is exact because all
activations at frames t <= 0 are zero ("zero initial context").

Error conventions (delta = per-layer, eps = per-connection):

    delta_k(t) = (sum over posterior n of W_n^T eps_n(t + d_n)) * f'(s_k(t))
    eps_m = delta_dst                      for additive destinations
    eps_m = delta_dst * prod(z_other)      for multiplicative destinations
    grad W_m = -(sum over t0' < t <= t1 of eps_m(t) y_src(t - d_m)^T)

with f' evaluated from the stored activation output.  Output errors are
injected already multiplied through the fused criterion/activation pair
(delta_out = d - y for both supported criteria), bypassing f'.  GradStore
therefore holds the true loss gradient and `sgd_update` subtracts it.

Bit-reproducibility: every reduction happens in the fixed-order kernels,
per-layer/per-connection accumulation walks ascending ids, and multi-stream
gradients are per-stream partials folded in ascending stream order.  The
same seed therefore yields the same bits for any thread count, for chunked
vs per-frame execution, and for N streams vs N separate runs.
"""

from __future__ import annotations

import enum
import hashlib
import math
import struct
import time
from dataclasses import dataclass, field
from typing import Iterable, Protocol

import numpy as np

from . import kernels
from .condense import CondensedGraph, condense
from .kernels import (
    DTYPE,
    Batch,
    act_deriv_mul_inplace,
    act_inplace,
    assert_finite,
    grad_scatter_fold,
    mm_ab,
    mm_atb,
    rows_gather_add,
)
from .netdef import (
    Activation,
    Aggregation,
    NetworkDef,
    Role,
    WeightKind,
    infer_shapes,
    save_network,
)

__all__ = [
    "BpttWindow",
    "CheckpointError",
    "Criterion",
    "EngineError",
    "GradStore",
    "IterationMetrics",
    "StreamState",
    "TrainConfig",
    "Weights",
    "backward_window",
    "forward_chunk",
    "inject_output_error",
    "load_checkpoint",
    "loss_value",
    "save_checkpoint",
    "sgd_update",
    "train_loop",
]


class EngineError(RuntimeError):
    pass


class CheckpointError(EngineError):
    pass


class Criterion(enum.Enum):
    """Supported (criterion, output activation) fused pairs."""

    CROSS_ENTROPY_SOFTMAX = "cross_entropy_softmax"
    MSE_IDENTITY = "mse_identity"


_CRITERION_ACTIVATION = {
    Criterion.CROSS_ENTROPY_SOFTMAX: Activation.SOFTMAX,
    Criterion.MSE_IDENTITY: Activation.IDENTITY,
}


# ---------------------------------------------------------------------------
# parameters


@dataclass
class Weights:
    """Dense connection matrices, (dst_size, src_size) per connection id,
    plus contiguous transposes used by the forward kernels.  The transpose
    cache is refreshed (exact copy) after every update."""

    net: NetworkDef
    w: dict[int, np.ndarray]
    wt: dict[int, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        if not self.wt:
            self.refresh()

    @classmethod
    def init(cls, net: NetworkDef, seed: int) -> "Weights":
        """Uniform(-r, r) with r = 1/sqrt(src_size), connections in
        ascending id order so the draw sequence is reproducible."""
        shapes = infer_shapes(net)
        rng = np.random.default_rng(seed)
        w = {}
        for c in net.iter_dense():
            rows, cols = shapes[c.id]
            r = 1.0 / math.sqrt(cols)
            w[c.id] = rng.uniform(-r, r, size=(rows, cols)).astype(DTYPE, copy=False)
        return cls(net=net, w=w)

    def refresh(self) -> None:
        self.wt = {cid: np.ascontiguousarray(m.T) for cid, m in self.w.items()}

    def copy(self) -> "Weights":
        return Weights(net=self.net, w={cid: m.copy() for cid, m in self.w.items()})


@dataclass
class GradStore:
    """Loss gradient per dense connection, plus the number of samples
    (window frames x streams) that contributed."""

    g: dict[int, np.ndarray]
    frames_streams: int = 0

    @classmethod
    def zeros(cls, net: NetworkDef) -> "GradStore":
        shapes = infer_shapes(net)
        return cls(g={c.id: np.zeros(shapes[c.id], dtype=DTYPE) for c in net.iter_dense()})

    def add_(self, other: "GradStore") -> "GradStore":
        for cid in sorted(self.g):
            self.g[cid] += other.g[cid]
        self.frames_streams += other.frames_streams
        return self


# ---------------------------------------------------------------------------
# window and state


@dataclass(frozen=True)
class BpttWindow:
    """One backward window: errors are injected on frames (t1-h', t1] and
    backpropagated through (t0', t1] with t0' = max(t1-h, 0)."""

    t1: int
    h: int
    h_prime: int

    def __post_init__(self):
        if not (1 <= self.h_prime <= self.h):
            raise EngineError(f"need 1 <= h'={self.h_prime} <= h={self.h}")
        if self.t1 < self.h_prime:
            raise EngineError(f"t1={self.t1} leaves no room for {self.h_prime} injected frames")

    @property
    def t0(self) -> int:
        return self.t1 - self.h_prime

    @property
    def t0_prime(self) -> int:
        return max(self.t1 - self.h, 0)

    @property
    def frames(self) -> int:
        return self.t1 - self.t0_prime


class StreamState:
    """Sliding activation history for N parallel streams.

    Per layer, a `(capacity * N, size)` float array holds the newest
    `capacity = h + max_delay` frames, frame-major (`row = block * N + n`),
    oldest first.  `advance(k)` shifts out the k oldest frames and
    zero-fills the new region, so frames at t <= 0 read as zeros without
    special cases.  z-history is kept only for connections feeding
    multiplicative layers (backward needs the co-factors), and an id ring
    is kept for input layers driven by token ids.
    """

    def __init__(self, net: NetworkDef, n_streams: int, h: int):
        if n_streams < 1 or h < 1:
            raise EngineError(f"need n_streams >= 1 and h >= 1, got {n_streams}, {h}")
        self.net = net
        self.n = n_streams
        self.h = h
        self.capacity = h + net.max_delay
        self.cursor = 0  # global index of the newest written frame
        rows = self.capacity * n_streams
        self.y = {l.id: np.zeros((rows, l.size), dtype=DTYPE) for l in net.layers}
        self.z = {
            c.id: np.zeros((rows, net.layer(c.dst).size), dtype=DTYPE)
            for c in net.connections
            if net.layer(c.dst).aggregation is Aggregation.MULTIPLICATIVE
        }
        self.ids = {
            l.id: np.full(rows, -1, dtype=np.int64)
            for l in net.layers
            if l.role is Role.INPUT
        }
        self.input_mode: str | None = None  # "dense" or "ids", fixed by first chunk

    @property
    def base(self) -> int:
        """Frames (base, cursor] are resident; anything older is gone."""
        return self.cursor - self.capacity

    def rows(self, t_lo: int, t_hi: int) -> slice:
        """Row slice covering frames t_lo..t_hi inclusive."""
        if t_lo <= self.base or t_hi > self.cursor:
            raise EngineError(
                f"frames [{t_lo}, {t_hi}] outside resident window"
                f" ({self.base}, {self.cursor}]"
            )
        lo = (t_lo - self.base - 1) * self.n
        hi = (t_hi - self.base) * self.n
        return slice(lo, hi)

    def read_y(self, layer_id: int, t_lo: int, t_hi: int) -> np.ndarray:
        """Activation rows for frames t_lo..t_hi (view; do not mutate)."""
        return self.y[layer_id][self.rows(t_lo, t_hi)]

    def advance(self, k: int) -> None:
        if not (1 <= k <= self.h):
            raise EngineError(f"advance by {k} outside [1, h={self.h}]")
        keep = (self.capacity - k) * self.n
        drop = k * self.n
        for arr in self.y.values():
            arr[:keep] = arr[drop:]
            arr[keep:] = 0.0
        for arr in self.z.values():
            arr[:keep] = arr[drop:]
            arr[keep:] = 0.0
        for arr in self.ids.values():
            arr[:keep] = arr[drop:]
            arr[keep:] = -1
        self.cursor += k

    def reset_stream(self, n: int) -> None:
        """Zero one stream's history (sequence boundary)."""
        if not (0 <= n < self.n):
            raise EngineError(f"stream {n} outside [0, {self.n})")
        for arr in self.y.values():
            arr[n :: self.n] = 0.0
        for arr in self.z.values():
            arr[n :: self.n] = 0.0
        for arr in self.ids.values():
            arr[n :: self.n] = -1

    def copy(self) -> "StreamState":
        dup = StreamState.__new__(StreamState)
        dup.net, dup.n, dup.h = self.net, self.n, self.h
        dup.capacity, dup.cursor = self.capacity, self.cursor
        dup.y = {k: v.copy() for k, v in self.y.items()}
        dup.z = {k: v.copy() for k, v in self.z.items()}
        dup.ids = {k: v.copy() for k, v in self.ids.items()}
        dup.input_mode = self.input_mode
        return dup


def _single_io(net: NetworkDef):
    ins = net.input_layers()
    outs = net.output_layers()
    if len(ins) != 1 or len(outs) != 1:
        raise EngineError(
            f"engine supports exactly one input and one output layer,"
            f" got {len(ins)} and {len(outs)}"
        )
    return ins[0], outs[0]


# ---------------------------------------------------------------------------
# forward


def _accum_z(net, weights, state, cid, t_lo, t_hi, out):
    """out += W_m y_src(t - d_m) for frames t_lo..t_hi of the chunk."""
    c = net.connection(cid)
    src = net.layer(c.src)
    if src.role is Role.INPUT and state.input_mode == "ids":
        if c.weight_kind is not WeightKind.DENSE:
            raise EngineError(
                f"connection {cid}: identity weight from an id-driven input"
                " layer is not supported"
            )
        ids = state.ids[src.id][state.rows(t_lo - c.delay, t_hi - c.delay)]
        rows_gather_add(weights.wt[cid], ids, out)
        return
    ysrc = state.read_y(c.src, t_lo - c.delay, t_hi - c.delay)
    if c.weight_kind is WeightKind.DENSE:
        mm_ab(ysrc, weights.wt[cid], out)
    else:
        out += ysrc


def _eval_layer(net, weights, state, lid, t_lo, t_hi):
    layer = net.layer(lid)
    if layer.role is Role.INPUT:
        return
    rows = state.rows(t_lo, t_hi)
    target = state.y[lid][rows]
    ants = net.anterior(lid)
    if not ants:
        target[:] = 1.0  # constant-one convention (bias layers)
        return
    if layer.aggregation is Aggregation.ADDITIVE:
        for cid in ants:
            _accum_z(net, weights, state, cid, t_lo, t_hi, target)
        act_inplace(layer.activation, target)
    else:
        for cid in ants:
            _accum_z(net, weights, state, cid, t_lo, t_hi, state.z[cid][rows])
        first = True
        for cid in ants:
            zv = state.z[cid][rows]
            if first:
                target[:] = zv
                first = False
            else:
                target *= zv
        # activation is identity by validation


def forward_chunk(
    net: NetworkDef,
    cg: CondensedGraph,
    weights: Weights,
    state: StreamState,
    inputs: Batch | np.ndarray,
    *,
    frame_parallel: bool = True,
    check_finite: bool = False,
) -> Batch:
    """Advance all streams by one chunk and return the output activations.

    `inputs` is either a dense Batch for the input layer or an int64 id
    array of shape (frames * streams,) selecting one-hot rows (frame-major,
    same addressing as Batch).  The first call fixes the mode; later chunks
    must match.  With `frame_parallel`, simple supernodes process the whole
    chunk in one batched step; recurrent supernodes always step frame by
    frame in their internal order.  Both paths produce identical bits.
    """
    lin, lout = _single_io(net)
    if isinstance(inputs, Batch):
        mode = "dense"
        frames = inputs.frames
        if inputs.streams != state.n:
            raise EngineError(f"chunk has {inputs.streams} streams, state has {state.n}")
        if inputs.width != lin.size:
            raise EngineError(f"input width {inputs.width} != layer size {lin.size}")
    else:
        mode = "ids"
        inputs = np.asarray(inputs)
        if inputs.dtype.kind not in "iu" or inputs.ndim != 1:
            raise EngineError("id inputs must be a 1-d integer array")
        if inputs.size % state.n:
            raise EngineError(f"{inputs.size} ids do not tile {state.n} streams")
        frames = inputs.size // state.n
        if inputs.size and (inputs.min() < 0 or inputs.max() >= lin.size):
            raise EngineError(f"input ids outside [0, {lin.size})")
    if state.input_mode is None:
        state.input_mode = mode
    elif state.input_mode != mode:
        raise EngineError(f"chunk mode {mode!r} != stream mode {state.input_mode!r}")
    if frames < 1:
        raise EngineError("empty chunk")

    state.advance(frames)
    t_hi = state.cursor
    t_lo = t_hi - frames + 1
    rows = state.rows(t_lo, t_hi)
    if mode == "dense":
        state.y[lin.id][rows] = inputs.values
    else:
        state.ids[lin.id][rows] = inputs.astype(np.int64, copy=False)

    for ni in cg.topo_order:
        node = cg.nodes[ni]
        if node.recurrent or not frame_parallel:
            for t in range(t_lo, t_hi + 1):
                for lid in node.internal_order:
                    _eval_layer(net, weights, state, lid, t, t)
        else:
            for lid in node.internal_order:
                _eval_layer(net, weights, state, lid, t_lo, t_hi)

    if check_finite:
        for l in net.layers:
            assert_finite(state.y[l.id][rows], f"activations of layer {l.name!r}")
    return Batch(state.y[lout.id][rows].copy(), frames, state.n)


# ---------------------------------------------------------------------------
# error injection and loss


def inject_output_error(
    target: Batch | np.ndarray,
    output: Batch,
    criterion: Criterion,
    activation: Activation,
) -> Batch:
    """delta_out = d - y for the fused (criterion, activation) pairs.

    Cross-entropy requires softmax outputs and mean-squared error requires
    identity outputs; the fusion is what makes the softmax Jacobian (and
    the identity trivially) collapse into d - y.  `target` is a dense Batch
    of desired values, or an int64 class-id array for cross-entropy.
    """
    want = _CRITERION_ACTIVATION[criterion]
    if activation is not want:
        raise EngineError(
            f"{criterion.value} requires {want.value} output activation, got {activation.value}"
        )
    if isinstance(target, Batch):
        if target.values.shape != output.values.shape:
            raise EngineError(
                f"target shape {target.values.shape} != output {output.values.shape}"
            )
        return Batch(target.values - output.values, output.frames, output.streams)
    ids = np.asarray(target)
    if criterion is not Criterion.CROSS_ENTROPY_SOFTMAX:
        raise EngineError("class-id targets are only defined for cross-entropy")
    if ids.shape != (output.values.shape[0],):
        raise EngineError(f"need {output.values.shape[0]} target ids, got {ids.shape}")
    delta = -output.values
    delta[np.arange(ids.size), ids] += 1.0
    return Batch(delta, output.frames, output.streams)


def loss_value(target: Batch | np.ndarray, output: Batch, criterion: Criterion) -> float:
    """Total error over the batch (a sum, not a mean, matching the window
    error the gradients differentiate).  Accumulated with math.fsum so
    finite-difference probes are not drowned by summation noise."""
    if criterion is Criterion.MSE_IDENTITY:
        if not isinstance(target, Batch):
            raise EngineError("mean-squared error needs dense targets")
        diff = target.values - output.values
        return 0.5 * math.fsum((diff * diff).ravel().tolist())
    if isinstance(target, Batch):
        mask = target.values != 0.0
        terms = target.values[mask] * np.log(output.values[mask])
        return -math.fsum(terms.tolist())
    ids = np.asarray(target)
    picked = output.values[np.arange(ids.size), ids]
    return -math.fsum(np.log(picked).tolist())


# ---------------------------------------------------------------------------
# backward


def backward_window(
    net: NetworkDef,
    cg: CondensedGraph,
    weights: Weights,
    state: StreamState,
    window: BpttWindow,
    delta_out: Batch,
    *,
    frame_parallel: bool = True,
) -> GradStore:
    """Backpropagate the injected output errors through the window and
    return the loss gradient.  No gradient flows past window.t0_prime:
    those frames' activations enter only as fixed history."""
    _, lout = _single_io(net)
    n = state.n
    if window.t1 != state.cursor:
        raise EngineError(f"window t1={window.t1} != stream cursor {state.cursor}")
    if window.h > state.h:
        raise EngineError(f"window h={window.h} exceeds state h={state.h}")
    if (delta_out.frames, delta_out.streams) != (window.h_prime, n):
        raise EngineError(
            f"delta_out is {delta_out.frames}x{delta_out.streams},"
            f" window wants {window.h_prime}x{n}"
        )
    t1, t0p = window.t1, window.t0_prime
    w_frames = window.frames

    def lrows(t_lo: int, t_hi: int) -> slice:
        return slice((t_lo - t0p - 1) * n, (t_hi - t0p) * n)

    # delta only for layers that produce eps (have anteriors, not inputs)
    delta = {
        l.id: np.zeros((w_frames * n, l.size), dtype=DTYPE)
        for l in net.layers
        if l.role is not Role.INPUT and net.anterior(l.id)
    }
    eps: dict[int, np.ndarray] = {}

    def backward_layer(lid: int, t_lo: int, t_hi: int) -> None:
        layer = net.layer(lid)
        if lid not in delta:
            return
        ants = net.anterior(lid)
        # e(t) += W_n^T eps_n(t + d_n), clamped so t + d_n never passes t1
        for cid in net.posterior(lid):
            c = net.connection(cid)
            hi = min(t_hi, t1 - c.delay)
            if hi < t_lo:
                continue
            ev = eps[cid][lrows(t_lo + c.delay, hi + c.delay)]
            tgt = delta[lid][lrows(t_lo, hi)]
            if c.weight_kind is WeightKind.DENSE:
                mm_ab(ev, weights.w[cid], tgt)
            else:
                tgt += ev
        lr = lrows(t_lo, t_hi)
        if layer.activation is Activation.SOFTMAX:
            if net.posterior(lid):
                raise EngineError(
                    f"softmax layer {layer.name!r} feeds other layers; its"
                    " derivative only exists fused with cross-entropy injection"
                )
            # propagated error is structurally zero; injection lands below
        else:
            act_deriv_mul_inplace(
                layer.activation, state.read_y(lid, t_lo, t_hi), delta[lid][lr]
            )
        if lid == lout.id:
            inj_lo = max(t_lo, window.t0 + 1)
            if inj_lo <= t_hi:
                src = delta_out.values[
                    (inj_lo - window.t0 - 1) * n : (t_hi - window.t0) * n
                ]
                delta[lid][lrows(inj_lo, t_hi)] += src
        if layer.aggregation is Aggregation.ADDITIVE:
            for cid in ants:
                eps[cid] = delta[lid]  # eps == delta, shared storage
        else:
            for cid in ants:
                if cid not in eps:
                    eps[cid] = np.zeros((w_frames * n, layer.size), dtype=DTYPE)
                part = eps[cid][lr]
                part[:] = delta[lid][lr]
                for other in ants:
                    if other != cid:
                        part *= state.z[other][state.rows(t_lo, t_hi)]

    for ni in reversed(cg.topo_order):
        node = cg.nodes[ni]
        if node.recurrent or not frame_parallel:
            for t in range(t1, t0p, -1):
                for lid in reversed(node.internal_order):
                    backward_layer(lid, t, t)
        else:
            for lid in reversed(node.internal_order):
                backward_layer(lid, t0p + 1, t1)

    # gradients: per-stream partials folded in ascending stream order, so
    # an N-stream run is bit-identical to summing N single-stream runs
    grads = GradStore.zeros(net)
    grads.frames_streams = w_frames * n
    for c in net.iter_dense():
        if c.id not in eps:  # destination unreachable by any error path
            continue
        e = eps[c.id]
        g = grads.g[c.id]
        src = net.layer(c.src)
        if src.role is Role.INPUT and state.input_mode == "ids":
            ids = state.ids[src.id][state.rows(t0p + 1 - c.delay, t1 - c.delay)]
            gtmp = np.zeros_like(g)
            grad_scatter_fold(e, ids, n, gtmp, g)
            continue
        ysrc = state.read_y(c.src, t0p + 1 - c.delay, t1 - c.delay)
        gn = np.zeros_like(g)
        for s in range(n):
            gn[:] = 0.0
            mm_atb(e[s::n], ysrc[s::n], gn)
            g -= gn
    return grads


# ---------------------------------------------------------------------------
# updates and checkpoints


def sgd_update(weights: Weights, grads: GradStore, lr: float) -> None:
    """W <- W - lr * grad, then refresh the transpose cache."""
    if not (lr > 0.0):
        raise EngineError(f"learning rate must be positive, got {lr}")
    for cid in sorted(weights.w):
        weights.w[cid] -= lr * grads.g[cid]
    weights.refresh()


_MAGIC = b"RNNG"
_VERSION = 1


def structure_hash(net: NetworkDef) -> bytes:
    """8-byte digest of the canonical network document; checkpoints refuse
    to load into a structurally different network."""
    return hashlib.sha256(save_network(net).encode()).digest()[:8]


def save_checkpoint(path: str, net: NetworkDef, weights: Weights) -> None:
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<I", _VERSION))
        fh.write(structure_hash(net))
        fh.write(struct.pack("<I", len(weights.w)))
        for cid in sorted(weights.w):
            m = weights.w[cid]
            fh.write(struct.pack("<III", cid, m.shape[0], m.shape[1]))
            fh.write(np.ascontiguousarray(m, dtype="<f8").tobytes())


def load_checkpoint(path: str, net: NetworkDef) -> Weights:
    shapes = infer_shapes(net)
    with open(path, "rb") as fh:

        def read_exact(count: int) -> bytes:
            buf = fh.read(count)
            if len(buf) != count:
                raise CheckpointError(f"{path}: truncated checkpoint")
            return buf

        if read_exact(4) != _MAGIC:
            raise CheckpointError(f"{path}: not a checkpoint file")
        (version,) = struct.unpack("<I", read_exact(4))
        if version != _VERSION:
            raise CheckpointError(f"{path}: unsupported version {version}")
        if read_exact(8) != structure_hash(net):
            raise CheckpointError(f"{path}: checkpoint belongs to a different network structure")
        (count,) = struct.unpack("<I", read_exact(4))
        w: dict[int, np.ndarray] = {}
        for _ in range(count):
            cid, rows, cols = struct.unpack("<III", read_exact(12))
            if cid not in shapes or shapes[cid] != (rows, cols):
                raise CheckpointError(f"{path}: connection {cid} has shape {(rows, cols)}")
            buf = read_exact(rows * cols * 8)
            w[cid] = np.frombuffer(buf, dtype="<f8").reshape(rows, cols).astype(DTYPE)
    expected = {c.id for c in net.iter_dense()}
    if set(w) != expected:
        raise CheckpointError(f"{path}: connection ids {sorted(w)} != network {sorted(expected)}")
    return Weights(net=net, w=w)


# ---------------------------------------------------------------------------
# training


class StreamSource(Protocol):
    """What train_loop consumes.  Chunks expose `.inputs` (Batch or int64
    ids), `.targets` (Batch or int64 ids), and `.new_sequence` (bool array
    of streams starting a new sequence at this chunk, or None)."""

    n_streams: int

    def next_batch(self, h_prime: int): ...


@dataclass
class TrainConfig:
    h: int
    h_prime: int
    lr: float
    iterations: int
    seed: int = 0
    criterion: Criterion = Criterion.CROSS_ENTROPY_SOFTMAX
    reset_on_sequence_boundary: bool = False
    frame_parallel: bool = True
    check_finite: bool = False
    log_every: int = 0

    def __post_init__(self):
        if not (1 <= self.h_prime <= self.h):
            raise EngineError(f"need 1 <= h'={self.h_prime} <= h={self.h}")
        if self.iterations < 1:
            raise EngineError("need at least one iteration")


@dataclass
class IterationMetrics:
    iteration: int
    loss: float  # mean per sample over the injected frames
    frames: int  # h' * n_streams
    seconds: float
    words_per_sec: float


def train_loop(
    net: NetworkDef,
    streams: StreamSource,
    config: TrainConfig,
    weights: Weights | None = None,
    log=None,
) -> tuple[Weights, list[IterationMetrics]]:
    """SGD over BPTT(h; h') windows.  Every iteration consumes h' new
    frames per stream; the minibatch size is therefore h' * n_streams."""
    cg = condense(net)
    _, lout = _single_io(net)
    want = _CRITERION_ACTIVATION[config.criterion]
    if lout.activation is not want:
        raise EngineError(
            f"{config.criterion.value} requires {want.value} output, network"
            f" has {lout.activation.value}"
        )
    if weights is None:
        weights = Weights.init(net, config.seed)
    state = StreamState(net, streams.n_streams, config.h)
    metrics: list[IterationMetrics] = []
    for it in range(config.iterations):
        start = time.perf_counter()
        chunk = streams.next_batch(config.h_prime)
        if config.reset_on_sequence_boundary and chunk.new_sequence is not None:
            for s in np.flatnonzero(chunk.new_sequence):
                state.reset_stream(int(s))
        out = forward_chunk(
            net, cg, weights, state, chunk.inputs,
            frame_parallel=config.frame_parallel, check_finite=config.check_finite,
        )
        total = loss_value(chunk.targets, out, config.criterion)
        delta = inject_output_error(chunk.targets, out, config.criterion, lout.activation)
        window = BpttWindow(t1=state.cursor, h=config.h, h_prime=config.h_prime)
        grads = backward_window(
            net, cg, weights, state, window, delta,
            frame_parallel=config.frame_parallel,
        )
        sgd_update(weights, grads, config.lr)
        seconds = time.perf_counter() - start
        samples = config.h_prime * streams.n_streams
        m = IterationMetrics(
            iteration=it,
            loss=total / samples,
            frames=samples,
            seconds=seconds,
            words_per_sec=samples / seconds if seconds > 0 else float("inf"),
        )
        metrics.append(m)
        if log is not None and config.log_every and (it % config.log_every == 0 or it == config.iterations - 1):
            log(f"iter {it:5d}  loss {m.loss:.6f}  {m.words_per_sec:,.0f} words/s")
    return weights, metrics
