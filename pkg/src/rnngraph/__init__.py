"""Arbitrary recurrent networks as directed graphs.

Define a network as layers plus delayed connections, condense its strongly
connected components into a minimal set of frame-sequential supernodes, and
train it with truncated backpropagation over parallel streams.  All compute
is bit-reproducible across thread counts and stream layouts.
"""

from .netdef import (
    Activation,
    Aggregation,
    ConnectionDef,
    LayerDef,
    NetworkDef,
    Role,
    WeightKind,
    infer_shapes,
    load_network,
    save_network,
    validate,
)
from .condense import CondensedGraph, SuperNode, condense, export_dot, tarjan_scc
from .kernels import Batch
from .engine import (
    BpttWindow,
    Criterion,
    GradStore,
    StreamState,
    TrainConfig,
    Weights,
    backward_window,
    forward_chunk,
    inject_output_error,
    load_checkpoint,
    loss_value,
    save_checkpoint,
    sgd_update,
    train_loop,
)
from .builders import build_elman, build_lstm, count_params
from .gradcheck import check_gradients

__version__ = "0.1.0"
