"""Reference topologies expressed as plain graph structure.

Both builders produce networks with exactly one input and one output layer
plus a size-1 constant-one "bias" layer (a hidden layer with no incoming
connections) wired densely into every trainable sum.
"""

from __future__ import annotations

from .netdef import (
    Activation,
    Aggregation,
    ConnectionDef,
    LayerDef,
    NetworkDef,
    Role,
    WeightKind,
    validate,
)

__all__ = ["build_elman", "build_lstm", "count_params"]

_ADD = Aggregation.ADDITIVE
_MUL = Aggregation.MULTIPLICATIVE


class _GraphBuilder:
    def __init__(self):
        self.layers: list[LayerDef] = []
        self.conns: list[ConnectionDef] = []
        self._by_name: dict[str, int] = {}

    def layer(self, name, size, *, agg=_ADD, act=Activation.IDENTITY, role=Role.HIDDEN) -> int:
        lid = len(self.layers)
        self.layers.append(
            LayerDef(id=lid, name=name, size=size, aggregation=agg, activation=act, role=role)
        )
        self._by_name[name] = lid
        return lid

    def connect(self, src, dst, *, delay=0, kind=WeightKind.DENSE) -> None:
        self.conns.append(
            ConnectionDef(
                id=len(self.conns),
                src=self._by_name[src],
                dst=self._by_name[dst],
                delay=delay,
                weight_kind=kind,
            )
        )

    def build(self) -> NetworkDef:
        net = NetworkDef(layers=tuple(self.layers), connections=tuple(self.conns))
        validate(net).raise_if_failed()
        return net


def build_elman(
    n_in: int,
    n_hidden: int,
    n_out: int,
    *,
    include_bias: bool = True,
    hidden_activation: Activation = Activation.TANH,
    output_activation: Activation = Activation.SOFTMAX,
) -> NetworkDef:
    """Single recurrent hidden layer: h(t) = f(W_xh x(t) + W_hh h(t-1) + b)."""
    b = _GraphBuilder()
    b.layer("in", n_in, role=Role.INPUT)
    if include_bias:
        b.layer("bias", 1)
    b.layer("hidden", n_hidden, act=hidden_activation)
    b.layer("out", n_out, act=output_activation, role=Role.OUTPUT)
    b.connect("in", "hidden")
    b.connect("hidden", "hidden", delay=1)
    b.connect("hidden", "out")
    if include_bias:
        b.connect("bias", "hidden")
        b.connect("bias", "out")
    return b.build()


def build_lstm(
    n_in: int,
    n_cells: int,
    n_out: int,
    *,
    peepholes: bool = True,
    forget_gate: bool = True,
    include_bias: bool = True,
    output_peephole_delay: int = 0,
    output_activation: Activation = Activation.SOFTMAX,
) -> NetworkDef:
    """Peephole LSTM block as graph structure.

    Gating is multiplication by product layers; the cell sums the gated
    block input with the gated (or directly recycled) previous cell state,
    carried by delay-1 connections.  Peepholes read the previous cell state
    for the input/forget gates and, by default, the current one for the
    output gate (`output_peephole_delay=1` reads the previous state there
    too).  There is no recurrent connection from the block output back to
    its input.
    """
    if output_peephole_delay not in (0, 1):
        raise ValueError(f"output_peephole_delay must be 0 or 1, got {output_peephole_delay}")
    b = _GraphBuilder()
    b.layer("in", n_in, role=Role.INPUT)
    if include_bias:
        b.layer("bias", 1)
    b.layer("cell_in", n_cells, act=Activation.TANH)
    b.layer("in_gate", n_cells, act=Activation.SIGMOID)
    if forget_gate:
        b.layer("forget_gate", n_cells, act=Activation.SIGMOID)
    b.layer("in_prod", n_cells, agg=_MUL)
    if forget_gate:
        b.layer("forget_prod", n_cells, agg=_MUL)
    b.layer("cell", n_cells)
    b.layer("cell_act", n_cells, act=Activation.TANH)
    b.layer("out_gate", n_cells, act=Activation.SIGMOID)
    b.layer("out_prod", n_cells, agg=_MUL)
    b.layer("out", n_out, act=output_activation, role=Role.OUTPUT)

    gates = ["cell_in", "in_gate", "out_gate"] + (["forget_gate"] if forget_gate else [])
    for g in gates:
        b.connect("in", g)
    if include_bias:
        for g in gates:
            b.connect("bias", g)
        b.connect("bias", "out")
    if peepholes:
        b.connect("cell", "in_gate", delay=1)
        if forget_gate:
            b.connect("cell", "forget_gate", delay=1)
        b.connect("cell", "out_gate", delay=output_peephole_delay)

    b.connect("cell_in", "in_prod", kind=WeightKind.IDENTITY)
    b.connect("in_gate", "in_prod", kind=WeightKind.IDENTITY)
    if forget_gate:
        b.connect("cell", "forget_prod", delay=1, kind=WeightKind.IDENTITY)
        b.connect("forget_gate", "forget_prod", kind=WeightKind.IDENTITY)
        b.connect("forget_prod", "cell", kind=WeightKind.IDENTITY)
    else:
        b.connect("cell", "cell", delay=1, kind=WeightKind.IDENTITY)
    b.connect("in_prod", "cell", kind=WeightKind.IDENTITY)
    b.connect("cell", "cell_act", kind=WeightKind.IDENTITY)
    b.connect("cell_act", "out_prod", kind=WeightKind.IDENTITY)
    b.connect("out_gate", "out_prod", kind=WeightKind.IDENTITY)
    b.connect("out_prod", "out")
    return b.build()


def count_params(net: NetworkDef) -> int:
    """Trainable scalars: dense matrices only, identity carries none."""
    return sum(
        net.layer(c.dst).size * net.layer(c.src).size for c in net.iter_dense()
    )
