"""Network structure: layers, connections, validation, and the file format.

A network is a directed graph.  Nodes are *layers* (vectors of units) and
edges are *connections* that carry the source layer's activation, optionally
delayed by a fixed number of frames, through a dense or identity weight.

For a layer k with anterior (incoming) connections m, each connection
produces ``z_m(t) = W_m @ y_src(t - d_m)``.  The layer folds its z-terms with
its aggregation (sum or elementwise product) and applies its activation:
``y_k(t) = f_k(g_k(z_m(t), ...))``.

Two conventions that the rest of the package relies on:

* A non-input layer with *no* anterior connections emits constant 1.0
  activations.  This is how bias terms are expressed as ordinary graph
  structure (a size-1 always-one layer with dense outgoing edges).
* Activations at frames t <= 0 are zero ("zero initial context").
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Iterator

import yaml

__all__ = [
    "Activation",
    "Aggregation",
    "ConnectionDef",
    "LayerDef",
    "NetdefError",
    "NetworkDef",
    "ParseError",
    "Role",
    "SemanticError",
    "ValidationReport",
    "Violation",
    "WeightKind",
    "infer_shapes",
    "load_network",
    "save_network",
    "validate",
]


class Aggregation(enum.Enum):
    """How a layer folds its incoming z-terms into a net input."""

    ADDITIVE = "additive"
    MULTIPLICATIVE = "multiplicative"


class Activation(enum.Enum):
    IDENTITY = "identity"
    SIGMOID = "sigmoid"
    TANH = "tanh"
    SOFTMAX = "softmax"


class Role(enum.Enum):
    INPUT = "input"
    HIDDEN = "hidden"
    OUTPUT = "output"


class WeightKind(enum.Enum):
    """Dense trainable matrix, or a fixed identity (sizes must match)."""

    DENSE = "dense"
    IDENTITY = "identity"


@dataclass(frozen=True)
class LayerDef:
    """One layer.  `id` is its index in NetworkDef.layers."""

    id: int
    name: str
    size: int
    aggregation: Aggregation = Aggregation.ADDITIVE
    activation: Activation = Activation.IDENTITY
    role: Role = Role.HIDDEN


@dataclass(frozen=True)
class ConnectionDef:
    """One directed edge src -> dst with frame delay >= 0.

    `id` is its index in NetworkDef.connections and doubles as the key for
    its weight matrix and its slot in gradient stores.
    """

    id: int
    src: int
    dst: int
    delay: int = 0
    weight_kind: WeightKind = WeightKind.DENSE


class NetdefError(Exception):
    """Base class for network-definition errors."""


class ParseError(NetdefError):
    """The document is not structurally a network description.

    Carries a human-readable location (yaml line/column or a key path).
    """

    def __init__(self, message: str, location: str = ""):
        self.location = location
        super().__init__(f"{message}" + (f" (at {location})" if location else ""))


class SemanticError(NetdefError):
    """The document parsed but describes an invalid network."""

    def __init__(self, report: "ValidationReport"):
        self.report = report
        lines = "; ".join(str(v) for v in report.violations)
        super().__init__(f"invalid network: {lines}")


@dataclass(frozen=True)
class Violation:
    """One validation failure, naming the offending layer/connection."""

    rule: str
    message: str
    layer_id: int | None = None
    connection_id: int | None = None

    def __str__(self) -> str:
        where = ""
        if self.layer_id is not None:
            where = f" [layer {self.layer_id}]"
        if self.connection_id is not None:
            where += f" [connection {self.connection_id}]"
        return f"{self.rule}: {self.message}{where}"


@dataclass
class ValidationReport:
    violations: list[Violation] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations

    def raise_if_failed(self) -> None:
        if not self.ok:
            raise SemanticError(self)


@dataclass(frozen=True)
class NetworkDef:
    """Immutable network description plus derived adjacency.

    Layer ids and connection ids are positions in their tuples; helpers
    below keep that bijection from leaking into calling code.
    """

    layers: tuple[LayerDef, ...]
    connections: tuple[ConnectionDef, ...]
    _anterior: dict[int, tuple[int, ...]] = field(
        init=False, repr=False, compare=False, default_factory=dict
    )
    _posterior: dict[int, tuple[int, ...]] = field(
        init=False, repr=False, compare=False, default_factory=dict
    )

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(self.layers))
        object.__setattr__(self, "connections", tuple(self.connections))
        ant: dict[int, list[int]] = {l.id: [] for l in self.layers}
        post: dict[int, list[int]] = {l.id: [] for l in self.layers}
        for c in self.connections:
            if c.dst in ant:
                ant[c.dst].append(c.id)
            if c.src in post:
                post[c.src].append(c.id)
        # Ascending connection id everywhere: this is the accumulation order
        # contract that the deterministic kernels and gradient stores rely on.
        object.__setattr__(self, "_anterior", {k: tuple(sorted(v)) for k, v in ant.items()})
        object.__setattr__(self, "_posterior", {k: tuple(sorted(v)) for k, v in post.items()})

    # -- lookups ---------------------------------------------------------

    def layer(self, layer_id: int) -> LayerDef:
        return self.layers[layer_id]

    def connection(self, conn_id: int) -> ConnectionDef:
        return self.connections[conn_id]

    def anterior(self, layer_id: int) -> tuple[int, ...]:
        """Ids of connections ending at this layer, ascending."""
        return self._anterior[layer_id]

    def posterior(self, layer_id: int) -> tuple[int, ...]:
        """Ids of connections leaving this layer, ascending."""
        return self._posterior[layer_id]

    def find_layer(self, name: str) -> LayerDef:
        for l in self.layers:
            if l.name == name:
                return l
        raise KeyError(f"no layer named {name!r}")

    def find_connection(self, src_name: str, dst_name: str) -> ConnectionDef:
        src = self.find_layer(src_name).id
        dst = self.find_layer(dst_name).id
        for c in self.connections:
            if c.src == src and c.dst == dst:
                return c
        raise KeyError(f"no connection {src_name!r} -> {dst_name!r}")

    @property
    def max_delay(self) -> int:
        return max((c.delay for c in self.connections), default=0)

    def input_layers(self) -> tuple[LayerDef, ...]:
        return tuple(l for l in self.layers if l.role is Role.INPUT)

    def output_layers(self) -> tuple[LayerDef, ...]:
        return tuple(l for l in self.layers if l.role is Role.OUTPUT)

    def iter_dense(self) -> Iterator[ConnectionDef]:
        """Dense connections in ascending id order (the trainable set)."""
        for c in self.connections:
            if c.weight_kind is WeightKind.DENSE:
                yield c


# ---------------------------------------------------------------------------
# validation


def _find_delay0_cycle(net: NetworkDef) -> list[int] | None:
    """Return layer ids forming a zero-delay cycle, or None.

    Iterative DFS with three colors; the cycle is recovered from the path
    stack when a gray node is re-entered.
    """
    WHITE, GRAY, BLACK = 0, 1, 2
    color = {l.id: WHITE for l in net.layers}
    parent: dict[int, int] = {}
    for root in (l.id for l in net.layers):
        if color[root] != WHITE:
            continue
        stack: list[tuple[int, Iterator[int]]] = [(root, iter(net.posterior(root)))]
        color[root] = GRAY
        while stack:
            node, edges = stack[-1]
            advanced = False
            for cid in edges:
                conn = net.connection(cid)
                if conn.delay != 0 or conn.dst not in color:
                    continue
                nxt = conn.dst
                if color[nxt] == WHITE:
                    color[nxt] = GRAY
                    parent[nxt] = node
                    stack.append((nxt, iter(net.posterior(nxt))))
                    advanced = True
                    break
                if color[nxt] == GRAY:
                    cycle = [node]
                    cur = node
                    while cur != nxt:
                        cur = parent[cur]
                        cycle.append(cur)
                    cycle.reverse()
                    return cycle
            if not advanced:
                color[node] = BLACK
                stack.pop()
    return None


def validate(net: NetworkDef) -> ValidationReport:
    """Check every structural rule; collect failures instead of raising.

    Rules: non-empty, positive sizes, unique names, valid layer refs,
    non-negative delays, inputs have no anteriors, outputs exist and have
    anteriors, multiplicative layers use identity activation, softmax only
    on output layers, identity weights need matching sizes, and the
    zero-delay subgraph must be acyclic (no algebraic loops).
    """
    rep = ValidationReport()
    add = rep.violations.append

    if not net.layers:
        add(Violation("empty-network", "network has no layers"))
        return rep

    for i, l in enumerate(net.layers):
        if l.id != i:
            add(Violation("layer-id", f"layer id {l.id} != position {i}", layer_id=l.id))
    names = [l.name for l in net.layers]
    for name in sorted(set(n for n in names if names.count(n) > 1)):
        add(Violation("duplicate-name", f"layer name {name!r} is not unique"))

    for l in net.layers:
        if l.size < 1:
            add(Violation("layer-size", f"layer {l.name!r} has size {l.size}", layer_id=l.id))
        if l.aggregation is Aggregation.MULTIPLICATIVE and l.activation is not Activation.IDENTITY:
            add(
                Violation(
                    "mult-activation",
                    f"multiplicative layer {l.name!r} must use identity activation,"
                    f" got {l.activation.value}",
                    layer_id=l.id,
                )
            )
        if l.activation is Activation.SOFTMAX and l.role is not Role.OUTPUT:
            add(
                Violation(
                    "softmax-role",
                    f"softmax on non-output layer {l.name!r}",
                    layer_id=l.id,
                )
            )

    n_layers = len(net.layers)
    refs_ok = True
    for i, c in enumerate(net.connections):
        if c.id != i:
            add(Violation("connection-id", f"connection id {c.id} != position {i}", connection_id=c.id))
        for end, which in ((c.src, "src"), (c.dst, "dst")):
            if not (0 <= end < n_layers):
                add(
                    Violation(
                        "layer-ref",
                        f"connection {c.id} {which} references missing layer {end}",
                        connection_id=c.id,
                    )
                )
                refs_ok = False
        if c.delay < 0:
            add(Violation("delay-negative", f"connection {c.id} has delay {c.delay}", connection_id=c.id))

    if not refs_ok:
        return rep  # adjacency-dependent rules would chase bad indices

    for l in net.layers:
        if l.role is Role.INPUT and net.anterior(l.id):
            cid = net.anterior(l.id)[0]
            add(
                Violation(
                    "input-anterior",
                    f"input layer {l.name!r} has incoming connections",
                    layer_id=l.id,
                    connection_id=cid,
                )
            )
        if l.role is Role.OUTPUT and not net.anterior(l.id):
            add(
                Violation(
                    "output-anterior",
                    f"output layer {l.name!r} has no incoming connections",
                    layer_id=l.id,
                )
            )

    if not net.output_layers():
        add(Violation("no-output", "network has no output layer"))

    for c in net.connections:
        if c.weight_kind is WeightKind.IDENTITY:
            s, d = net.layer(c.src).size, net.layer(c.dst).size
            if s != d:
                add(
                    Violation(
                        "identity-size",
                        f"identity connection {c.id} joins sizes {s} -> {d}",
                        connection_id=c.id,
                    )
                )

    cycle = _find_delay0_cycle(net)
    if cycle is not None:
        names = " -> ".join(net.layer(i).name for i in cycle)
        add(
            Violation(
                "algebraic-loop",
                f"zero-delay cycle: {names}; every cycle needs a delayed connection",
                layer_id=cycle[0],
            )
        )
    return rep


def infer_shapes(net: NetworkDef) -> dict[int, tuple[int, int]]:
    """Weight shape (dst_size, src_size) per connection id.

    Identity connections get their (square) shape too, even though no
    trainable matrix is ever materialized for them.  Raises SemanticError
    for invalid networks.
    """
    validate(net).raise_if_failed()
    return {
        c.id: (net.layer(c.dst).size, net.layer(c.src).size) for c in net.connections
    }


# ---------------------------------------------------------------------------
# file format (yaml)

_LAYER_KEYS = {"name", "size", "aggregation", "activation", "role"}
_CONN_KEYS = {"src", "dst", "delay", "weight"}


def _need(mapping: dict, key: str, where: str):
    if key not in mapping:
        raise ParseError(f"missing key {key!r}", where)
    return mapping[key]


def _as_int(value, where: str) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise ParseError(f"expected an integer, got {value!r}", where)
    return value


def _as_enum(enum_cls, value, where: str):
    try:
        return enum_cls(value)
    except ValueError:
        options = ", ".join(e.value for e in enum_cls)
        raise ParseError(f"expected one of [{options}], got {value!r}", where) from None


def load_network(text: str) -> NetworkDef:
    """Parse a network description document and validate it.

    Structural problems (bad yaml, wrong types, unknown keys) raise
    ParseError with a location; well-formed but invalid networks raise
    SemanticError carrying the full ValidationReport.
    """
    try:
        doc = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        loc = f"line {mark.line + 1}, column {mark.column + 1}" if mark else ""
        raise ParseError(f"not valid yaml: {getattr(exc, 'problem', exc)}", loc) from None

    if not isinstance(doc, dict):
        raise ParseError("document root must be a mapping with 'layers' and 'connections'")
    unknown = set(doc) - {"layers", "connections"}
    if unknown:
        raise ParseError(f"unknown top-level keys: {sorted(unknown)}")

    raw_layers = doc.get("layers")
    if not isinstance(raw_layers, list):
        raise ParseError("'layers' must be a list", "layers")
    raw_conns = doc.get("connections", [])
    if raw_conns is None:
        raw_conns = []
    if not isinstance(raw_conns, list):
        raise ParseError("'connections' must be a list", "connections")

    layers = []
    for i, item in enumerate(raw_layers):
        where = f"layers[{i}]"
        if not isinstance(item, dict):
            raise ParseError("layer entry must be a mapping", where)
        unknown = set(item) - _LAYER_KEYS
        if unknown:
            raise ParseError(f"unknown keys: {sorted(unknown)}", where)
        name = _need(item, "name", where)
        if not isinstance(name, str):
            raise ParseError(f"layer name must be a string, got {name!r}", where)
        layers.append(
            LayerDef(
                id=i,
                name=name,
                size=_as_int(_need(item, "size", where), f"{where}.size"),
                aggregation=_as_enum(
                    Aggregation, item.get("aggregation", "additive"), f"{where}.aggregation"
                ),
                activation=_as_enum(
                    Activation, item.get("activation", "identity"), f"{where}.activation"
                ),
                role=_as_enum(Role, item.get("role", "hidden"), f"{where}.role"),
            )
        )

    conns = []
    for i, item in enumerate(raw_conns):
        where = f"connections[{i}]"
        if not isinstance(item, dict):
            raise ParseError("connection entry must be a mapping", where)
        unknown = set(item) - _CONN_KEYS
        if unknown:
            raise ParseError(f"unknown keys: {sorted(unknown)}", where)
        conns.append(
            ConnectionDef(
                id=i,
                src=_as_int(_need(item, "src", where), f"{where}.src"),
                dst=_as_int(_need(item, "dst", where), f"{where}.dst"),
                delay=_as_int(item.get("delay", 0), f"{where}.delay"),
                weight_kind=_as_enum(WeightKind, item.get("weight", "dense"), f"{where}.weight"),
            )
        )

    net = NetworkDef(layers=tuple(layers), connections=tuple(conns))
    validate(net).raise_if_failed()
    return net


def save_network(net: NetworkDef) -> str:
    """Serialize to the document format load_network reads back.

    Round-trips structurally: load_network(save_network(net)) == net.
    """
    doc = {
        "layers": [
            {
                "name": l.name,
                "size": l.size,
                "aggregation": l.aggregation.value,
                "activation": l.activation.value,
                "role": l.role.value,
            }
            for l in net.layers
        ],
        "connections": [
            {
                "src": c.src,
                "dst": c.dst,
                "delay": c.delay,
                "weight": c.weight_kind.value,
            }
            for c in net.connections
        ],
    }
    return yaml.safe_dump(doc, sort_keys=False)
