"""Condensation of the layer graph into an executable schedule.

Strongly connected components (over *all* connections, delayed or not)
become supernodes.  A supernode is *recurrent* when it has two or more
members or a self-loop; everything else is a simple node whose whole chunk
of frames can be evaluated in one batched step.  The condensation is a DAG
by construction, so a topological order over supernodes plus a zero-delay
topological order inside each recurrent supernode is a complete execution
schedule:

* simple supernodes are evaluated once per chunk, all frames at once;
* recurrent supernodes are stepped frame by frame, members in internal
  order, delayed terms reading previously written history.

Frontier levels group supernodes by longest path from any source; nodes in
one level have no edges among themselves, so they are independent work.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass, field

from .netdef import NetworkDef, Role, WeightKind

__all__ = ["SuperNode", "CondensedGraph", "tarjan_scc", "condense", "export_dot", "schedule_text"]


@dataclass(frozen=True)
class SuperNode:
    """One condensation node: a maximal set of mutually reachable layers."""

    members: tuple[int, ...]  # layer ids, ascending
    recurrent: bool
    internal_order: tuple[int, ...]  # zero-delay topological order of members


@dataclass(frozen=True)
class CondensedGraph:
    nodes: tuple[SuperNode, ...]
    edges: tuple[int, ...]  # ids of connections crossing supernode boundaries
    topo_order: tuple[int, ...]  # node indices, sources first
    frontier_levels: tuple[tuple[int, ...], ...]  # node indices by longest path
    node_of_layer: dict[int, int] = field(compare=False)

    def node_for(self, layer_id: int) -> SuperNode:
        return self.nodes[self.node_of_layer[layer_id]]


def tarjan_scc(net: NetworkDef) -> list[tuple[int, ...]]:
    """Strongly connected components, iteratively, emitted in reverse
    topological order of the condensation (callees before callers).

    Explicit work stack instead of recursion so pathological chains do not
    hit the interpreter's recursion limit.  Members ascend within each
    component.
    """
    index: dict[int, int] = {}
    lowlink: dict[int, int] = {}
    on_stack: set[int] = set()
    stack: list[int] = []
    counter = 0
    sccs: list[tuple[int, ...]] = []

    succ = {
        l.id: tuple(net.connection(c).dst for c in net.posterior(l.id))
        for l in net.layers
    }

    for root in (l.id for l in net.layers):
        if root in index:
            continue
        # Each work item: (node, next successor position to try).
        work: list[tuple[int, int]] = [(root, 0)]
        while work:
            node, i = work.pop()
            if i == 0:
                index[node] = lowlink[node] = counter
                counter += 1
                stack.append(node)
                on_stack.add(node)
            recurse = False
            targets = succ[node]
            while i < len(targets):
                nxt = targets[i]
                i += 1
                if nxt not in index:
                    work.append((node, i))
                    work.append((nxt, 0))
                    recurse = True
                    break
                if nxt in on_stack:
                    lowlink[node] = min(lowlink[node], index[nxt])
            if recurse:
                continue
            if lowlink[node] == index[node]:
                comp = []
                while True:
                    w = stack.pop()
                    on_stack.discard(w)
                    comp.append(w)
                    if w == node:
                        break
                sccs.append(tuple(sorted(comp)))
            if work:
                parent = work[-1][0]
                lowlink[parent] = min(lowlink[parent], lowlink[node])
    return sccs


def _kahn(n_nodes: int, edges: set[tuple[int, int]], tie_key) -> list[int]:
    """Kahn's algorithm with a heap tie-break; raises if a cycle remains."""
    indeg = [0] * n_nodes
    out: list[list[int]] = [[] for _ in range(n_nodes)]
    for a, b in sorted(edges):
        out[a].append(b)
        indeg[b] += 1
    ready = [(tie_key(i), i) for i in range(n_nodes) if indeg[i] == 0]
    heapq.heapify(ready)
    order: list[int] = []
    while ready:
        _, node = heapq.heappop(ready)
        order.append(node)
        for nxt in out[node]:
            indeg[nxt] -= 1
            if indeg[nxt] == 0:
                heapq.heappush(ready, (tie_key(nxt), nxt))
    if len(order) != n_nodes:
        leftover = [i for i in range(n_nodes) if indeg[i] > 0]
        raise ValueError(f"cycle among nodes {leftover}")
    return order


def condense(net: NetworkDef) -> CondensedGraph:
    """Build supernodes, schedule order, and frontier levels.

    Assumes the network validates (in particular: every cycle carries a
    delay, so the zero-delay order inside a component exists).
    """
    sccs = tarjan_scc(net)
    node_of_layer: dict[int, int] = {}
    for i, comp in enumerate(sccs):
        for layer_id in comp:
            node_of_layer[layer_id] = i

    self_loop = {c.src for c in net.connections if c.src == c.dst}

    nodes: list[SuperNode] = []
    for comp in sccs:
        members = set(comp)
        recurrent = len(comp) > 1 or comp[0] in self_loop
        # Zero-delay topological order over members; delayed edges read
        # history, so they impose no same-frame ordering.
        local = {lid: k for k, lid in enumerate(comp)}
        edges0 = {
            (local[c.src], local[c.dst])
            for c in net.connections
            if c.delay == 0 and c.src in members and c.dst in members
        }
        order = _kahn(len(comp), edges0, tie_key=lambda k: comp[k])
        nodes.append(
            SuperNode(
                members=comp,
                recurrent=recurrent,
                internal_order=tuple(comp[k] for k in order),
            )
        )

    cross = tuple(
        c.id for c in net.connections if node_of_layer[c.src] != node_of_layer[c.dst]
    )
    dag_edges = {(node_of_layer[net.connection(c).src], node_of_layer[net.connection(c).dst]) for c in cross}

    def min_member(i: int) -> int:
        return nodes[i].members[0] if nodes[i].members else -1

    topo = _kahn(len(nodes), dag_edges, tie_key=min_member)

    # Longest-path layering: level(v) = 1 + max(level(preds)), sources at 0.
    level = [0] * len(nodes)
    for v in topo:
        for a, b in dag_edges:
            if b == v:
                level[v] = max(level[v], level[a] + 1)
    by_level: dict[int, list[int]] = {}
    for i, lv in enumerate(level):
        by_level.setdefault(lv, []).append(i)
    frontier = tuple(
        tuple(sorted(by_level[lv], key=min_member)) for lv in sorted(by_level)
    ) if nodes else ()

    return CondensedGraph(
        nodes=tuple(nodes),
        edges=cross,
        topo_order=tuple(topo),
        frontier_levels=frontier,
        node_of_layer=node_of_layer,
    )


def export_dot(cg: CondensedGraph, net: NetworkDef) -> str:
    """Graphviz rendering: recurrent supernodes as clusters, delayed edges
    dashed and labeled with their delay, identity weights thin."""
    out = ["digraph network {"]
    if net.layers:
        out.append("  rankdir=LR;")
        out.append('  node [shape=box, fontname="Helvetica"];')

    def node_attrs(lid: int) -> str:
        l = net.layer(lid)
        shape = {Role.INPUT: "ellipse", Role.OUTPUT: "doubleoctagon"}.get(l.role, "box")
        label = f"{l.name}\\n{l.size} {l.activation.value}"
        if l.aggregation.value != "additive":
            label += f" ({l.aggregation.value})"
        return f'l{lid} [label="{label}", shape={shape}];'

    clustered: set[int] = set()
    for i, node in enumerate(cg.nodes):
        if node.recurrent:
            out.append(f"  subgraph cluster_{i} {{")
            out.append('    label="recurrent"; style=rounded; color=gray40;')
            for lid in node.members:
                out.append("    " + node_attrs(lid))
                clustered.add(lid)
            out.append("  }")
    for l in net.layers:
        if l.id not in clustered:
            out.append("  " + node_attrs(l.id))

    for c in net.connections:
        attrs = []
        if c.delay > 0:
            attrs.append("style=dashed")
            attrs.append(f'label="{c.delay}"')
        if c.weight_kind is WeightKind.IDENTITY:
            attrs.append("penwidth=0.5")
        else:
            attrs.append("penwidth=1.5")
        out.append(f"  l{c.src} -> l{c.dst} [{', '.join(attrs)}];")
    out.append("}")
    return "\n".join(out) + "\n"


def schedule_text(cg: CondensedGraph, net: NetworkDef) -> str:
    """Human-readable execution schedule (what the engine will run)."""
    lines = ["execution schedule (supernodes in topological order):"]
    for pos, i in enumerate(cg.topo_order):
        node = cg.nodes[i]
        names = ", ".join(net.layer(l).name for l in node.internal_order)
        kind = "recurrent, frame-sequential" if node.recurrent else "simple, chunk-batched"
        lines.append(f"  {pos}: [{kind}] {names}")
    lines.append("frontier levels (independent within a level):")
    for lv, group in enumerate(cg.frontier_levels):
        names = "; ".join(
            "{" + ", ".join(net.layer(l).name for l in cg.nodes[i].members) + "}"
            for i in group
        )
        lines.append(f"  level {lv}: {names}")
    return "\n".join(lines) + "\n"
