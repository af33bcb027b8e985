import numpy as np
import pytest

from rnngraph.builders import build_elman, build_lstm
from rnngraph.condense import condense, export_dot, schedule_text, tarjan_scc
from rnngraph.netdef import ConnectionDef, LayerDef, NetworkDef, Role

from oracles import brute_scc, is_acyclic, respects_order


def raw_net(n_nodes, edges):
    """Graph for condensation tests only; sizes/roles are irrelevant here."""
    layers = tuple(LayerDef(i, f"n{i}", 1) for i in range(n_nodes))
    conns = tuple(
        ConnectionDef(i, src=a, dst=b, delay=d) for i, (a, b, d) in enumerate(edges)
    )
    return NetworkDef(layers=layers, connections=conns)


def random_edges(rng, n_nodes, p=0.25, valid=False):
    """Random digraph.  With `valid`, zero-delay edges only run forward so
    the delay-0 subgraph stays acyclic (what validation would demand)."""
    edges = []
    for a in range(n_nodes):
        for b in range(n_nodes):
            if rng.random() < p:
                if valid:
                    delay = int(rng.integers(1, 3)) if b <= a else int(rng.integers(0, 2))
                else:
                    delay = int(rng.integers(0, 3))
                edges.append((a, b, delay))
    return edges


# ---------------------------------------------------------------------------
# tarjan


def test_chain_is_three_singletons():
    net = raw_net(3, [(0, 1, 0), (1, 2, 0)])
    assert tarjan_scc(net) == [(2,), (1,), (0,)]  # reverse topological


def test_delayed_cycle_is_one_component():
    net = raw_net(4, [(0, 1, 0), (1, 2, 0), (2, 1, 1), (2, 3, 0)])
    comps = {frozenset(c) for c in tarjan_scc(net)}
    assert frozenset({1, 2}) in comps
    assert len(comps) == 3


def test_tarjan_emits_reverse_topological_order():
    net = raw_net(5, [(0, 1, 0), (1, 2, 1), (2, 0, 0), (2, 3, 0), (3, 4, 2)])
    comps = tarjan_scc(net)
    index = {lid: i for i, comp in enumerate(comps) for lid in comp}
    for c in net.connections:
        if index[c.src] != index[c.dst]:
            assert index[c.src] > index[c.dst]  # callee (dst side) comes first


def test_long_chain_does_not_recurse():
    n = 5000
    net = raw_net(n, [(i, i + 1, 0) for i in range(n - 1)])
    assert len(tarjan_scc(net)) == n


def test_tarjan_matches_brute_force_on_random_graphs():
    rng = np.random.default_rng(999)
    for _ in range(60):
        n = int(rng.integers(1, 11))
        edges = random_edges(rng, n)
        net = raw_net(n, edges)
        got = {frozenset(c) for c in tarjan_scc(net)}
        want = brute_scc(n, [(a, b) for a, b, _ in edges])
        assert got == want


# ---------------------------------------------------------------------------
# condensation


def test_self_loop_singleton_is_recurrent():
    net = raw_net(2, [(0, 0, 1), (0, 1, 0)])
    cg = condense(net)
    kinds = {tuple(n.members): n.recurrent for n in cg.nodes}
    assert kinds[(0,)] is True
    assert kinds[(1,)] is False


def test_partition_covers_every_layer_once():
    rng = np.random.default_rng(7)
    for _ in range(30):
        n = int(rng.integers(1, 11))
        net = raw_net(n, random_edges(rng, n, valid=True))
        cg = condense(net)
        seen = [lid for node in cg.nodes for lid in node.members]
        assert sorted(seen) == list(range(n))
        assert all(cg.node_of_layer[lid] == i for i, node in enumerate(cg.nodes) for lid in node.members)


def test_condensation_is_acyclic_and_topo_order_respects_edges():
    rng = np.random.default_rng(21)
    for _ in range(40):
        n = int(rng.integers(2, 11))
        net = raw_net(n, random_edges(rng, n, valid=True))
        cg = condense(net)
        dag = {
            (cg.node_of_layer[net.connection(c).src], cg.node_of_layer[net.connection(c).dst])
            for c in cg.edges
        }
        assert is_acyclic(len(cg.nodes), dag)
        assert respects_order(cg.topo_order, dag)


def test_internal_order_is_zero_delay_topological():
    net = raw_net(3, [(0, 1, 0), (1, 2, 0), (2, 0, 1)])
    cg = condense(net)
    [node] = cg.nodes
    assert node.members == (0, 1, 2)
    assert node.recurrent
    assert node.internal_order == (0, 1, 2)


def test_topo_tie_break_is_min_layer_id():
    # diamond: 0 -> {1, 2} -> 3; 1 and 2 are free to swap, ids must decide
    net = raw_net(4, [(0, 1, 0), (0, 2, 0), (1, 3, 0), (2, 3, 0)])
    cg = condense(net)
    names = [cg.nodes[i].members[0] for i in cg.topo_order]
    assert names == [0, 1, 2, 3]


def test_condense_deterministic_under_connection_relabeling():
    edges = [(0, 1, 0), (0, 2, 0), (1, 3, 0), (2, 3, 0), (3, 1, 2)]
    nets = [raw_net(4, edges), raw_net(4, list(reversed(edges)))]
    results = [condense(n) for n in nets]
    assert [results[0].nodes[i].members for i in results[0].topo_order] == [
        results[1].nodes[i].members for i in results[1].topo_order
    ]


def test_frontier_levels_group_by_longest_path():
    net = raw_net(4, [(0, 1, 0), (0, 2, 0), (1, 3, 0), (2, 3, 0)])
    cg = condense(net)
    levels = [
        [cg.nodes[i].members for i in group] for group in cg.frontier_levels
    ]
    assert levels == [[(0,)], [(1,), (2,)], [(3,)]]


def test_frontier_levels_are_antichains():
    rng = np.random.default_rng(5)
    for _ in range(20):
        n = int(rng.integers(2, 11))
        net = raw_net(n, random_edges(rng, n, valid=True))
        cg = condense(net)
        dag = {
            (cg.node_of_layer[net.connection(c).src], cg.node_of_layer[net.connection(c).dst])
            for c in cg.edges
        }
        level_of = {i: lv for lv, group in enumerate(cg.frontier_levels) for i in group}
        for a, b in dag:
            assert level_of[b] >= level_of[a] + 1


# ---------------------------------------------------------------------------
# builder graphs


def test_elman_condenses_to_recurrent_hidden():
    net = build_elman(2, 3, 2)
    cg = condense(net)
    rec = [n for n in cg.nodes if n.recurrent]
    assert len(rec) == 1
    assert [net.layer(l).name for l in rec[0].members] == ["hidden"]


def test_lstm_has_exactly_one_nonsingleton_recurrent_node():
    net = build_lstm(3, 4, 3)
    cg = condense(net)
    rec = [n for n in cg.nodes if n.recurrent]
    assert len(rec) == 1
    names = {net.layer(l).name for l in rec[0].members}
    assert names == {"in_gate", "forget_gate", "in_prod", "forget_prod", "cell"}
    # gating must happen before the cell sum within a frame
    order = [net.layer(l).name for l in rec[0].internal_order]
    assert order.index("in_gate") < order.index("in_prod") < order.index("cell")
    assert order.index("forget_gate") < order.index("forget_prod") < order.index("cell")


def test_empty_graph_exports_empty_dot():
    net = NetworkDef(layers=(), connections=())
    dot = export_dot(condense(net), net)
    assert dot.startswith("digraph")
    assert "->" not in dot


def test_dot_marks_delays_clusters_and_identity_edges():
    net = build_lstm(2, 3, 2)
    dot = export_dot(condense(net), net)
    assert "subgraph cluster_" in dot
    assert 'style=dashed, label="1"' in dot
    assert "penwidth=0.5" in dot
    assert dot.count("->") == len(net.connections)


def test_schedule_text_lists_every_layer():
    net = build_lstm(2, 3, 2)
    text = schedule_text(condense(net), net)
    for l in net.layers:
        assert l.name in text
    assert "recurrent, frame-sequential" in text
    assert "chunk-batched" in text
