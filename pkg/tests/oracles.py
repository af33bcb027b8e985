"""Independent reference implementations used to derive expected values.

Everything here is deliberately written without the package's compute
paths: plain python loops and straight numpy expressions.  These oracles
pin down expected values; the production code must come to them.
"""

from __future__ import annotations

import numpy as np


# ---------------------------------------------------------------------------
# linear algebra


def naive_gemm_accum(a, b, c, transpose_a=False):
    """c[i,j] += sum_k op(a)[i,k] * b[k,j], k ascending, accumulating term
    by term directly into c (the exact update order the kernels promise)."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    out = np.array(c, dtype=np.float64, copy=True)
    op = a.T if transpose_a else a
    m, kdim = op.shape
    n = b.shape[1]
    for i in range(m):
        for k in range(kdim):
            for j in range(n):
                out[i, j] += op[i, k] * b[k, j]
    return out


def central_diff(fn, x, step):
    return (fn(x + step) - fn(x - step)) / (2.0 * step)


# ---------------------------------------------------------------------------
# graph theory


def brute_scc(n_nodes: int, edges) -> set[frozenset]:
    """SCCs by transitive closure: u ~ v iff u == v or each reaches the
    other.  Quadratic-ish, fine for <= 10 nodes."""
    reach = [set() for _ in range(n_nodes)]
    adj = [[] for _ in range(n_nodes)]
    for a, b in edges:
        adj[a].append(b)
    for start in range(n_nodes):
        stack = list(adj[start])
        while stack:
            v = stack.pop()
            if v not in reach[start]:
                reach[start].add(v)
                stack.extend(adj[v])
    comps = set()
    for v in range(n_nodes):
        comp = {v} | {u for u in range(n_nodes) if v in reach[u] and u in reach[v]}
        comps.add(frozenset(comp))
    return comps


def is_acyclic(n_nodes: int, edges) -> bool:
    """Kahn's algorithm as an order-free acyclicity oracle."""
    indeg = [0] * n_nodes
    out = [[] for _ in range(n_nodes)]
    for a, b in set(edges):
        out[a].append(b)
        indeg[b] += 1
    ready = [i for i in range(n_nodes) if indeg[i] == 0]
    seen = 0
    while ready:
        v = ready.pop()
        seen += 1
        for w in out[v]:
            indeg[w] -= 1
            if indeg[w] == 0:
                ready.append(w)
    return seen == n_nodes


def respects_order(order, edges) -> bool:
    pos = {v: i for i, v in enumerate(order)}
    return all(pos[a] < pos[b] for a, b in edges)


# ---------------------------------------------------------------------------
# hand-coded recurrences (mirror the builder wiring, not the engine)


def _sigmoid(v):
    return 1.0 / (1.0 + np.exp(-v))


def _softmax(v):
    e = np.exp(v - v.max())
    return e / e.sum()


def elman_forward(net, weights, xs, *, bias=True):
    """h(t) = tanh(Wxh x + Whh h(t-1) [+ bh]); y = softmax(Why h [+ by]).

    Weight matrices are read from the trained parameter store by layer
    name; the recurrence itself is straight numpy.
    """

    def W(src, dst):
        return weights.w[net.find_connection(src, dst).id]

    wxh, whh, why = W("in", "hidden"), W("hidden", "hidden"), W("hidden", "out")
    ones = np.ones(1)
    bh = W("bias", "hidden") @ ones if bias else 0.0
    by = W("bias", "out") @ ones if bias else 0.0
    h = np.zeros(whh.shape[0])
    hs, ys = [], []
    for x in xs:
        h = np.tanh(wxh @ x + whh @ h + bh)
        ys.append(_softmax(why @ h + by))
        hs.append(h)
    return np.array(hs), np.array(ys)


def lstm_forward(net, weights, xs, *, peepholes=True, forget=True, bias=True,
                 output_peephole_delay=0):
    """Peephole LSTM recurrence with full-matrix peepholes, zero initial
    cell state, gates biased through the constant-one layer.

        g = tanh(Wg x + bg)
        i = sigm(Wi x + bi + Pi c_prev)
        f = sigm(Wf x + bf + Pf c_prev)
        c = c_prev (* f when gated) + g * i
        o = sigm(Wo x + bo + Po c')        c' = c or c_prev per delay flag
        block = tanh(c) * o
        y = softmax(Wy block + by)
    """

    def W(src, dst):
        return weights.w[net.find_connection(src, dst).id]

    ones = np.ones(1)

    def B(dst):
        return W("bias", dst) @ ones if bias else 0.0

    k = net.find_layer("cell").size
    c_prev = np.zeros(k)
    trace = {name: [] for name in ("g", "i", "f", "c", "ca", "o", "block", "y")}
    for x in xs:
        g = np.tanh(W("in", "cell_in") @ x + B("cell_in"))
        zi = W("in", "in_gate") @ x + B("in_gate")
        if peepholes:
            zi = zi + W("cell", "in_gate") @ c_prev
        i = _sigmoid(zi)
        if forget:
            zf = W("in", "forget_gate") @ x + B("forget_gate")
            if peepholes:
                zf = zf + W("cell", "forget_gate") @ c_prev
            f = _sigmoid(zf)
            c = c_prev * f + g * i
        else:
            f = np.ones(k)
            c = c_prev + g * i
        ca = np.tanh(c)
        zo = W("in", "out_gate") @ x + B("out_gate")
        if peepholes:
            zo = zo + W("cell", "out_gate") @ (c_prev if output_peephole_delay else c)
        o = _sigmoid(zo)
        block = ca * o
        y = _softmax(W("out_prod", "out") @ block + B("out"))
        for name, val in (("g", g), ("i", i), ("f", f), ("c", c), ("ca", ca),
                          ("o", o), ("block", block), ("y", y)):
            trace[name].append(val)
        c_prev = c
    return {name: np.array(vals) for name, vals in trace.items()}
