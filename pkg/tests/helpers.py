"""Small graph builders and hypothesis strategies shared across tests."""

from __future__ import annotations

from collections import deque
from itertools import combinations

import numpy as np
from hypothesis import strategies as st

from auditrag.graph_store import EdgeRecord, KnowledgeGraph, NodeRecord


def make_graph(n: int, edges, names=None) -> KnowledgeGraph:
    nodes = [NodeRecord(i, names[i] if names else f"n{i}", "entity", f"node {i}") for i in range(n)]
    return KnowledgeGraph(nodes, [EdgeRecord(u, v, "link") for u, v in edges])


def path(n: int) -> KnowledgeGraph:
    return make_graph(n, [(i, i + 1) for i in range(n - 1)])


def star(leaves: int) -> KnowledgeGraph:
    return make_graph(leaves + 1, [(0, i) for i in range(1, leaves + 1)])


def complete(n: int) -> KnowledgeGraph:
    return make_graph(n, list(combinations(range(n), 2)))


def cycle(n: int) -> KnowledgeGraph:
    return make_graph(n, [(i, (i + 1) % n) for i in range(n)])


def random_graph(rng: np.random.Generator, n: int, p: float) -> KnowledgeGraph:
    return make_graph(n, [(u, v) for u, v in combinations(range(n), 2) if rng.random() < p])


@st.composite
def graphs(draw, min_nodes: int = 1, max_nodes: int = 9):
    n = draw(st.integers(min_nodes, max_nodes))
    pairs = list(combinations(range(n), 2))
    mask = draw(st.lists(st.booleans(), min_size=len(pairs), max_size=len(pairs)))
    return make_graph(n, [e for e, keep in zip(pairs, mask) if keep])


def bfs_oracle(g: KnowledgeGraph, s: int) -> dict[int, int]:
    """Plain queue BFS, independent of the package."""
    dist = {s: 0}
    q = deque([s])
    while q:
        u = q.popleft()
        for v in g.neighbors(u):
            if v not in dist:
                dist[v] = dist[u] + 1
                q.append(v)
    return dist


def all_shortest_paths(g: KnowledgeGraph, s: int, t: int) -> list[list[int]]:
    """Enumerate every shortest s-t path by DFS over the BFS layering."""
    d = bfs_oracle(g, s)
    if t not in d:
        return []
    out = []

    def walk(p):
        u = p[-1]
        if u == t:
            out.append(list(p))
            return
        for v in g.neighbors(u):
            if d.get(v) == d[u] + 1 and d[v] <= d[t]:
                walk(p + [v])

    walk([s])
    return [p for p in out if len(p) - 1 == d[t]]


def betweenness_oracle(g: KnowledgeGraph, sources=None, targets=None) -> dict[int, float]:
    """Sum over unordered pairs of the fraction of shortest paths through v."""
    ids = g.node_ids
    src = set(sources) if sources is not None else set(ids)
    tgt = set(targets) if targets is not None else set(ids)
    bc = {v: 0.0 for v in ids}
    seen = set()
    for s in ids:
        for t in ids:
            if s == t or (t, s) in seen or not ((s in src and t in tgt) or (t in src and s in tgt)):
                continue
            seen.add((s, t))
            paths = all_shortest_paths(g, s, t)
            for p in paths:
                for v in p[1:-1]:
                    bc[v] += 1.0 / len(paths)
    return bc


def random_pcst_instance(rng, max_nodes: int = 10):
    """Random graph on 1..max_nodes nodes, ~60% of nodes prized in [0, 5),
    uniform edge cost in [0.2, 3)."""
    from auditrag.pcst import PcstInstance

    n = int(rng.integers(1, max_nodes + 1))
    p = rng.uniform(0.15, 0.6)
    g = make_graph(n, [(u, v) for u, v in combinations(range(n), 2) if rng.random() < p])
    prizes = {i: (float(rng.uniform(0, 5)) if rng.random() < 0.6 else 0.0) for i in range(n)}
    return PcstInstance(g, prizes, float(rng.uniform(0.2, 3.0)))


def pcst_optimum_oracle(inst) -> float:
    """Best prize-minus-cost over connected node subsets (a tree on s nodes has
    s - 1 edges), or 0 for the empty solution."""
    g = inst.graph
    ids = list(g.node_ids)
    best = 0.0
    for mask in range(1, 1 << len(ids)):
        sel = {ids[b] for b in range(len(ids)) if mask >> b & 1}
        start = next(iter(sel))
        seen = {start}
        stack = [start]
        while stack:
            u = stack.pop()
            for v in g.neighbors(u):
                if v in sel and v not in seen:
                    seen.add(v)
                    stack.append(v)
        if seen == sel:
            best = max(best, sum(inst.prize(v) for v in sel) - inst.edge_cost * (len(sel) - 1))
    return best


# -- additive encoder oracles ------------------------------------------------


def readout_oracle(model, g: KnowledgeGraph, features: np.ndarray) -> np.ndarray:
    """Per-node representations by the explicit double loop: for every i and
    every j reachable from i, add f(x_j) * rho(1 / (1 + d)) / shell, where
    the shell counts nodes at distance d in i's own BFS. Returns h (N, G, K)."""
    fvals = model.shape_values(features)
    rho = model.rho
    ids = g.node_ids
    h = np.zeros((len(ids), fvals.shape[0], fvals.shape[2]))
    for a, i in enumerate(ids):
        dist = bfs_oracle(g, i)
        shell: dict[int, int] = {}
        for d in dist.values():
            shell[d] = shell.get(d, 0) + 1
        for b, j in enumerate(ids):
            if j in dist:
                d = dist[j]
                h[a] += fvals[:, b, :] * rho(1.0 / (1.0 + d)) / shell[d]
    return h


def random_model(rng, dim: int, n_groups: int, k: int, link: str = "identity", hidden=(5, 4)):
    from auditrag.mgnan import FeatureGrouping, MGnanModel

    m = MGnanModel(FeatureGrouping.contiguous(dim, n_groups), hidden=hidden, n_outputs=k, link=link,
                   n_knots=16, seed=int(rng.integers(1 << 30)))
    m.params["rho.increments"] = m.params["rho.increments"] + rng.normal(0.0, 1.0, 16)
    m.params["rho.base"] = np.array(rng.normal())
    return m


def gradient_check_instance(seed: int) -> float:
    """Worst relative error between analytic and central-difference (step
    1e-4) gradients on one random model and batch; floor 1e-8."""
    from auditrag.mgnan import Sample, batch_loss, loss_and_gradients, random_connected_graph

    rng = np.random.default_rng(seed)
    dim, n_groups, k = int(rng.integers(3, 9)), int(rng.integers(1, 3)), int(rng.integers(1, 4))
    link = ("identity", "sigmoid", "softmax")[seed % 3]
    if link == "softmax":
        k = max(k, 2)
    m = random_model(rng, dim, n_groups, k, link)
    batch = []
    for _ in range(3):
        n = int(rng.integers(1, 8))
        if link == "identity":
            t = rng.normal(size=k)
        elif link == "sigmoid":
            t = rng.random(k)
        else:
            t = np.eye(k)[rng.integers(k)]
        batch.append(Sample(random_connected_graph(n, rng), rng.normal(size=(n, dim)), t))
    _, grads = loss_and_gradients(m, batch)
    analytic = np.concatenate([np.ravel(grads[name]) for name in m.params])
    flat = m.flat_parameters()
    numeric = np.zeros_like(flat)
    for i in range(flat.size):
        p = flat.copy()
        p[i] += 1e-4
        m.set_flat_parameters(p)
        up = batch_loss(m, batch)
        p[i] -= 2e-4
        m.set_flat_parameters(p)
        down = batch_loss(m, batch)
        numeric[i] = (up - down) / 2e-4
    m.set_flat_parameters(flat)
    rel = np.abs(analytic - numeric) / np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-8)
    return float(rel.max())


def decomposition_instance(seed: int) -> tuple[float, float]:
    """(|sum of terms - pre_link_total|, |per-i readout - per-j readout|),
    each the max over channels, for a random model and subgraph with
    N <= 50 and d <= 32 (the subgraph may be disconnected)."""
    from auditrag.mgnan import canonical_sum, encode_features

    rng = np.random.default_rng(seed)
    n = int(rng.integers(1, 51))
    dim = int(rng.integers(1, 33))
    g = random_graph(rng, n, float(rng.uniform(0.0, 4.0 / max(n, 1))))
    m = random_model(rng, dim, int(rng.integers(1, min(dim, 4) + 1)), int(rng.integers(1, 4)), hidden=(8,))
    x = rng.normal(size=(n, dim))
    h, att = encode_features(m, g, x)
    term_gap = float(np.abs(att.terms.sum(axis=(0, 1)) - att.pre_link_total).max())
    per_i = np.stack(list(h.values())).sum(axis=(0, 1))
    order_gap = float(np.abs(per_i - canonical_sum(att.terms)).max())
    return term_gap, order_gap


# -- audit fixture -------------------------------------------------------------

GOLDEN_NODES = [
    (0, "MAPK1", "gene/protein", "mitogen-activated kinase"),
    (1, "MAPK14", "gene/protein", "stress\tkinase"),
    (2, "SB203580", "drug", "p38 inhibitor\nused in research"),
    (3, "inflammation", "disease", ""),
    (4, "apoptosis", "pathway", "programmed cell death"),
    (5, "TP53", "gene/protein", "tumor suppressor"),
]
GOLDEN_EDGES = [
    (2, 1, "targets"), (1, 3, "associated_with"), (0, 4, "participates_in"),
    (1, 4, "participates_in"), (5, 4, "participates_in"), (0, 5, "interacts_with"),
]
# signed channel-0 terms; 3 and 5 tie in magnitude
GOLDEN_TERMS = [0.252, -0.234, 0.05, 0.114, 0.02, 0.114]


def golden_fixture():
    from auditrag.graph_store import EdgeRecord, NodeRecord
    from auditrag.mgnan import Attribution

    g = KnowledgeGraph([NodeRecord(*n) for n in GOLDEN_NODES], [EdgeRecord(*e) for e in GOLDEN_EDGES])
    terms = np.array(GOLDEN_TERMS, dtype=float)[None, :, None]
    att = Attribution(g.node_ids, terms, np.ones(6), terms.copy(), terms.sum(axis=(0, 1)), terms.sum(axis=(0, 1)))
    return g, att


def attribution_from_scores(g: KnowledgeGraph, values) -> "object":
    from auditrag.mgnan import Attribution

    terms = np.asarray(values, dtype=float).reshape(1, len(g), 1)
    total = terms.sum(axis=(0, 1))
    return Attribution(g.node_ids, terms, np.ones(len(g)), terms.copy(), total, total)


def random_connected_graph_for_audit(rng, n: int = 12, dim: int = 32):
    from auditrag.embedding import hash_embedder
    from auditrag.mgnan import random_connected_graph
    from auditrag.mgnan.tasks import NOISE_VOCAB, SIGNAL_VOCAB

    texts = [" ".join(rng.choice(SIGNAL_VOCAB + NOISE_VOCAB, size=3)) for _ in range(n)]
    g = random_connected_graph(n, rng, texts=texts)
    return g, np.stack([hash_embedder(t, dim) for t in texts])
