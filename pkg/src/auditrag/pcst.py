"""Unrooted prize-collecting Steiner tree with uniform edge costs.

``solve_pcst`` runs Goemans-Williamson moat growth without a root: every node
with a positive prize starts as an active moat, moats grow at unit rate, an
edge joins two components once the moats on both sides pay its cost, and a
component goes inactive when its collected prize is used up.  The resulting
forest is then strongly pruned: for every tree we keep its best connected
subtree, found exactly by a rooted net-worth dynamic program, and the solution
is the best of those subtrees.

``brute_force_pcst`` enumerates node subsets and is only meant as a test
oracle on tiny instances.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping

import numpy as np

from .errors import GraphError
from .graph_store import KnowledgeGraph

BRUTE_FORCE_LIMIT = 12
_TIE = 1e-9


@dataclass(frozen=True)
class PcstInstance:
    graph: KnowledgeGraph
    prizes: Mapping[int, float] = field(default_factory=dict)
    edge_cost: float = 1.0

    def __post_init__(self):
        if not self.edge_cost > 0:
            raise ValueError("edge_cost must be positive")
        for nid, p in self.prizes.items():
            if nid not in self.graph:
                raise GraphError(f"prize given for unknown node {nid}")
            if not p >= 0 or not math.isfinite(p):
                raise ValueError(f"prize of node {nid} must be a finite non-negative number")

    def prize(self, node_id: int) -> float:
        return float(self.prizes.get(node_id, 0.0))


@dataclass(frozen=True)
class PcstSolution:
    nodes: frozenset[int]
    edges: tuple[tuple[int, int], ...]
    objective: float
    # full GW forest before pruning, for inspection
    forest: tuple[tuple[int, int], ...] = ()

    def node_list(self) -> list[int]:
        return sorted(self.nodes)


def solution_objective(inst: PcstInstance, nodes: Iterable[int], n_edges: int) -> float:
    return math.fsum(inst.prize(v) for v in sorted(nodes)) - inst.edge_cost * n_edges


def _better(obj: float, key: tuple, best_obj: float, best_key: tuple) -> bool:
    scale = max(1.0, abs(obj), abs(best_obj))
    if obj > best_obj + _TIE * scale:
        return True
    if obj < best_obj - _TIE * scale:
        return False
    return key < best_key


def _moat_growth(inst: PcstInstance) -> list[tuple[int, int]]:
    g = inst.graph
    ids = np.array(g.node_ids)
    n = len(ids)
    cost = inst.edge_cost
    und = g.undirected_edges()
    eu = np.array([g.index(u) for u, _ in und], dtype=np.int64)
    ev = np.array([g.index(v) for _, v in und], dtype=np.int64)

    comp = np.arange(n)
    members = {i: [i] for i in range(n)}
    potential = np.array([inst.prize(int(i)) for i in ids], dtype=float)
    active = potential > 0
    load = np.zeros(n)  # total moat width covering each node
    tol = 1e-12 * max(1.0, cost)
    forest: list[tuple[int, int]] = []

    while active.any():
        cu, cv = comp[eu], comp[ev]
        rate = active[cu].astype(float) + active[cv].astype(float)
        live = (cu != cv) & (rate > 0)
        t_edge = np.inf
        if live.any():
            slack = np.maximum(cost - load[eu[live]] - load[ev[live]], 0.0)
            times = slack / rate[live]
            t_edge = times.min()
        act_comps = np.flatnonzero(active)
        t_deact = potential[act_comps].min()
        dt = min(t_edge, t_deact)

        grow = active[comp]
        load[grow] += dt
        potential[act_comps] -= dt

        if t_edge <= t_deact + tol:
            # among simultaneous tight edges take the one touching the
            # smallest component representatives
            cand = np.flatnonzero(live)[times <= t_edge + tol]
            reps = [(min(cu[k], cv[k]), max(cu[k], cv[k]), eu[k], ev[k], k) for k in cand]
            _, _, a, b, _ = min(reps)
            ca, cb = comp[a], comp[b]
            keep, drop = min(ca, cb), max(ca, cb)
            pot = max(potential[ca], 0.0) + max(potential[cb], 0.0)
            for m in members.pop(drop):
                comp[m] = keep
                members[keep].append(m)
            potential[drop] = 0.0
            active[drop] = False
            potential[keep] = pot
            active[keep] = pot > tol
            forest.append((int(ids[a]), int(ids[b])))
        else:
            order = act_comps[np.argsort(potential[act_comps], kind="stable")]
            c = order[0]
            potential[c] = 0.0
            active[c] = False
    return sorted((min(e), max(e)) for e in forest)


def _best_subtree(inst: PcstInstance, tree_nodes: list[int], adj: dict[int, list[int]]):
    """Max-value connected subtree of one tree (prize minus edge cost)."""
    cost = inst.edge_cost
    root = min(tree_nodes)
    parent = {root: None}
    order = [root]
    for u in order:
        for v in adj[u]:
            if v not in parent:
                parent[v] = u
                order.append(v)
    worth: dict[int, float] = {}
    kept_children: dict[int, list[int]] = {}
    for u in reversed(order):
        total = inst.prize(u)
        kids = []
        for v in adj[u]:
            if parent.get(v) == u and worth[v] - cost > 0:
                total += worth[v] - cost
                kids.append(v)
        worth[u] = total
        kept_children[u] = kids

    best = None
    for top in order:
        nodes = []
        stack = [top]
        while stack:
            u = stack.pop()
            nodes.append(u)
            stack.extend(kept_children[u])
        nodes.sort()
        obj = solution_objective(inst, nodes, len(nodes) - 1)
        key = tuple(nodes)
        if best is None or _better(obj, key, best[0], best[1]):
            best = (obj, key, top)
    obj, key, top = best
    edges = []
    stack = [top]
    while stack:
        u = stack.pop()
        for v in kept_children[u]:
            edges.append((min(u, v), max(u, v)))
            stack.append(v)
    return obj, key, tuple(sorted(edges))


def solve_pcst(inst: PcstInstance) -> PcstSolution:
    forest = _moat_growth(inst)
    adj: dict[int, list[int]] = {v: [] for v in inst.graph.node_ids}
    for u, v in forest:
        adj[u].append(v)
        adj[v].append(u)
    for v in adj:
        adj[v].sort()

    best_obj, best_key, best_edges = 0.0, (), ()
    seen: set[int] = set()
    for start in inst.graph.node_ids:
        if start in seen:
            continue
        tree = [start]
        seen.add(start)
        for u in tree:
            for v in adj[u]:
                if v not in seen:
                    seen.add(v)
                    tree.append(v)
        obj, key, edges = _best_subtree(inst, tree, adj)
        if _better(obj, key, best_obj, best_key):
            best_obj, best_key, best_edges = obj, key, edges
    return PcstSolution(frozenset(best_key), best_edges, best_obj, tuple(forest))


def _spanning_tree(g: KnowledgeGraph, nodes: list[int]) -> tuple[tuple[int, int], ...] | None:
    """BFS spanning tree of the subgraph induced by ``nodes``; None if disconnected."""
    keep = set(nodes)
    root = nodes[0]
    seen = {root}
    queue = [root]
    edges = []
    for u in queue:
        for v in g.neighbors(u):
            if v in keep and v not in seen:
                seen.add(v)
                queue.append(v)
                edges.append((min(u, v), max(u, v)))
    if len(seen) != len(keep):
        return None
    return tuple(sorted(edges))


def brute_force_pcst(inst: PcstInstance) -> PcstSolution:
    """Exact optimum by subset enumeration; ties go to the lexicographically
    smallest sorted node tuple (the empty solution is the smallest)."""
    ids = list(inst.graph.node_ids)
    if len(ids) > BRUTE_FORCE_LIMIT:
        raise ValueError(f"brute force limited to {BRUTE_FORCE_LIMIT} nodes, got {len(ids)}")
    best_obj, best_key, best_edges = 0.0, (), ()
    for mask in range(1, 1 << len(ids)):
        nodes = [ids[b] for b in range(len(ids)) if mask >> b & 1]
        edges = _spanning_tree(inst.graph, nodes)
        if edges is None:
            continue
        obj = solution_objective(inst, nodes, len(edges))
        key = tuple(nodes)
        if _better(obj, key, best_obj, best_key):
            best_obj, best_key, best_edges = obj, key, edges
    return PcstSolution(frozenset(best_key), best_edges, best_obj)


def is_feasible(inst: PcstInstance, sol: PcstSolution) -> bool:
    """Edges lie in the graph, touch only selected nodes and form a forest."""
    g = inst.graph
    for u, v in sol.edges:
        if not g.has_edge(u, v) or u not in sol.nodes or v not in sol.nodes:
            return False
    if len(set(sol.edges)) != len(sol.edges):
        return False
    # union-find: a cycle shows up as an edge inside one set
    parent = {v: v for v in sol.nodes}

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    trees = len(sol.nodes)
    for u, v in sol.edges:
        ru, rv = find(u), find(v)
        if ru == rv:
            return False
        parent[ru] = rv
        trees -= 1
    return len(sol.edges) == len(sol.nodes) - trees
