"""Immutable knowledge-graph store and the classical graph algorithms the rest
of the package relies on (BFS shells, components, Brandes betweenness).

Distances are always taken on the undirected simple view of the graph.  Edge
direction and relation labels are kept only so subgraphs can be linearized.
"""

from __future__ import annotations

import json
import logging
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from types import MappingProxyType
from typing import Iterable, Mapping

import numpy as np

from .errors import GraphError

logger = logging.getLogger(__name__)

UNREACHABLE = -1


@dataclass(frozen=True, order=True)
class NodeRecord:
    id: int
    name: str
    entity_type: str = ""
    description: str = ""


@dataclass(frozen=True, order=True)
class EdgeRecord:
    src: int
    dst: int
    relation: str = ""


@dataclass(frozen=True)
class IngestStats:
    self_loops_dropped: int = 0
    duplicates_dropped: int = 0


class KnowledgeGraph:
    """Node/edge store with a symmetric adjacency view.

    Construction normalizes the edge list: self-loops and exact duplicate
    ``(src, dst, relation)`` triples are dropped and counted in ``stats``.
    Nodes are held in ascending id order and neighbor lists are sorted, so
    every traversal in the package is deterministic.
    """

    __slots__ = ("_nodes", "_ids", "_index", "_edges", "_adj", "stats")

    def __init__(self, nodes: Iterable[NodeRecord], edges: Iterable[EdgeRecord] = ()):
        by_id: dict[int, NodeRecord] = {}
        for rec in nodes:
            if rec.id in by_id:
                raise GraphError(f"duplicate node id {rec.id}")
            if rec.id < 0:
                raise GraphError(f"node id must be non-negative, got {rec.id}")
            if not rec.name:
                raise GraphError(f"node {rec.id} has an empty name")
            by_id[rec.id] = rec
        if not by_id:
            raise GraphError("a knowledge graph needs at least one node")

        ids = tuple(sorted(by_id))
        self._nodes = MappingProxyType({i: by_id[i] for i in ids})
        self._ids = ids
        self._index = MappingProxyType({nid: k for k, nid in enumerate(ids)})

        seen: set[EdgeRecord] = set()
        loops = dups = 0
        adj: dict[int, set[int]] = {i: set() for i in ids}
        for e in edges:
            for end in (e.src, e.dst):
                if end not in by_id:
                    raise GraphError(f"unknown node {end}")
            if e.src == e.dst:
                loops += 1
                continue
            if e in seen:
                dups += 1
                continue
            seen.add(e)
            adj[e.src].add(e.dst)
            adj[e.dst].add(e.src)
        self._edges = tuple(sorted(seen))
        self._adj = MappingProxyType({i: tuple(sorted(adj[i])) for i in ids})
        self.stats = IngestStats(loops, dups)

    @property
    def node_ids(self) -> tuple[int, ...]:
        return self._ids

    @property
    def nodes(self) -> tuple[NodeRecord, ...]:
        return tuple(self._nodes.values())

    @property
    def edges(self) -> tuple[EdgeRecord, ...]:
        return self._edges

    def __len__(self) -> int:
        return len(self._ids)

    def __contains__(self, node_id: object) -> bool:
        return node_id in self._nodes

    def node(self, node_id: int) -> NodeRecord:
        try:
            return self._nodes[node_id]
        except KeyError:
            raise GraphError(f"unknown node {node_id}") from None

    def index(self, node_id: int) -> int:
        """Position of ``node_id`` in ascending id order."""
        return self._index[node_id]

    def neighbors(self, node_id: int) -> tuple[int, ...]:
        try:
            return self._adj[node_id]
        except KeyError:
            raise GraphError(f"unknown node {node_id}") from None

    def degree(self, node_id: int) -> int:
        return len(self.neighbors(node_id))

    def has_edge(self, u: int, v: int) -> bool:
        return v in self._adj.get(u, ())

    def undirected_edges(self) -> list[tuple[int, int]]:
        """Simple undirected edges ``(u, v)`` with ``u < v``, sorted."""
        return [(u, v) for u in self._ids for v in self._adj[u] if u < v]

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, KnowledgeGraph):
            return NotImplemented
        return self.nodes == other.nodes and self._edges == other._edges

    def __hash__(self) -> int:
        return hash((self.nodes, self._edges))

    def __repr__(self) -> str:
        return f"KnowledgeGraph(n={len(self)}, edges={len(self._edges)})"


def _read_jsonl(path: Path) -> Iterable[tuple[int, dict]]:
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise GraphError(f"{path}:{lineno}: malformed JSON ({exc.msg})") from None
            if not isinstance(obj, dict):
                raise GraphError(f"{path}:{lineno}: expected a JSON object")
            yield lineno, obj


def _int_field(obj: dict, key: str, where: str) -> int:
    val = obj.get(key)
    if not isinstance(val, int) or isinstance(val, bool):
        raise GraphError(f"{where}: field {key!r} must be an integer")
    return val


def load_graph(nodes_path: str | Path, edges_path: str | Path) -> KnowledgeGraph:
    """Read line-delimited JSON node and edge files into a KnowledgeGraph."""
    nodes_path, edges_path = Path(nodes_path), Path(edges_path)
    nodes = []
    for lineno, obj in _read_jsonl(nodes_path):
        where = f"{nodes_path}:{lineno}"
        nid = _int_field(obj, "id", where)
        name = obj.get("name")
        if not isinstance(name, str) or not name:
            raise GraphError(f"{where}: field 'name' must be a non-empty string")
        etype = obj.get("type", "")
        desc = obj.get("description", "")
        if not isinstance(etype, str) or not isinstance(desc, str):
            raise GraphError(f"{where}: 'type' and 'description' must be strings")
        nodes.append(NodeRecord(nid, name, etype, desc))

    edges = []
    for lineno, obj in _read_jsonl(edges_path):
        where = f"{edges_path}:{lineno}"
        rel = obj.get("relation", "")
        if not isinstance(rel, str):
            raise GraphError(f"{where}: field 'relation' must be a string")
        edges.append(EdgeRecord(_int_field(obj, "src", where), _int_field(obj, "dst", where), rel))

    g = KnowledgeGraph(nodes, edges)
    if g.stats.self_loops_dropped or g.stats.duplicates_dropped:
        logger.warning(
            "dropped %d self-loops and %d duplicate edges while loading %s",
            g.stats.self_loops_dropped,
            g.stats.duplicates_dropped,
            edges_path,
        )
    return g


def write_graph(g: KnowledgeGraph, nodes_path: str | Path, edges_path: str | Path) -> None:
    with open(nodes_path, "w", encoding="utf-8") as fh:
        for n in g.nodes:
            rec = {"id": n.id, "name": n.name, "type": n.entity_type, "description": n.description}
            fh.write(json.dumps(rec, ensure_ascii=False) + "\n")
    with open(edges_path, "w", encoding="utf-8") as fh:
        for e in g.edges:
            fh.write(json.dumps({"src": e.src, "dst": e.dst, "relation": e.relation}, ensure_ascii=False) + "\n")


@dataclass(frozen=True)
class DistanceTable:
    """Hop distances from ``source``; unreachable nodes map to UNREACHABLE."""

    source: int
    dist: Mapping[int, int]
    count_at: Mapping[int, int] = field(default_factory=dict)

    def distance(self, node_id: int) -> int:
        return self.dist.get(node_id, UNREACHABLE)

    def shell_size(self, node_id: int) -> int:
        """Number of nodes at the same distance from ``source`` as ``node_id``
        (0 when ``node_id`` is unreachable)."""
        d = self.distance(node_id)
        return 0 if d == UNREACHABLE else self.count_at[d]


def bfs_distances(g: KnowledgeGraph, source: int) -> DistanceTable:
    if source not in g:
        raise GraphError(f"unknown node {source}")
    seen = {source: 0}
    queue = deque([source])
    while queue:
        u = queue.popleft()
        du = seen[u] + 1
        for v in g.neighbors(u):
            if v not in seen:
                seen[v] = du
                queue.append(v)
    count_at: dict[int, int] = {}
    for d in seen.values():
        count_at[d] = count_at.get(d, 0) + 1
    dist = {nid: seen.get(nid, UNREACHABLE) for nid in g.node_ids}
    return DistanceTable(source, MappingProxyType(dist), MappingProxyType(dict(sorted(count_at.items()))))


def all_pairs_distances(g: KnowledgeGraph) -> np.ndarray:
    """Dense ``(N, N)`` hop-distance matrix in ascending id order, UNREACHABLE
    (-1) where no path exists.  Row ``i`` is the BFS from node ``node_ids[i]``."""
    n = len(g)
    ids = g.node_ids
    out = np.full((n, n), UNREACHABLE, dtype=np.int64)
    nbr_idx = [np.array([g.index(v) for v in g.neighbors(u)], dtype=np.int64) for u in ids]
    for s in range(n):
        row = out[s]
        row[s] = 0
        frontier = [s]
        d = 0
        while frontier:
            d += 1
            nxt = []
            for u in frontier:
                for v in nbr_idx[u]:
                    if row[v] == UNREACHABLE:
                        row[v] = d
                        nxt.append(int(v))
            frontier = nxt
    return out


def connected_components(g: KnowledgeGraph, removed: Iterable[int] = ()) -> list[set[int]]:
    """Components of the undirected view, sorted by smallest member.

    Nodes in ``removed`` are treated as deleted (they appear in no component).
    """
    gone = set(removed)
    seen: set[int] = set(gone)
    comps = []
    for start in g.node_ids:
        if start in seen:
            continue
        comp = {start}
        seen.add(start)
        stack = [start]
        while stack:
            u = stack.pop()
            for v in g.neighbors(u):
                if v not in seen:
                    seen.add(v)
                    comp.add(v)
                    stack.append(v)
        comps.append(comp)
    return comps


def component_labels(g: KnowledgeGraph, removed: Iterable[int] = ()) -> dict[int, int]:
    return {nid: k for k, comp in enumerate(connected_components(g, removed)) for nid in comp}


def _brandes_from(g: KnowledgeGraph, s: int, targets: set[int] | None, acc: dict[int, float]) -> None:
    stack = []
    preds: dict[int, list[int]] = {s: []}
    sigma = {s: 1.0}
    dist = {s: 0}
    queue = deque([s])
    while queue:
        v = queue.popleft()
        stack.append(v)
        for w in g.neighbors(v):
            if w not in dist:
                dist[w] = dist[v] + 1
                sigma[w] = 0.0
                preds[w] = []
                queue.append(w)
            if dist[w] == dist[v] + 1:
                sigma[w] += sigma[v]
                preds[w].append(v)
    delta = dict.fromkeys(stack, 0.0)
    while stack:
        w = stack.pop()
        hit = 1.0 if (targets is None or w in targets) else 0.0
        coeff = (hit + delta[w]) / sigma[w]
        for v in preds[w]:
            delta[v] += sigma[v] * coeff
        if w != s:
            acc[w] += delta[w]


def betweenness_centrality(
    g: KnowledgeGraph,
    sources: Iterable[int] | None = None,
    targets: Iterable[int] | None = None,
) -> dict[int, float]:
    """Unnormalized shortest-path betweenness on the undirected view.

    Endpoints are excluded and each unordered pair counts once.  When
    ``sources``/``targets`` are given, only shortest paths between those node
    sets contribute; pass the same set for both to get the betweenness of a
    node with respect to that set (used for bridge detection).  Pairs in
    different components contribute nothing.
    """
    src = list(g.node_ids) if sources is None else sorted(set(sources))
    tgt = None if targets is None else set(targets)
    for nid in src + sorted(tgt or ()):
        if nid not in g:
            raise GraphError(f"unknown node {nid}")
    acc = dict.fromkeys(g.node_ids, 0.0)
    for s in src:
        _brandes_from(g, s, tgt, acc)
    # both orientations of each pair are visited when sources == targets
    symmetric = sources is None and targets is None or (tgt is not None and set(src) == tgt)
    if symmetric:
        for k in acc:
            acc[k] /= 2.0
    return acc


def induced_subgraph(g: KnowledgeGraph, keep: Iterable[int]) -> KnowledgeGraph:
    keep = set(keep)
    for nid in sorted(keep):
        if nid not in g:
            raise GraphError(f"unknown node {nid}")
    nodes = [g.node(i) for i in sorted(keep)]
    edges = [e for e in g.edges if e.src in keep and e.dst in keep]
    return KnowledgeGraph(nodes, edges)
