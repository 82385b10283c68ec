"""Question-specific subgraph construction: seed selection, single-hop or
frontier-pruned multi-hop expansion, then PCST plus top-similarity merge."""

from __future__ import annotations

import enum
import json
from dataclasses import asdict, dataclass, field
from typing import Iterable, Mapping

from .embedding import EmbeddingStore, QueryEmbedding, rank_by_similarity, top_k_similar
from .errors import ConfigError, GraphError
from .graph_store import KnowledgeGraph, induced_subgraph
from .pcst import PcstInstance, PcstSolution, solve_pcst


class Mode(str, enum.Enum):
    SINGLE_HOP = "single"
    MULTI_HOP = "multi"


class Provenance(str, enum.Enum):
    SEED = "SEED"
    PCST = "PCST"
    MERGE = "MERGE"
    BOTH = "BOTH"


@dataclass(frozen=True)
class RetrievalConfig:
    k_seeds: int = 4
    hops: int = 3
    k_frontier: int | None = 5  # None disables frontier pruning
    prize_pool: int = 100
    merge_pool: int = 200
    edge_cost: float = 1.0
    prize_scale: float = 1.0
    prize_scheme: str = "rank"  # "rank" or "similarity"

    def __post_init__(self):
        for name in ("k_seeds", "hops", "prize_pool", "merge_pool"):
            val = getattr(self, name)
            if not isinstance(val, int) or val < 1:
                raise ConfigError(f"{name} must be a positive integer, got {val!r}")
        if self.k_frontier is not None and (not isinstance(self.k_frontier, int) or self.k_frontier < 1):
            raise ConfigError(f"k_frontier must be a positive integer, got {self.k_frontier!r}")
        if not self.edge_cost > 0:
            raise ConfigError("edge_cost must be positive")
        if not self.prize_scale > 0:
            raise ConfigError("prize_scale must be positive")
        if self.prize_scheme not in ("rank", "similarity"):
            raise ConfigError(f"unknown prize_scheme {self.prize_scheme!r}")


@dataclass(frozen=True)
class RetrievedSubgraph:
    graph: KnowledgeGraph
    seeds: tuple[int, ...]
    similarity: Mapping[int, float]
    provenance: Mapping[int, Provenance]
    qid: str = ""
    pcst: PcstSolution | None = field(default=None, compare=False)

    def to_dict(self) -> dict:
        g = self.graph
        return {
            "qid": self.qid,
            "nodes": [
                {
                    "id": n.id,
                    "name": n.name,
                    "type": n.entity_type,
                    "similarity": self.similarity[n.id],
                    "provenance": self.provenance[n.id].value,
                }
                for n in g.nodes
            ],
            "edges": [{"src": e.src, "dst": e.dst, "relation": e.relation} for e in g.edges],
            "seeds": list(self.seeds),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, ensure_ascii=False) + "\n"

    @classmethod
    def from_dict(cls, obj: dict, kg: KnowledgeGraph) -> "RetrievedSubgraph":
        """Rebuild from serialized form; node text comes from the source ``kg``
        and every listed edge must exist there."""
        ids = [n["id"] for n in obj["nodes"]]
        sub = induced_subgraph(kg, ids)
        listed = {(e["src"], e["dst"], e["relation"]) for e in obj["edges"]}
        have = {(e.src, e.dst, e.relation) for e in sub.edges}
        if listed - have:
            raise GraphError(f"subgraph {obj.get('qid')!r} lists edges absent from the graph")
        if listed != have:
            sub = type(sub)(sub.nodes, [e for e in sub.edges if (e.src, e.dst, e.relation) in listed])
        return cls(
            graph=sub,
            seeds=tuple(obj["seeds"]),
            similarity={n["id"]: float(n["similarity"]) for n in obj["nodes"]},
            provenance={n["id"]: Provenance(n["provenance"]) for n in obj["nodes"]},
            qid=obj.get("qid", ""),
        )


def select_seeds(kg: KnowledgeGraph, store: EmbeddingStore, q: QueryEmbedding, cfg: RetrievalConfig) -> list[int]:
    return [nid for nid, _ in top_k_similar(store, q, cfg.k_seeds, kg.node_ids)]


def expand_single_hop(kg: KnowledgeGraph, seeds: Iterable[int]) -> set[int]:
    seeds = list(seeds)
    if not seeds:
        raise ValueError("expansion needs at least one seed")
    pool = set(seeds)
    for s in seeds:
        pool.update(kg.neighbors(s))
    return pool


def expand_multi_hop(
    kg: KnowledgeGraph,
    store: EmbeddingStore,
    q: QueryEmbedding,
    seeds: Iterable[int],
    cfg: RetrievalConfig,
) -> set[int]:
    """Breadth-limited expansion: each node reached in the previous round keeps
    only its ``k_frontier`` most query-similar neighbors, and kept neighbors
    not yet in the pool join it and form the next frontier.

    The kept set of a node does not depend on what is already in the pool, so
    the result is the ``hops``-ball around the seeds in the pruned neighbor
    digraph: order-independent and monotone in ``k_frontier``.
    """
    seeds = list(seeds)
    if not seeds:
        raise ValueError("expansion needs at least one seed")
    sims: dict[int, float] = {}
    pool = set(seeds)
    frontier = sorted(pool)
    for _ in range(cfg.hops):
        fresh: set[int] = set()
        for u in frontier:
            nbrs = kg.neighbors(u)
            if not nbrs:
                continue
            missing = [v for v in nbrs if v not in sims]
            if missing:
                sims.update(store.similarities(q, missing))
            ranked = rank_by_similarity({v: sims[v] for v in nbrs})
            if cfg.k_frontier is not None:
                ranked = ranked[: cfg.k_frontier]
            fresh.update(v for v, _ in ranked if v not in pool)
        if not fresh:
            break
        pool |= fresh
        frontier = sorted(fresh)
    return pool


def assign_prizes(ranked: list[tuple[int, float]], cfg: RetrievalConfig) -> dict[int, float]:
    """Prizes for the top ``prize_pool`` of a similarity ranking.

    ``rank`` scheme: rank r (1-based) among the m prized nodes earns
    ``(m - r + 1) * prize_scale``.  ``similarity`` scheme: ``max(sim, 0) *
    prize_scale``.
    """
    top = ranked[: cfg.prize_pool]
    m = len(top)
    if cfg.prize_scheme == "rank":
        return {nid: float(m - r) * cfg.prize_scale for r, (nid, _) in enumerate(top)}
    return {nid: max(sim, 0.0) * cfg.prize_scale for nid, sim in top}


def pcst_merge(
    kg: KnowledgeGraph,
    pool: Iterable[int],
    store: EmbeddingStore,
    q: QueryEmbedding,
    seeds: Iterable[int],
    cfg: RetrievalConfig,
    qid: str = "",
) -> RetrievedSubgraph:
    pool = set(pool)
    seeds = list(seeds)
    if not pool:
        raise ValueError("candidate pool is empty")
    if not set(seeds) <= pool:
        raise ValueError("candidate pool must contain every seed")

    pool_graph = induced_subgraph(kg, pool)
    sims = store.similarities(q, pool_graph.node_ids)
    ranked = rank_by_similarity(sims)
    inst = PcstInstance(pool_graph, assign_prizes(ranked, cfg), cfg.edge_cost)
    sol = solve_pcst(inst)
    merged = {nid for nid, _ in ranked[: cfg.merge_pool]}

    keep = set(sol.nodes) | merged | set(seeds)
    provenance = {}
    for nid in keep:
        if nid in seeds:
            provenance[nid] = Provenance.SEED
        elif nid in sol.nodes and nid in merged:
            provenance[nid] = Provenance.BOTH
        elif nid in sol.nodes:
            provenance[nid] = Provenance.PCST
        else:
            provenance[nid] = Provenance.MERGE
    return RetrievedSubgraph(
        graph=induced_subgraph(kg, keep),
        seeds=tuple(seeds),
        similarity={nid: sims[nid] for nid in sorted(keep)},
        provenance=dict(sorted(provenance.items())),
        qid=qid,
        pcst=sol,
    )


def retrieve(
    kg: KnowledgeGraph,
    store: EmbeddingStore,
    q: QueryEmbedding,
    cfg: RetrievalConfig,
    mode: Mode | str = Mode.SINGLE_HOP,
    qid: str = "",
) -> RetrievedSubgraph:
    mode = Mode(mode)
    seeds = select_seeds(kg, store, q, cfg)
    if mode is Mode.SINGLE_HOP:
        pool = expand_single_hop(kg, seeds)
    else:
        pool = expand_multi_hop(kg, store, q, seeds, cfg)
    return pcst_merge(kg, pool, store, q, seeds, cfg, qid=qid)


def config_dict(cfg: RetrievalConfig) -> dict:
    return asdict(cfg)
