"""Deterministic synthetic inputs: a small biomedical-flavoured knowledge graph
with queries, and the hub-bridge graph family used to test bridge detection."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .embedding import EmbeddingStore, hash_embedder
from .graph_store import EdgeRecord, KnowledgeGraph, NodeRecord, write_graph
from .mgnan.model import FeatureGrouping, MGnanModel
from .mgnan.tasks import NOISE_VOCAB, SIGNAL_VOCAB

ENTITY_TYPES = ("drug", "gene/protein", "pathway", "disease")
RELATIONS = {
    ("drug", "gene/protein"): "targets",
    ("gene/protein", "gene/protein"): "interacts_with",
    ("gene/protein", "pathway"): "participates_in",
    ("gene/protein", "disease"): "associated_with",
    ("drug", "disease"): "treats",
    ("pathway", "pathway"): "part_of",
}
TOPIC_WORDS = (
    "kinase", "receptor", "inflammation", "tumor", "signaling", "membrane", "enzyme", "channel",
    "metabolism", "immune", "neuron", "cardiac", "hepatic", "renal", "apoptosis", "growth",
    "tablet", "capsule", "injection", "inhibitor", "agonist", "antagonist", "transport", "repair",
)


def _relation(a: str, b: str) -> tuple[str, bool]:
    if (a, b) in RELATIONS:
        return RELATIONS[(a, b)], False
    if (b, a) in RELATIONS:
        return RELATIONS[(b, a)], True
    return "related_to", False


def fixture_graph(n_nodes: int = 300, max_degree: int = 5, seed: int = 7) -> KnowledgeGraph:
    """Random KG with degrees capped at ``max_degree`` so that 1-hop pools are
    contained in the 3-hop frontier-pruned pools (frontier budget 5)."""
    rng = np.random.default_rng(seed)
    nodes = []
    for i in range(n_nodes):
        etype = ENTITY_TYPES[int(rng.integers(len(ENTITY_TYPES)))]
        words = " ".join(rng.choice(TOPIC_WORDS, size=4))
        short = etype.split("/")[0]
        nodes.append(NodeRecord(i, f"{short}_{i}", etype, f"{short} {words}"))
    degree = [0] * n_nodes
    pairs: set[tuple[int, int]] = set()

    def link(u: int, v: int) -> None:
        if u == v or (min(u, v), max(u, v)) in pairs:
            return
        if degree[u] >= max_degree or degree[v] >= max_degree:
            return
        pairs.add((min(u, v), max(u, v)))
        degree[u] += 1
        degree[v] += 1

    for i in range(1, n_nodes):
        link(i, int(rng.integers(0, i)))
    for _ in range(n_nodes):
        link(int(rng.integers(n_nodes)), int(rng.integers(n_nodes)))
    edges = []
    for u, v in sorted(pairs):
        rel, flip = _relation(nodes[u].entity_type, nodes[v].entity_type)
        edges.append(EdgeRecord(v, u, rel) if flip else EdgeRecord(u, v, rel))
    return KnowledgeGraph(nodes, edges)


def fixture_queries(n_queries: int = 20, seed: int = 11) -> list[dict]:
    rng = np.random.default_rng(seed)
    return [
        {"qid": f"q{i:02d}", "text": "which " + " ".join(rng.choice(TOPIC_WORDS, size=3)) + " entities are involved"}
        for i in range(n_queries)
    ]


def node_text(n: NodeRecord) -> str:
    return f"{n.name} {n.description}"


def hash_store(g: KnowledgeGraph, dim: int, seed: int = 0) -> EmbeddingStore:
    return EmbeddingStore.from_texts({n.id: node_text(n) for n in g.nodes}, dim, seed)


def write_fixture(directory: str | Path, n_nodes: int = 300, n_queries: int = 20) -> dict[str, Path]:
    """Write ``nodes.jsonl``, ``edges.jsonl`` and ``queries.jsonl``."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    g = fixture_graph(n_nodes)
    paths = {k: directory / f"{k}.jsonl" for k in ("nodes", "edges", "queries")}
    write_graph(g, paths["nodes"], paths["edges"])
    with open(paths["queries"], "w", encoding="utf-8") as fh:
        for q in fixture_queries(n_queries):
            fh.write(json.dumps(q) + "\n")
    return paths


@dataclass
class HubBridgeGraph:
    graph: KnowledgeGraph
    features: np.ndarray  # rows in ascending node id order
    hubs: tuple[int, ...]
    intermediaries: tuple[int, ...]


def make_hub_bridge_graph(rng: np.random.Generator, dim: int = 32, n_hubs: int | None = None,
                          n_noise: int | None = None) -> HubBridgeGraph:
    """Hubs carry signal words and are pairwise non-adjacent; they are joined
    along a random tree in which every hub-hub link is a path through one or
    two low-signal intermediaries.  Extra noise nodes hang off non-hub nodes.
    The whole graph is connected."""
    n_hubs = n_hubs or int(rng.integers(3, 7))
    n_noise = n_noise if n_noise is not None else int(rng.integers(5, 20))
    texts: list[str] = []
    kinds: list[str] = []

    def add(kind: str, vocab) -> int:
        texts.append(" ".join(rng.choice(vocab, size=3)))
        kinds.append(kind)
        return len(texts) - 1

    hubs = [add("hub", SIGNAL_VOCAB) for _ in range(n_hubs)]
    edges: list[tuple[int, int]] = []
    mids: list[int] = []
    for h in range(1, n_hubs):
        other = hubs[int(rng.integers(0, h))]
        chain = [add("bridge", NOISE_VOCAB) for _ in range(int(rng.integers(1, 3)))]
        mids.extend(chain)
        path = [other, *chain, hubs[h]]
        edges.extend(zip(path[:-1], path[1:]))
    for _ in range(n_noise):
        anchor_pool = mids + [i for i, k in enumerate(kinds) if k == "noise"]
        anchor = int(rng.choice(anchor_pool)) if anchor_pool else hubs[0]
        v = add("noise", NOISE_VOCAB)
        edges.append((anchor, v))
    nodes = [NodeRecord(i, f"{kinds[i]}_{i}", kinds[i], texts[i]) for i in range(len(texts))]
    g = KnowledgeGraph(nodes, [EdgeRecord(u, v, "link") for u, v in edges])
    feats = np.stack([hash_embedder(t, dim) for t in texts])
    return HubBridgeGraph(g, feats, tuple(hubs), tuple(mids))


def signal_readout_model(dim: int = 32) -> MGnanModel:
    """Hand-set linear model that reads 1 from every signal word vector and 0
    from every noise word vector (min-norm solution; needs ``dim`` at least
    the vocabulary size).  Noise-only nodes therefore score 0 and hubs score
    a positive amount.  The decay keeps essentially only the self term
    (rho(1) = 1, rho(t) ~ 0 for t < 1), so each node's weight is about 1."""
    if dim < len(SIGNAL_VOCAB) + len(NOISE_VOCAB):
        raise ValueError("dim must be at least the signal plus noise vocabulary size")
    model = MGnanModel(FeatureGrouping.single(dim), hidden=(), n_outputs=1, n_knots=16)
    words = np.stack([hash_embedder(w, dim) for w in SIGNAL_VOCAB + NOISE_VOCAB])
    reads = np.r_[np.ones(len(SIGNAL_VOCAB)), np.zeros(len(NOISE_VOCAB))]
    u = np.linalg.lstsq(words, reads, rcond=None)[0]
    model.params["shape0.W0"] = u[:, None]
    model.params["shape0.b0"] = np.zeros(1)
    inc = np.full(16, -40.0)
    inc[-1] = np.log(np.expm1(1.0))
    model.params["rho.increments"] = inc
    model.params["rho.base"] = np.array(0.0)
    return model
