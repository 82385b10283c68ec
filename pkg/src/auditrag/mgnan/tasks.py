"""Synthetic graph-level tasks with known ground truth for desk-scale checks."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..embedding import hash_embedder
from ..graph_store import EdgeRecord, KnowledgeGraph, NodeRecord
from .model import MonotoneDecay, Structure
from .training import Sample

SIGNAL_VOCAB = tuple(f"signal{i}" for i in range(8))
NOISE_VOCAB = tuple(f"noise{i}" for i in range(16))


def random_connected_graph(n: int, rng: np.random.Generator, extra: float = 1.5,
                           texts: list[str] | None = None) -> KnowledgeGraph:
    """Random recursive tree on ``n`` nodes plus about ``extra * n / 2`` chords."""
    edges = [EdgeRecord(int(rng.integers(0, i)), i, "link") for i in range(1, n)]
    if n > 2:
        p = min(1.0, extra / n)
        for u in range(n):
            for v in range(u + 1, n):
                if rng.random() < p:
                    edges.append(EdgeRecord(u, v, "link"))
    texts = texts or [f"node {i}" for i in range(n)]
    nodes = [NodeRecord(i, f"n{i}", "entity", texts[i]) for i in range(n)]
    return KnowledgeGraph(nodes, edges)


def _words(rng: np.random.Generator, vocab, count: int = 3) -> str:
    return " ".join(rng.choice(vocab, size=count))


@dataclass
class PlantedTask:
    samples: list[Sample]
    functional: np.ndarray
    dim: int

    def planted(self, idx: int) -> tuple[int, ...]:
        return self.samples[idx].meta["planted"]


PLANTED_SCALE = 3.0


def planted_target(features: np.ndarray, planted, functional: np.ndarray) -> float:
    """Target of a planted graph: ``PLANTED_SCALE * sum over planted j of <u, x_j>``."""
    return float(PLANTED_SCALE * sum(features[j] @ functional for j in sorted(planted)))


def signal_functional(dim: int, rng: np.random.Generator) -> np.ndarray:
    """Unit functional ``u = normalize(sum_i s_i * t_i)`` over the signal-word
    vectors ``t_i`` with random signs ``s_i``.  A planted node built from an odd
    number of signal words can never score 0 under ``u``."""
    signs = rng.choice([-1.0, 1.0], size=len(SIGNAL_VOCAB))
    u = sum(s * hash_embedder(w, dim) for s, w in zip(signs, SIGNAL_VOCAB))
    return u / np.linalg.norm(u)


def make_planted_task(n_graphs: int, nodes_per_graph: int, planted: int, seed: int, dim: int = 32) -> PlantedTask:
    """Random connected graphs whose scalar target depends only on ``planted``
    designated nodes.  Planted nodes carry words from a signal vocabulary,
    the rest from a disjoint noise vocabulary; the planted ids are stored in
    ``sample.meta["planted"]``."""
    if not 0 <= planted < nodes_per_graph:
        raise ValueError("planted count must be in [0, nodes_per_graph)")
    rng = np.random.default_rng(seed)
    u = signal_functional(dim, rng)
    samples = []
    for k in range(n_graphs):
        chosen = tuple(sorted(int(i) for i in rng.choice(nodes_per_graph, size=planted, replace=False)))
        texts = [
            _words(rng, SIGNAL_VOCAB if i in chosen else NOISE_VOCAB) for i in range(nodes_per_graph)
        ]
        g = random_connected_graph(nodes_per_graph, rng, texts=texts)
        feats = np.stack([hash_embedder(t, dim) for t in texts])
        target = planted_target(feats, chosen, u)
        samples.append(Sample(g, feats, [target], qid=f"planted-{seed}-{k}", meta={"planted": chosen}))
    return PlantedTask(samples, u, dim)


def make_linear_task(n_graphs: int, nodes_per_graph: int, seed: int, dim: int = 16, n_knots: int = 16):
    """Targets ``sum_j W_j <u, x_j>`` with the decay fixed at ``rho(t) = t``,
    i.e. a task the additive model class represents with a linear shape
    function."""
    rng = np.random.default_rng(seed)
    u = rng.standard_normal(dim)
    u /= np.linalg.norm(u)
    rho = MonotoneDecay(0.0, np.full(n_knots, np.log(np.expm1(1.0 / n_knots))))
    samples = []
    for k in range(n_graphs):
        texts = [_words(rng, NOISE_VOCAB + SIGNAL_VOCAB) for _ in range(nodes_per_graph)]
        g = random_connected_graph(nodes_per_graph, rng, texts=texts)
        feats = np.stack([hash_embedder(t, dim) for t in texts])
        w = Structure.from_graph(g).node_weights(rho)
        samples.append(Sample(g, feats, [float(w @ (feats @ u))], qid=f"linear-{seed}-{k}"))
    return samples, u
