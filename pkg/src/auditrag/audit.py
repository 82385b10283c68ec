"""Evidence-routing audit of one retrieved subgraph.

Given exact per-node attribution terms this module ranks nodes, builds the
three text contexts (full, top-k only, full with top-k emphasized), measures
how the graph fragments when only the top-k nodes are kept, and finds the
low-importance nodes that hold the top-k together.
"""

from __future__ import annotations

import csv
import enum
import io
import itertools
from dataclasses import asdict, dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .graph_store import (
    KnowledgeGraph,
    betweenness_centrality,
    component_labels,
    connected_components,
    induced_subgraph,
)
from .mgnan.model import Attribution

MARKER = "[IMPORTANT] "


class ContextMode(str, enum.Enum):
    FULL_PCST = "full"
    TOP_K_ONLY = "topk"
    PCST_PLUS_TOP_K = "emphasis"


@dataclass(frozen=True)
class ContextConfig:
    mode: ContextMode = ContextMode.FULL_PCST
    k: int = 25

    def __post_init__(self):
        object.__setattr__(self, "mode", ContextMode(self.mode))
        if self.k < 1:
            raise ValueError("k must be positive")


class Reduction(str, enum.Enum):
    ABS_CHANNEL0 = "abs0"  # sum over groups of |channel 0|
    NORM = "norm"  # sum over groups of the L2 norm across channels
    SIGNED = "signed"  # sum over groups of channel 0


def importance_scores(att: Attribution, reduction: Reduction | str = Reduction.ABS_CHANNEL0) -> list[tuple[int, float]]:
    """Per-node importance, descending, ties by ascending id."""
    reduction = Reduction(reduction)
    if not att.node_ids:
        raise ValueError("attribution is empty")
    if reduction is Reduction.ABS_CHANNEL0:
        vals = np.abs(att.terms[:, :, 0]).sum(axis=0)
    elif reduction is Reduction.NORM:
        vals = np.linalg.norm(att.terms, axis=2).sum(axis=0)
    else:
        vals = att.terms[:, :, 0].sum(axis=0)
    return sorted(zip(att.node_ids, vals.tolist()), key=lambda kv: (-kv[1], kv[0]))


def shares(scores: Sequence[tuple[int, float]]) -> list[float]:
    """Share of total importance magnitude held by each entry (all zero when
    the total is zero)."""
    mags = [abs(s) for _, s in scores]
    total = sum(mags)
    return [m / total if total > 0 else 0.0 for m in mags]


def top_share(scores: Sequence[tuple[int, float]], k: int) -> float:
    return float(sum(shares(scores)[:k]))


def top_k_nodes(scores: Sequence[tuple[int, float]], k: int) -> list[int]:
    return [nid for nid, _ in scores[:k]]


def _graph_of(sub) -> KnowledgeGraph:
    return sub.graph if hasattr(sub, "graph") else sub


def _clean(text: str) -> str:
    return text.replace("\t", " ").replace("\r", " ").replace("\n", " ")


def _node_line(g: KnowledgeGraph, nid: int) -> str:
    n = g.node(nid)
    return f"node\t{n.id}\t{_clean(n.name)}\t{_clean(n.entity_type)}\t{_clean(n.description)}"


def build_context(sub, scores: Sequence[tuple[int, float]], cfg: ContextConfig) -> tuple[str, set[int]]:
    """Linearize a subgraph for the generator.

    One ``node<TAB>id<TAB>name<TAB>type<TAB>description`` line per node, then
    one ``edge<TAB>src<TAB>dst<TAB>relation`` line per edge (sorted by src,
    dst, relation); tabs and newlines inside fields become spaces and the text
    ends with a newline.  Returns the text and the retained node set.
    """
    g = _graph_of(sub)
    ranked = [nid for nid, _ in scores]
    if set(ranked) != set(g.node_ids):
        raise ValueError("scores must cover exactly the subgraph nodes")
    top = ranked[: cfg.k]

    if cfg.mode is ContextMode.TOP_K_ONLY:
        g = induced_subgraph(g, top)
        lines = [_node_line(g, nid) for nid in g.node_ids]
    elif cfg.mode is ContextMode.PCST_PLUS_TOP_K:
        top_set = set(top)
        lines = [MARKER + _node_line(g, nid) for nid in top]
        lines += [_node_line(g, nid) for nid in g.node_ids if nid not in top_set]
    else:
        lines = [_node_line(g, nid) for nid in g.node_ids]
    lines += [f"edge\t{e.src}\t{e.dst}\t{_clean(e.relation)}" for e in g.edges]
    return "\n".join(lines) + "\n", set(g.node_ids)


def count_partition(g: KnowledgeGraph, nodes: Iterable[int], removed: Iterable[int] = ()) -> int:
    """Number of components of ``g - removed`` that contain any of ``nodes``."""
    labels = component_labels(g, removed)
    return len({labels[n] for n in nodes if n in labels})


def disconnect_fraction(g: KnowledgeGraph, nodes: Iterable[int], removed: Iterable[int] = ()) -> float:
    """Fraction of pairs of ``nodes`` with no path between them in ``g - removed``."""
    nodes = sorted(set(nodes))
    pairs = len(nodes) * (len(nodes) - 1) // 2
    if pairs == 0:
        return 0.0
    labels = component_labels(g, removed)
    split = sum(1 for a, b in itertools.combinations(nodes, 2) if labels.get(a, -1 - a) != labels.get(b, -1 - b))
    return split / pairs


@dataclass(frozen=True)
class Fragmentation:
    components_full: int
    components_topk: int
    fragmentation_delta: int
    disconnect_fraction: float


def topk_keep_set(g: KnowledgeGraph, top: Iterable[int], include_neighbors: bool = False) -> set[int]:
    keep = set(top)
    if include_neighbors:
        for nid in list(keep):
            keep.update(g.neighbors(nid))
    return keep


def fragmentation_metrics(sub, scores: Sequence[tuple[int, float]], k: int,
                          include_neighbors: bool = False) -> Fragmentation:
    """Component counts of the full subgraph vs the subgraph induced on the
    top-k nodes (optionally with their neighbors), and the fraction of top-k
    pairs left disconnected there."""
    g = _graph_of(sub)
    if not 1 <= k <= len(g):
        raise ValueError(f"k must be in [1, {len(g)}]")
    top = top_k_nodes(scores, k)
    pruned = induced_subgraph(g, topk_keep_set(g, top, include_neighbors))
    full = len(connected_components(g))
    cut = len(connected_components(pruned))
    return Fragmentation(full, cut, cut - full, disconnect_fraction(pruned, top))


@dataclass(frozen=True)
class Bridge:
    node: int
    name: str
    importance: float
    betweenness: float  # restricted to shortest paths between top-k nodes
    global_betweenness: float
    rank: int
    is_articulation: bool


def detect_bridges(sub, scores: Sequence[tuple[int, float]], k: int, m: int) -> list[Bridge]:
    """Up to ``m`` nodes outside the top-k that carry top-k shortest paths,
    ranked by top-k-restricted betweenness (ties by id).  ``is_articulation``
    marks nodes whose removal splits the top-k nodes into more components."""
    if k < 1 or m < 1:
        raise ValueError("k and m must be positive")
    g = _graph_of(sub)
    top = top_k_nodes(scores, k)
    top_set = set(top)
    score_of = dict(scores)
    restricted = betweenness_centrality(g, top, top)
    global_bc = betweenness_centrality(g)
    base = count_partition(g, top)
    cands = sorted(
        (nid for nid in g.node_ids if nid not in top_set and restricted[nid] > 0),
        key=lambda nid: (-restricted[nid], nid),
    )
    return [
        Bridge(
            node=nid,
            name=g.node(nid).name,
            importance=float(score_of[nid]),
            betweenness=float(restricted[nid]),
            global_betweenness=float(global_bc[nid]),
            rank=rank,
            is_articulation=count_partition(g, top, removed=[nid]) > base,
        )
        for rank, nid in enumerate(cands[:m], start=1)
    ]


def articulation_bridges(sub, scores: Sequence[tuple[int, float]], k: int) -> list[int]:
    """Every node outside the top-k whose removal splits the top-k further."""
    g = _graph_of(sub)
    top = top_k_nodes(scores, k)
    top_set = set(top)
    base = count_partition(g, top)
    return [nid for nid in g.node_ids if nid not in top_set and count_partition(g, top, [nid]) > base]


@dataclass(frozen=True)
class AuditConfig:
    k: int = 25
    bridges: int = 10
    reduction: Reduction = Reduction.ABS_CHANNEL0
    include_neighbors: bool = False
    share_ks: tuple[int, ...] = (1, 3, 5, 10, 25)

    def __post_init__(self):
        object.__setattr__(self, "reduction", Reduction(self.reduction))
        if self.k < 1 or self.bridges < 1:
            raise ValueError("k and bridges must be positive")


@dataclass
class NodeRow:
    node: int
    name: str
    importance: float
    share: float
    betweenness: float
    component_full: int
    component_topk: int  # -1 when the node is not retained
    is_bridge: bool


@dataclass
class AuditReport:
    qid: str
    k: int
    importance: list[tuple[int, str, float, float]]
    top_share: dict[int, float]
    components_full: int
    components_topk: int
    fragmentation_delta: int
    disconnect_fraction: float
    bridges: list[Bridge]
    nodes: list[NodeRow] = field(default_factory=list)
    notes: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "qid": self.qid,
            "k": self.k,
            "importance": [
                {"node": n, "name": name, "score": s, "share": sh} for n, name, s, sh in self.importance
            ],
            "top_share": {str(k): v for k, v in sorted(self.top_share.items())},
            "components_full": self.components_full,
            "components_topk": self.components_topk,
            "fragmentation_delta": self.fragmentation_delta,
            "disconnect_fraction": self.disconnect_fraction,
            "bridges": [asdict(b) for b in self.bridges],
            "nodes": [asdict(r) for r in self.nodes],
            "notes": list(self.notes),
            "betweenness_convention": "unnormalized, endpoints excluded, unordered pairs",
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "AuditReport":
        return cls(
            qid=obj["qid"],
            k=obj["k"],
            importance=[(r["node"], r["name"], r["score"], r["share"]) for r in obj["importance"]],
            top_share={int(k): v for k, v in obj["top_share"].items()},
            components_full=obj["components_full"],
            components_topk=obj["components_topk"],
            fragmentation_delta=obj["fragmentation_delta"],
            disconnect_fraction=obj["disconnect_fraction"],
            bridges=[Bridge(**b) for b in obj["bridges"]],
            nodes=[NodeRow(**r) for r in obj.get("nodes", [])],
            notes=list(obj.get("notes", [])),
        )

    def importance_csv(self) -> str:
        """Score bars: ``rank,node_id,name,score,share``."""
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["rank", "node_id", "name", "score", "share"])
        for rank, (nid, name, score, share) in enumerate(self.importance, start=1):
            w.writerow([rank, nid, name, repr(score), repr(share)])
        return buf.getvalue()

    def structure_csv(self) -> str:
        """Full vs pruned view: ``node_id,importance,betweenness,component_full,component_topk,is_bridge``."""
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["node_id", "importance", "betweenness", "component_full", "component_topk", "is_bridge"])
        for r in self.nodes:
            w.writerow([r.node, repr(r.importance), repr(r.betweenness), r.component_full,
                        r.component_topk, int(r.is_bridge)])
        return buf.getvalue()


REPORT_SCHEMA = {
    "type": "object",
    "required": [
        "qid", "k", "importance", "top_share", "components_full", "components_topk",
        "fragmentation_delta", "disconnect_fraction", "bridges", "nodes", "notes",
    ],
    "properties": {
        "qid": {"type": "string"},
        "k": {"type": "integer", "minimum": 1},
        "importance": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["node", "name", "score", "share"],
                "properties": {
                    "node": {"type": "integer"},
                    "name": {"type": "string"},
                    "score": {"type": "number"},
                    "share": {"type": "number", "minimum": 0, "maximum": 1},
                },
            },
        },
        "top_share": {"type": "object", "additionalProperties": {"type": "number"}},
        "components_full": {"type": "integer", "minimum": 0},
        "components_topk": {"type": "integer", "minimum": 0},
        "fragmentation_delta": {"type": "integer"},
        "disconnect_fraction": {"type": "number", "minimum": 0, "maximum": 1},
        "bridges": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["node", "name", "importance", "betweenness", "global_betweenness", "rank", "is_articulation"],
                "properties": {
                    "node": {"type": "integer"},
                    "rank": {"type": "integer", "minimum": 1},
                    "betweenness": {"type": "number", "minimum": 0},
                    "global_betweenness": {"type": "number", "minimum": 0},
                    "is_articulation": {"type": "boolean"},
                },
            },
        },
        "nodes": {"type": "array"},
        "notes": {"type": "array", "items": {"type": "string"}},
    },
}


def audit_query(sub, att: Attribution, cfg: AuditConfig = AuditConfig(), qid: str | None = None) -> AuditReport:
    g = _graph_of(sub)
    if set(att.node_ids) != set(g.node_ids):
        raise ValueError("attribution does not match the subgraph nodes")
    qid = qid if qid is not None else getattr(sub, "qid", "")
    notes = []
    k = cfg.k
    if k > len(g):
        notes.append(f"k={cfg.k} clamped to subgraph size {len(g)}")
        k = len(g)

    scores = importance_scores(att, cfg.reduction)
    share = shares(scores)
    cum = np.cumsum(share)
    ks = sorted({min(x, len(g)) for x in (*cfg.share_ks, k, len(g))})
    frag = fragmentation_metrics(g, scores, k, cfg.include_neighbors)
    bridges = detect_bridges(g, scores, k, cfg.bridges)

    top = top_k_nodes(scores, k)
    pruned_keep = topk_keep_set(g, top, cfg.include_neighbors)
    labels_full = component_labels(g)
    labels_topk = component_labels(induced_subgraph(g, pruned_keep))
    global_bc = betweenness_centrality(g)
    bridge_ids = {b.node for b in bridges}
    share_of = {nid: sh for (nid, _), sh in zip(scores, share)}
    rows = [
        NodeRow(nid, g.node(nid).name, float(s), float(share_of[nid]), float(global_bc[nid]),
                labels_full[nid], labels_topk.get(nid, -1), nid in bridge_ids)
        for nid, s in scores
    ]
    return AuditReport(
        qid=qid,
        k=k,
        importance=[(nid, g.node(nid).name, float(s), float(sh)) for (nid, s), sh in zip(scores, share)],
        top_share={x: float(min(cum[x - 1], 1.0)) for x in ks},
        components_full=frag.components_full,
        components_topk=frag.components_topk,
        fragmentation_delta=frag.fragmentation_delta,
        disconnect_fraction=frag.disconnect_fraction,
        bridges=bridges,
        nodes=rows,
        notes=notes,
    )
