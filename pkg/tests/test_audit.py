from __future__ import annotations

import json
from pathlib import Path

import jsonschema
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from auditrag.audit import (
    MARKER,
    REPORT_SCHEMA,
    AuditConfig,
    AuditReport,
    ContextConfig,
    ContextMode,
    articulation_bridges,
    audit_query,
    build_context,
    count_partition,
    detect_bridges,
    disconnect_fraction,
    fragmentation_metrics,
    importance_scores,
    shares,
    top_k_nodes,
    top_share,
)
from auditrag.graph_store import component_labels, connected_components, induced_subgraph
from auditrag.synthetic import make_hub_bridge_graph, signal_readout_model
from auditrag.mgnan import encode_features
from helpers import attribution_from_scores, complete, golden_fixture, graphs, make_graph, path, star

GOLDEN = Path(__file__).parent / "golden"


@pytest.mark.parametrize("mode", list(ContextMode))
def test_golden_linearization(mode):
    g, att = golden_fixture()
    text, kept = build_context(g, importance_scores(att), ContextConfig(mode, 3))
    assert text == (GOLDEN / f"context.{mode.value}.txt").read_text(encoding="utf-8")
    assert kept == ({0, 1, 3} if mode is ContextMode.TOP_K_ONLY else set(range(6)))


def test_emphasis_marker_count():
    g, att = golden_fixture()
    for k in range(1, 7):
        text, _ = build_context(g, importance_scores(att), ContextConfig("emphasis", k))
        assert sum(line.startswith(MARKER) for line in text.splitlines()) == k


def test_scores_single_node_and_signed():
    g = make_graph(1, [])
    assert importance_scores(attribution_from_scores(g, [-0.7])) == [(0, 0.7)]
    g, att = golden_fixture()
    assert [nid for nid, _ in importance_scores(att)] == [0, 1, 3, 5, 2, 4]
    assert dict(importance_scores(att, "signed"))[1] == pytest.approx(-0.234)


def test_scores_equal_shape_times_weight():
    rng = np.random.default_rng(0)
    from helpers import random_connected_graph_for_audit

    g, x = random_connected_graph_for_audit(rng)
    model = signal_readout_model(x.shape[1])
    _, att = encode_features(model, g, x)
    vals = np.abs(att.shape_values[0, :, 0] * att.weights)
    assert dict(importance_scores(att)) == pytest.approx(dict(zip(g.node_ids, vals.tolist())))


def test_topk_only_when_k_covers_everything():
    g, att = golden_fixture()
    _, kept = build_context(g, importance_scores(att), ContextConfig("topk", 50))
    _, full = build_context(g, importance_scores(att), ContextConfig("full", 50))
    assert kept == full


def test_topk_path_fragments():
    g = path(3)
    text, kept = build_context(g, importance_scores(attribution_from_scores(g, [1.0, 0.0, 0.9])), ContextConfig("topk", 2))
    assert kept == {0, 2} and "edge" not in text


@settings(max_examples=60, deadline=None)
@given(graphs(min_nodes=1, max_nodes=10), st.integers(0, 10_000), st.integers(1, 10))
def test_emphasis_ordering_and_topk_retention(g, seed, k):
    rng = np.random.default_rng(seed)
    vals = rng.choice([0.1, 0.2, 0.5, 1.0], size=len(g)) * rng.choice([-1, 1], size=len(g))
    att = attribution_from_scores(g, vals)
    scores = importance_scores(att)
    ref = sorted(g.node_ids, key=lambda n: (-abs(vals[g.index(n)]), n))
    top = ref[:k]
    text, _ = build_context(g, scores, ContextConfig("emphasis", k))
    order = [int(line.split("\t")[1]) for line in text.splitlines() if "node\t" in line]
    assert order == top + sorted(set(g.node_ids) - set(top))
    _, kept = build_context(g, scores, ContextConfig("topk", k))
    assert kept == set(top)
    sh = shares(scores)
    assert all(s >= 0 for s in sh)
    assert sum(sh) == pytest.approx(1.0, abs=1e-9)
    cum = [top_share(scores, j) for j in range(1, len(g) + 1)]
    assert all(b >= a - 1e-12 for a, b in zip(cum, cum[1:]))
    assert cum[-1] == pytest.approx(1.0, abs=1e-9)


def test_top_share_examples():
    g = make_graph(10, [])
    assert top_share(importance_scores(attribution_from_scores(g, [1.0] * 10)), 3) == pytest.approx(0.3)
    g = make_graph(4, [])
    scores = importance_scores(attribution_from_scores(g, [0.252, 0.234, 0.114, 0.4]))
    assert top_share(scores, 3) == pytest.approx(0.886)


def test_fragmentation_examples():
    g = complete(6)
    rng = np.random.default_rng(1)
    att = attribution_from_scores(g, rng.random(6))
    for k in range(1, 7):
        assert fragmentation_metrics(g, importance_scores(att), k).fragmentation_delta == 0
    s = star(5)
    att = attribution_from_scores(s, [0.0, 1, 2, 3, 4, 5])
    for k in range(2, 6):
        f = fragmentation_metrics(s, importance_scores(att), k)
        assert f.components_topk == k and f.disconnect_fraction == 1.0


@settings(max_examples=60, deadline=None)
@given(graphs(min_nodes=2, max_nodes=10), st.integers(0, 10_000), st.integers(1, 10))
def test_topk_components_nest_in_full(g, seed, k):
    k = min(k, len(g))
    att = attribution_from_scores(g, np.random.default_rng(seed).random(len(g)))
    scores = importance_scores(att)
    top = top_k_nodes(scores, k)
    full = component_labels(g)
    for comp in connected_components(induced_subgraph(g, top)):
        assert len({full[n] for n in comp}) == 1
    for b in articulation_bridges(g, scores, k):
        assert count_partition(g, top, [b]) > count_partition(g, top)


def test_bridge_on_path():
    g = make_graph(3, [(0, 1), (1, 2)], names=["a", "x", "b"])
    scores = importance_scores(attribution_from_scores(g, [1.0, 0.01, 0.9]))
    bridges = detect_bridges(g, scores, 2, 5)
    assert [b.node for b in bridges] == [1]
    assert bridges[0].is_articulation and bridges[0].betweenness == 1.0
    assert disconnect_fraction(g, [0, 2], removed=[1]) == 1.0


def test_clique_with_pendants_has_no_articulation_bridge():
    edges = [(0, 1), (0, 2), (1, 2), (0, 3), (1, 4), (2, 5)]
    g = make_graph(6, edges)
    scores = importance_scores(attribution_from_scores(g, [1.0, 0.9, 0.8, 0.01, 0.02, 0.03]))
    assert articulation_bridges(g, scores, 3) == []
    assert not any(b.is_articulation for b in detect_bridges(g, scores, 3, 10))


def test_hub_bridge_bridges_raise_disconnect():
    rng = np.random.default_rng(12)
    for _ in range(10):
        hb = make_hub_bridge_graph(rng)
        _, att = encode_features(signal_readout_model(), hb.graph, hb.features)
        scores = importance_scores(att)
        k = len(hb.hubs)
        assert set(top_k_nodes(scores, k)) == set(hb.hubs)
        top = top_k_nodes(scores, k)
        before = disconnect_fraction(hb.graph, top)
        flagged = [b for b in detect_bridges(hb.graph, scores, k, 10) if b.is_articulation]
        assert flagged
        for b in flagged:
            assert b.node in hb.intermediaries
            assert disconnect_fraction(hb.graph, top, [b.node]) > before


def test_audit_report_schema_round_trip_and_clamp():
    g, att = golden_fixture()
    rep = audit_query(g, att, AuditConfig(k=25, bridges=3), qid="demo")
    assert rep.k == 6 and any("clamped" in note for note in rep.notes)
    obj = json.loads(json.dumps(rep.to_dict()))
    jsonschema.validate(obj, REPORT_SCHEMA)
    assert AuditReport.from_dict(obj).to_dict() == obj
    assert rep.importance_csv().splitlines()[0] == "rank,node_id,name,score,share"
    assert rep.structure_csv().splitlines()[0] == "node_id,importance,betweenness,component_full,component_topk,is_bridge"
    assert rep.top_share[6] == pytest.approx(1.0)


def test_audit_neighbors_variant():
    g = path(5)
    att = attribution_from_scores(g, [1.0, 0.0, 0.9, 0.0, 0.8])
    strict = audit_query(g, att, AuditConfig(k=3))
    wide = audit_query(g, att, AuditConfig(k=3, include_neighbors=True))
    assert strict.components_topk == 3 and wide.components_topk == 1


def test_audit_rejects_mismatched_attribution():
    g, att = golden_fixture()
    with pytest.raises(ValueError):
        audit_query(path(3), att)
