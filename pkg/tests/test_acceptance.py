"""Acceptance criteria 1-9.

Each ``criterion_N`` returns ``(passed, detail)``; the pytest wrappers record
the outcome so that the terminal summary prints one PASS/FAIL line per
criterion.  ``python3 tests/test_acceptance.py`` runs them standalone.
"""

from __future__ import annotations

import sys
import time
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from auditrag.audit import (  # noqa: E402
    MARKER,
    ContextConfig,
    ContextMode,
    build_context,
    detect_bridges,
    disconnect_fraction,
    importance_scores,
    top_k_nodes,
    top_share,
)
from auditrag.embedding import QueryEmbedding  # noqa: E402
from auditrag.graph_store import connected_components, induced_subgraph  # noqa: E402
from auditrag.mgnan import (  # noqa: E402
    FeatureGrouping,
    MGnanModel,
    MonotoneDecay,
    TrainConfig,
    encode_features,
    make_planted_task,
    train,
)
from auditrag.pcst import brute_force_pcst, is_feasible, solve_pcst  # noqa: E402
from auditrag.retrieval import Mode, RetrievalConfig, expand_multi_hop, retrieve, select_seeds  # noqa: E402
from auditrag.synthetic import (  # noqa: E402
    fixture_graph,
    fixture_queries,
    hash_store,
    make_hub_bridge_graph,
    signal_readout_model,
)
from helpers import (  # noqa: E402
    attribution_from_scores,
    decomposition_instance,
    golden_fixture,
    gradient_check_instance,
    make_graph,
    random_pcst_instance,
)

RESULTS: dict[int, tuple[bool, str]] = {}
GOLDEN = Path(__file__).parent / "golden"

# planted-task training recipe (fixed before the 20-seed evaluation)
PLANTED = dict(train_graphs=400, test_graphs=20, nodes=30, planted=3, lr=1e-2, epochs=200, batch=16, hidden=(32, 32))


def criterion_1() -> tuple[bool, str]:
    t0 = time.perf_counter()
    gaps = [decomposition_instance(seed) for seed in range(500)]
    elapsed = time.perf_counter() - t0
    term = max(g[0] for g in gaps)
    order = max(g[1] for g in gaps)
    ok = term <= 1e-9 and order <= 1e-9 and elapsed < 30
    return ok, f"500 pairs, max |terms - total| {term:.2e}, max per-i vs per-j {order:.2e}, {elapsed:.1f}s"


def criterion_2() -> tuple[bool, str]:
    t0 = time.perf_counter()
    errs = [gradient_check_instance(seed) for seed in range(20)]
    elapsed = time.perf_counter() - t0
    worst = max(errs)
    ok = worst < 1e-5 and elapsed < 60
    return ok, f"20 instances, max relative error {worst:.3e} (seed {int(np.argmax(errs))}), {elapsed:.1f}s"


def criterion_3() -> tuple[bool, str]:
    rng = np.random.default_rng(3)
    grid = np.linspace(0.0, 1.0, 101)
    violations = 0
    for _ in range(1000):
        scale = rng.choice([0.1, 1.0, 10.0, 50.0])
        rho = MonotoneDecay(rng.normal(0, scale), rng.normal(0, scale, size=16))
        violations += int((np.diff(rho(grid)) < 0).sum())
    return violations == 0, f"1000 draws x 101 points, {violations} violations"


def criterion_4() -> tuple[bool, str]:
    t0 = time.perf_counter()
    rng = np.random.default_rng(2024)
    equal = feasible = 0
    worst = 1.0
    for _ in range(200):
        inst = random_pcst_instance(rng)
        sol, best = solve_pcst(inst), brute_force_pcst(inst)
        feasible += is_feasible(inst, sol)
        equal += abs(sol.objective - best.objective) <= 1e-9 * max(1.0, abs(best.objective))
        if best.objective > 0:
            worst = min(worst, sol.objective / best.objective)
    elapsed = time.perf_counter() - t0
    ok = equal >= 160 and worst >= 0.5 and feasible == 200 and elapsed < 60
    return ok, f"optimal on {equal}/200, worst ratio {worst:.3f}, feasible {feasible}/200, {elapsed:.1f}s"


def planted_seed(seed: int) -> tuple[float, float]:
    """Mean top-3 recall and top-3 share on held-out graphs for one task seed."""
    cfg = PLANTED
    task = make_planted_task(cfg["train_graphs"] + cfg["test_graphs"], cfg["nodes"], cfg["planted"], seed)
    train_set, test_set = task.samples[: cfg["train_graphs"]], task.samples[cfg["train_graphs"]:]
    model = MGnanModel(FeatureGrouping.single(task.dim), hidden=cfg["hidden"], seed=seed)
    model, _ = train(model, train_set, TrainConfig(lr=cfg["lr"], epochs=cfg["epochs"], batch_size=cfg["batch"], seed=seed))
    recalls, shares = [], []
    p = cfg["planted"]
    for s in test_set:
        _, att = encode_features(model, s.graph, s.features, s.structure)
        scores = importance_scores(att)
        recalls.append(len(set(top_k_nodes(scores, p)) & set(s.meta["planted"])) / p)
        shares.append(top_share(scores, p))
    return float(np.mean(recalls)), float(np.mean(shares))


def criterion_5() -> tuple[bool, str]:
    t0 = time.perf_counter()
    per_seed = [planted_seed(seed) for seed in range(20)]
    elapsed = time.perf_counter() - t0
    recall = float(np.mean([r for r, _ in per_seed]))
    share = float(np.mean([s for _, s in per_seed]))
    ok = recall >= 0.9 and share >= 0.5 and elapsed < 600
    low = min(r for r, _ in per_seed)
    return ok, f"20 seeds, top-3 recall {recall:.3f} (lowest seed {low:.3f}), top-3 share {share:.3f}, {elapsed:.0f}s"


def criterion_6() -> tuple[bool, str]:
    rng = np.random.default_rng(6)
    model = signal_readout_model()
    split = connected = flagged = raised = 0
    for _ in range(50):
        hb = make_hub_bridge_graph(rng)
        _, att = encode_features(model, hb.graph, hb.features)
        scores = importance_scores(att)
        k = len(hb.hubs)
        top = top_k_nodes(scores, k)
        connected += len(connected_components(hb.graph)) == 1
        split += len(connected_components(induced_subgraph(hb.graph, top))) > 1
        before = disconnect_fraction(hb.graph, top)
        for b in detect_bridges(hb.graph, scores, k, 10):
            flagged += 1
            raised += disconnect_fraction(hb.graph, top, [b.node]) > before
    ok = split >= 48 and connected == 50 and flagged > 0 and raised == flagged
    return ok, f"50 graphs, top-k split {split}/50, full connected {connected}/50, bridges raising disconnect {raised}/{flagged}"


def criterion_7() -> tuple[bool, str]:
    g = fixture_graph()
    store = hash_store(g, 32)
    cfg = RetrievalConfig()
    same = seeded = monotone = 0
    queries = fixture_queries(20)
    for q in queries:
        qe = QueryEmbedding.from_text(q["text"], 32)
        for mode in Mode:
            a = retrieve(g, store, qe, cfg, mode, q["qid"]).to_json()
            b = retrieve(fixture_graph(), hash_store(fixture_graph(), 32), qe, cfg, mode, q["qid"]).to_json()
            same += a == b
            sub = retrieve(g, store, qe, cfg, mode, q["qid"])
            seeded += set(sub.seeds) <= set(sub.graph.node_ids)
        seeds = select_seeds(g, store, qe, cfg)
        small = expand_multi_hop(g, store, qe, seeds, RetrievalConfig(k_frontier=3))
        big = expand_multi_hop(g, store, qe, seeds, RetrievalConfig(k_frontier=5))
        monotone += small <= big
    n = len(queries)
    ok = same == 2 * n and seeded == 2 * n and monotone == n
    return ok, f"{n} queries x 2 modes, identical {same}/{2 * n}, seeds kept {seeded}/{2 * n}, k_frontier 3 in 5 {monotone}/{n}"


def criterion_8() -> tuple[bool, str]:
    g, att = golden_fixture()
    scores = importance_scores(att)
    k = 3
    matches = 0
    for mode in ContextMode:
        text, _ = build_context(g, scores, ContextConfig(mode, k))
        matches += text == (GOLDEN / f"context.{mode.value}.txt").read_text(encoding="utf-8")
    text, _ = build_context(g, scores, ContextConfig(ContextMode.PCST_PLUS_TOP_K, k))
    markers = sum(line.startswith(MARKER) for line in text.splitlines())
    return matches == 3 and markers == k, f"golden matches {matches}/3, emphasis markers {markers} (k={k})"


FIGURE_SHARES = [0.252, 0.234, 0.114, 0.045, 0.04, 0.035, 0.03, 0.025, 0.02, 0.018]


def figure_fixture():
    """200 nodes: the ten listed shares, the remainder spread evenly over the
    other 190; raw scores are the shares scaled by 3.7 with alternating sign."""
    tail = (1.0 - sum(FIGURE_SHARES)) / 190
    values = np.array(FIGURE_SHARES + [tail] * 190) * 3.7
    values[1::2] *= -1
    perm = np.random.default_rng(9).permutation(200)  # scatter over node ids
    g = make_graph(200, [])
    return g, attribution_from_scores(g, values[perm])


def criterion_9() -> tuple[bool, str]:
    g, att = figure_fixture()
    got = top_share(importance_scores(att), 3)
    return abs(got - 0.60) <= 0.005, f"top_share(3) = {got:.4f} (target 0.60 +/- 0.005)"


CRITERIA = {i: globals()[f"criterion_{i}"] for i in range(1, 10)}


def _check(n: int) -> None:
    ok, detail = CRITERIA[n]()
    RESULTS[n] = (ok, detail)
    assert ok, f"criterion {n}: {detail}"


@pytest.mark.parametrize("n", range(1, 10))
def test_acceptance_criterion(n):
    _check(n)


def format_line(n: int, ok: bool, detail: str) -> str:
    return f"[{'PASS' if ok else 'FAIL'}] criterion {n}: {detail}"


if __name__ == "__main__":
    failed = 0
    for n, fn in CRITERIA.items():
        ok, detail = fn()
        failed += not ok
        print(format_line(n, ok, detail), flush=True)
    sys.exit(1 if failed else 0)
