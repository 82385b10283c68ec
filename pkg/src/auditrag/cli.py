"""``auditrag`` command line: build, retrieve, train, attribute, audit, report.

Exit codes: 0 success, 1 usage/config error, 2 data error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
import tempfile
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Callable, Iterable

import numpy as np

from . import __version__
from .audit import ContextConfig, ContextMode, audit_query, build_context, importance_scores
from .config import RunConfig
from .embedding import (
    EmbeddingStore,
    QueryEmbedding,
    load_embeddings_binary,
    load_embeddings_text,
    write_embeddings_text,
)
from .errors import ConfigError, DataError, NumericError
from .graph_store import KnowledgeGraph, load_graph, write_graph
from .mgnan import (
    Attribution,
    FeatureGrouping,
    MGnanModel,
    Sample,
    encode,
    load_model,
    make_planted_task,
    save_model,
    train,
)
from .retrieval import Mode, RetrievedSubgraph, retrieve
from .synthetic import node_text

logger = logging.getLogger("auditrag")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# -- io helpers -------------------------------------------------------------


def write_atomic(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_json(path: Path, obj) -> None:
    write_atomic(path, json.dumps(obj, indent=2, ensure_ascii=False) + "\n")


def sha256_file(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def read_jsonl(path: Path) -> list[dict]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if line.strip():
                try:
                    out.append(json.loads(line))
                except json.JSONDecodeError as exc:
                    raise DataError(f"{path}:{lineno}: malformed JSON ({exc.msg})") from None
    return out


def _safe_name(qid: str) -> str:
    return "".join(c if c.isalnum() or c in "-_." else "_" for c in qid) or "_"


def load_bundle(directory: Path) -> tuple[KnowledgeGraph, EmbeddingStore]:
    directory = Path(directory)
    if not (directory / "manifest.json").exists():
        raise DataError(f"{directory} is not a graph bundle (no manifest.json)")
    kg = load_graph(directory / "nodes.jsonl", directory / "edges.jsonl")
    store = load_embeddings_text(directory / "embeddings.txt")
    store.check_covers(kg.node_ids)
    return kg, store


def load_subgraphs(directory: Path, kg: KnowledgeGraph) -> list[RetrievedSubgraph]:
    files = sorted(p for p in Path(directory).glob("*.json") if p.name != "manifest.json")
    if not files:
        raise DataError(f"no subgraph files in {directory}")
    return [RetrievedSubgraph.from_dict(json.loads(p.read_text(encoding="utf-8")), kg) for p in files]


def run_queries(items: list, fn: Callable, jobs: int) -> list[tuple[str, str]]:
    """Apply ``fn`` per item (possibly in parallel); returns (qid, error) for
    the failures in input order."""

    def guarded(item):
        try:
            fn(item)
            return None
        except (DataError, NumericError, ValueError) as exc:
            qid = item.get("qid") if isinstance(item, dict) else getattr(item, "qid", "?")
            return (str(qid), str(exc))

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(guarded, items))
    else:
        results = [guarded(it) for it in items]
    return [r for r in results if r is not None]


def _finish(out: Path, kind: str, cfg: RunConfig, qids: Iterable[str], failures, extra=None) -> int:
    manifest = {
        "kind": kind,
        "version": __version__,
        "config": cfg.echo(),
        "queries": sorted(qids),
        "failures": [{"qid": q, "error": e} for q, e in failures],
    }
    if extra:
        manifest.update(extra)
    write_json(out / "manifest.json", manifest)
    for q, e in failures:
        print(f"{kind}: query {q} failed: {e}", file=sys.stderr)
    return EXIT_DATA if failures else EXIT_OK


def _out_dir(args, cfg: RunConfig) -> Path:
    out = args.out or cfg.get("paths", "out")
    if not out:
        raise UsageError("an output location is required (--out)")
    return Path(out)


def _path(args, cfg: RunConfig, attr: str, key: str | None = None) -> Path:
    val = getattr(args, attr, None) or (cfg.get("paths", key) if key else None)
    if not val:
        raise UsageError(f"--{attr.replace('_', '-')} is required")
    path = Path(val)
    if not path.exists():
        raise DataError(f"{path} does not exist")
    return path


# -- subcommands ------------------------------------------------------------


def cmd_build(args, cfg: RunConfig) -> int:
    out = _out_dir(args, cfg)
    kg = load_graph(_path(args, cfg, "nodes"), _path(args, cfg, "edges"))
    if args.embeddings:
        store = load_embeddings_text(_path(args, cfg, "embeddings", "embeddings"))
    elif args.embeddings_bin:
        store = load_embeddings_binary(args.embeddings_bin, _path(args, cfg, "embeddings_index"))
    elif args.hash_dim:
        store = EmbeddingStore.from_texts({n.id: node_text(n) for n in kg.nodes}, args.hash_dim)
    elif cfg.get("paths", "embeddings"):
        store = load_embeddings_text(cfg.get("paths", "embeddings"))
    else:
        raise UsageError("one of --embeddings, --embeddings-bin or --hash-dim is required")
    store.check_covers(kg.node_ids)
    if len(store) != len(kg):
        store = EmbeddingStore({nid: store.vector(nid) for nid in kg.node_ids}, store.dim)

    out.mkdir(parents=True, exist_ok=True)
    with tempfile.TemporaryDirectory(dir=out) as tmp:
        tmp = Path(tmp)
        write_graph(kg, tmp / "nodes.jsonl", tmp / "edges.jsonl")
        write_embeddings_text(store, tmp / "embeddings.txt")
        for name in ("nodes.jsonl", "edges.jsonl", "embeddings.txt"):
            os.replace(tmp / name, out / name)
    files = ("nodes.jsonl", "edges.jsonl", "embeddings.txt")
    write_json(out / "manifest.json", {
        "kind": "bundle",
        "version": __version__,
        "nodes": len(kg),
        "edges": len(kg.edges),
        "dim": store.dim,
        "self_loops_dropped": kg.stats.self_loops_dropped,
        "duplicates_dropped": kg.stats.duplicates_dropped,
        "checksums": {name: sha256_file(out / name) for name in files},
    })
    print(f"bundle: {len(kg)} nodes, {len(kg.edges)} edges, dim={store.dim} -> {out}")
    return EXIT_OK


def cmd_retrieve(args, cfg: RunConfig) -> int:
    out = _out_dir(args, cfg)
    rcfg = cfg.retrieval()
    mode = Mode(cfg.get("retrieval", "mode"))
    qseed = cfg.get("retrieval", "query_seed")
    kg, store = load_bundle(_path(args, cfg, "graph", "graph"))
    queries = read_jsonl(_path(args, cfg, "queries", "queries"))
    for q in queries:
        if not isinstance(q.get("qid"), str) or not isinstance(q.get("text"), str):
            raise DataError("query lines need string fields 'qid' and 'text'")

    def one(q):
        emb = QueryEmbedding.from_text(q["text"], store.dim, qseed)
        sub = retrieve(kg, store, emb, rcfg, mode, qid=q["qid"])
        write_atomic(out / f"{_safe_name(q['qid'])}.json", sub.to_json())

    failures = run_queries(queries, one, args.jobs)
    return _finish(out, "retrieve", cfg, [q["qid"] for q in queries], failures, {"mode": mode.value})


def _model_from_cfg(cfg: RunConfig, dim: int) -> MGnanModel:
    m = cfg.values["model"]
    grouping = FeatureGrouping.contiguous(dim, int(m["groups"]))
    return MGnanModel(grouping, cfg.hidden(), m["n_outputs"], m["link"], m["n_knots"], cfg.get("train", "seed"))


def cmd_train(args, cfg: RunConfig) -> int:
    out = _out_dir(args, cfg)
    tcfg = cfg.train()
    cfg.hidden()
    if args.planted:
        task = make_planted_task(args.n_graphs, args.nodes_per_graph, args.planted, cfg.get("train", "seed"), args.dim)
        samples, dim = task.samples, task.dim
    else:
        kg, store = load_bundle(_path(args, cfg, "graph", "graph"))
        subs = {s.qid: s for s in load_subgraphs(_path(args, cfg, "subgraphs"), kg)}
        samples = []
        for row in read_jsonl(_path(args, cfg, "targets")):
            if row.get("qid") not in subs:
                raise DataError(f"target for unknown query {row.get('qid')!r}")
            samples.append(Sample.from_subgraph(subs[row["qid"]], store, row["target"]))
        dim = store.dim
    model = _model_from_cfg(cfg, dim)
    model, curve = train(model, samples, tcfg)
    out.mkdir(parents=True, exist_ok=True)
    tmp = out / ".model.json.tmp"
    save_model(model, tmp)
    os.replace(tmp, out / "model.json")
    write_json(out / "loss_curve.json", {"epoch_loss": curve})
    write_json(out / "manifest.json", {
        "kind": "train", "version": __version__, "config": cfg.echo(), "samples": len(samples),
        "final_loss": curve[-1] if curve else None,
    })
    print(f"trained on {len(samples)} graphs, final loss {curve[-1] if curve else float('nan'):.6g}")
    return EXIT_OK


def cmd_attribute(args, cfg: RunConfig) -> int:
    out = _out_dir(args, cfg)
    kg, store = load_bundle(_path(args, cfg, "graph", "graph"))
    subs = load_subgraphs(_path(args, cfg, "subgraphs"), kg)
    model = load_model(_path(args, cfg, "model"))

    def one(sub):
        _, att = encode(model, sub, store, check=True)
        if not np.all(np.isfinite(att.terms)):
            raise NumericError(f"non-finite attribution for query {sub.qid}")
        write_json(out / f"{_safe_name(sub.qid)}.json", att.to_dict(sub.qid))

    failures = run_queries(subs, one, args.jobs)
    return _finish(out, "attribute", cfg, [s.qid for s in subs], failures)


def cmd_audit(args, cfg: RunConfig) -> int:
    out = _out_dir(args, cfg)
    acfg = cfg.audit()
    ccfg = cfg.context()
    kg, _ = load_bundle(_path(args, cfg, "graph", "graph"))
    subs = load_subgraphs(_path(args, cfg, "subgraphs"), kg)
    att_dir = _path(args, cfg, "attributions")

    def one(sub):
        att_path = att_dir / f"{_safe_name(sub.qid)}.json"
        if not att_path.exists():
            raise DataError(f"no attribution file for query {sub.qid}")
        att = Attribution.from_dict(json.loads(att_path.read_text(encoding="utf-8")))
        report = audit_query(sub, att, acfg, qid=sub.qid)
        stem = _safe_name(sub.qid)
        write_json(out / f"{stem}.audit.json", report.to_dict())
        write_atomic(out / f"{stem}.importance.csv", report.importance_csv())
        write_atomic(out / f"{stem}.structure.csv", report.structure_csv())
        scores = importance_scores(att, acfg.reduction)
        k = min(ccfg.k, len(sub.graph))
        for mode in ContextMode:
            text, _ = build_context(sub, scores, ContextConfig(mode, k))
            write_atomic(out / f"{stem}.context.{mode.value}.txt", text)

    failures = run_queries(subs, one, args.jobs)
    return _finish(out, "audit", cfg, [s.qid for s in subs], failures)


def cmd_report(args, cfg: RunConfig) -> int:
    out = _out_dir(args, cfg)
    audit_dir = _path(args, cfg, "audits")
    reports = [json.loads(p.read_text(encoding="utf-8")) for p in sorted(audit_dir.glob("*.audit.json"))]
    if not reports:
        raise DataError(f"no audit reports in {audit_dir}")
    common = set.intersection(*(set(r["top_share"]) for r in reports))
    mean_share = {k: float(np.mean([r["top_share"][k] for r in reports])) for k in sorted(common, key=int)}
    freq: dict[int, dict] = {}
    for r in reports:
        for b in r["bridges"]:
            row = freq.setdefault(b["node"], {"node": b["node"], "name": b["name"], "count": 0,
                                              "articulation_count": 0, "betweenness_sum": 0.0})
            row["count"] += 1
            row["articulation_count"] += int(b["is_articulation"])
            row["betweenness_sum"] += b["betweenness"]
    table = sorted(freq.values(), key=lambda r: (-r["count"], r["node"]))
    for row in table:
        row["mean_betweenness"] = row.pop("betweenness_sum") / row["count"]
    summary = {
        "kind": "report",
        "version": __version__,
        "queries": len(reports),
        "mean_top_share": mean_share,
        "mean_fragmentation_delta": float(np.mean([r["fragmentation_delta"] for r in reports])),
        "mean_disconnect_fraction": float(np.mean([r["disconnect_fraction"] for r in reports])),
        "bridge_frequency": table,
    }
    write_json(out / "summary.json", summary)
    lines = ["node_id,name,count,articulation_count,mean_betweenness"]
    lines += [f"{r['node']},{r['name']},{r['count']},{r['articulation_count']},{r['mean_betweenness']!r}" for r in table]
    write_atomic(out / "bridge_frequency.csv", "\n".join(lines) + "\n")
    print(f"report over {len(reports)} queries -> {out}")
    return EXIT_OK


# -- parser -----------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    # SUPPRESS keeps a subparser from resetting a global flag given before
    # the subcommand name
    common = argparse.ArgumentParser(add_help=False, argument_default=argparse.SUPPRESS)
    common.add_argument("--config", help="INI config file")
    common.add_argument("--seed", type=int, help="training / initialization seed")
    common.add_argument("--jobs", type=int, help="parallel workers over queries (default 1)")
    common.add_argument("--out", help="output directory")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = _Parser(prog="auditrag", description=__doc__.splitlines()[0], parents=[common])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("build", parents=[common], help="validate inputs into a graph bundle")
    p.add_argument("--nodes", required=True)
    p.add_argument("--edges", required=True)
    p.add_argument("--embeddings", help="text embedding file")
    p.add_argument("--embeddings-bin", help="float32 embedding blob")
    p.add_argument("--embeddings-index", help="sidecar index for --embeddings-bin")
    p.add_argument("--hash-dim", type=int, help="generate hash embeddings of this dimension")
    p.set_defaults(func=cmd_build)

    p = sub.add_parser("retrieve", parents=[common], help="retrieve question-specific subgraphs")
    p.add_argument("--graph", help="graph bundle directory")
    p.add_argument("--queries", help="queries JSONL")
    p.add_argument("--mode", choices=[m.value for m in Mode])
    p.add_argument("--k-seeds", type=int)
    p.add_argument("--hops", type=int)
    p.add_argument("--k-frontier", help="frontier budget per node, or 'inf'")
    p.add_argument("--prize-pool", type=int)
    p.add_argument("--merge-pool", type=int)
    p.add_argument("--edge-cost", type=float)
    p.add_argument("--prize-scale", type=float)
    p.add_argument("--prize-scheme", choices=["rank", "similarity"])
    p.add_argument("--query-seed", type=int)
    p.set_defaults(func=cmd_retrieve)

    p = sub.add_parser("train", parents=[common], help="train the additive encoder")
    p.add_argument("--graph")
    p.add_argument("--subgraphs")
    p.add_argument("--targets", help="JSONL of {qid, target}")
    p.add_argument("--planted", type=int, help="train on a synthetic planted task with this many planted nodes")
    p.add_argument("--n-graphs", type=int, default=200)
    p.add_argument("--nodes-per-graph", type=int, default=30)
    p.add_argument("--dim", type=int, default=32)
    p.add_argument("--lr", type=float)
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--hidden", help="comma-separated hidden widths")
    p.add_argument("--link", choices=["identity", "sigmoid", "softmax"])
    p.add_argument("--n-outputs", type=int)
    p.add_argument("--n-knots", type=int)
    p.add_argument("--groups", type=int)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("attribute", parents=[common], help="exact per-node attribution")
    p.add_argument("--graph")
    p.add_argument("--subgraphs")
    p.add_argument("--model")
    p.set_defaults(func=cmd_attribute)

    p = sub.add_parser("audit", parents=[common], help="importance, fragmentation and bridge audit")
    p.add_argument("--graph")
    p.add_argument("--subgraphs")
    p.add_argument("--attributions")
    p.add_argument("--k", type=int, help="top-k size for audit and context")
    p.add_argument("--bridges", type=int)
    p.add_argument("--reduction", choices=["abs0", "norm", "signed"])
    p.add_argument("--include-neighbors", action="store_true", default=None)
    p.add_argument("--context-mode", choices=[m.value for m in ContextMode])
    p.set_defaults(func=cmd_audit)

    p = sub.add_parser("report", parents=[common], help="aggregate audit reports")
    p.add_argument("--audits")
    p.set_defaults(func=cmd_report)
    return parser


def _overrides(args) -> dict:
    g = lambda name: getattr(args, name, None)  # noqa: E731
    return {
        "paths": {"graph": g("graph"), "queries": g("queries"), "out": g("out")},
        "retrieval": {
            "mode": g("mode"), "k_seeds": g("k_seeds"), "hops": g("hops"), "k_frontier": g("k_frontier"),
            "prize_pool": g("prize_pool"), "merge_pool": g("merge_pool"), "edge_cost": g("edge_cost"),
            "prize_scale": g("prize_scale"), "prize_scheme": g("prize_scheme"), "query_seed": g("query_seed"),
        },
        "model": {"hidden": g("hidden"), "link": g("link"), "n_outputs": g("n_outputs"),
                  "n_knots": g("n_knots"), "groups": g("groups")},
        "train": {"seed": g("seed"), "lr": g("lr"), "epochs": g("epochs"), "batch_size": g("batch_size")},
        "context": {"mode": g("context_mode"), "k": g("k")},
        "audit": {"k": g("k"), "bridges": g("bridges"), "reduction": g("reduction"),
                  "include_neighbors": g("include_neighbors")},
    }


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # usage errors, --help, --version
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE
    for name, default in (("config", None), ("seed", None), ("jobs", 1), ("out", None), ("verbose", False)):
        if not hasattr(args, name):
            setattr(args, name, default)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.jobs < 1:
            raise UsageError("--jobs must be positive")
        cfg = RunConfig.load(args.config, _overrides(args))
        return args.func(args, cfg)
    except (UsageError, ConfigError) as exc:
        print(f"auditrag: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericError as exc:
        print(f"auditrag: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DataError, OSError) as exc:
        print(f"auditrag: {exc}", file=sys.stderr)
        return EXIT_DATA
    except ValueError as exc:
        print(f"auditrag: {exc}", file=sys.stderr)
        return EXIT_USAGE


def main_exit() -> None:
    sys.exit(main())


if __name__ == "__main__":
    main_exit()
