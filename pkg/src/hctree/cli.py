"""Command-line interface: ``hctree build | query | eval | inspect``.

Results go to stdout, logs to stderr. Exit codes:

    0  success
    1  unexpected error
    2  usage error
    3  ingest (unreadable/undecodable corpus, empty corpus)
    4  provider (embedding or chat endpoint failure, cache)
    5  tree construction / invalid tree / vector errors
    6  search (bad k)
    7  index storage (missing files, checksum, format version)
    8  evaluation (mismatched query sets, bad judgments)
    9  prompt template
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from hctree import __version__
from hctree.cluster import build_tree, leaves_under
from hctree.config import CliConfig, resolve
from hctree.embed import EmbedderConfig, EmbeddingCache, cache_get_or_embed
from hctree.errors import EmptyCorpus, EvalError, HctreeError, ProviderError
from hctree.evalkit import compare_methods, read_judgments
from hctree.ingest import expand_corpus_paths, load_corpus
from hctree.querytransform import transform
from hctree.search import node_distances, retrieve, topk_baseline
from hctree.store import IndexManifest, load_index, save_index

log = logging.getLogger("hctree")

MODES = ("tree", "tree-qe", "topk")


def _escape(text: str) -> str:
    return text.replace("\\", "\\\\").replace("\n", "\\n").replace("\r", "\\r").replace("\t", "\\t")


def _emit(text: str) -> None:
    sys.stdout.write(text)
    sys.stdout.flush()


def _cache(cfg: CliConfig) -> EmbeddingCache | None:
    path = cfg.resolved_cache_dir()
    return EmbeddingCache(path) if path else None


# ---------------------------------------------------------------------------
# build

def cmd_build(args, cfg: CliConfig) -> int:
    t0 = time.perf_counter()
    paths = expand_corpus_paths(args.corpus)
    if not paths:
        raise EmptyCorpus(f"no corpus files found in {', '.join(args.corpus)}")
    chunk_cfg = cfg.chunk_config()
    docs, chunks = load_corpus(paths, chunk_cfg)
    if not chunks:
        raise EmptyCorpus("corpus produced no chunks")
    emb_cfg = cfg.embedder_config()
    cache = _cache(cfg)
    vectors = cache_get_or_embed([c.text for c in chunks], "document", emb_cfg, cache)
    t_embed = time.perf_counter()
    tree = build_tree(vectors, [c.chunk_id for c in chunks], [c.text for c in chunks],
                      representative=cfg.representative)
    t_tree = time.perf_counter()
    manifest = IndexManifest(dim=tree.dim, n_leaves=tree.n_leaves, embedder=emb_cfg.fingerprint(),
                             chunk_config=chunk_cfg.to_dict(), representative=cfg.representative)
    save_index(tree, chunks, manifest, args.out)
    log.info("timings: embed %.3fs, tree %.3fs, total %.3fs",
             t_embed - t0, t_tree - t_embed, time.perf_counter() - t0)
    hits = cache.stats.hits if cache else 0
    misses = cache.stats.misses if cache else len(chunks)
    _emit(f"index: {args.out}\n"
          f"documents: {len(docs)}\n"
          f"chunks: {tree.n_leaves}\n"
          f"nodes: {tree.n_nodes}\n"
          f"depth: {tree.height}\n"
          f"embeddings: {hits} cached, {misses} computed\n")
    return 0


# ---------------------------------------------------------------------------
# query

def _query_embedder(manifest: IndexManifest, cfg: CliConfig) -> EmbedderConfig:
    # vector-defining fields come from the index, transport from the run config
    fp = manifest.embedder
    return EmbedderConfig(provider=fp.get("provider", cfg.embed_provider),
                          model_id=fp.get("model_id", cfg.embed_model),
                          endpoint_url=cfg.embed_endpoint, dim=manifest.dim,
                          batch_size=cfg.embed_batch_size,
                          document_prefix=fp.get("document_prefix", ""),
                          query_prefix=fp.get("query_prefix", ""),
                          api_key_env=cfg.embed_api_key_env, seed=int(fp.get("seed", cfg.embed_seed)))


def cmd_query(args, cfg: CliConfig) -> int:
    tree, chunks, manifest = load_index(args.index)
    by_id = {c.chunk_id: c for c in chunks}
    query = args.query
    embedded_query = query
    if args.mode == "tree-qe":
        try:
            embedded_query = transform(query, cfg.transform_config("llm_extract"))
        except ProviderError as exc:
            if not cfg.qe_fallback_identity:
                raise
            log.warning("query extraction failed (%s); falling back to the original query", exc)
    if args.mode == "topk" and args.k is None:
        raise argparse.ArgumentTypeError("--k is required in topk mode")

    q = cache_get_or_embed([embedded_query], "query", _query_embedder(manifest, cfg), _cache(cfg))[0]
    out: dict = {"mode": args.mode, "query": query}
    if args.mode == "tree-qe":
        out["extracted_query"] = embedded_query

    if args.mode == "topk":
        hits = topk_baseline(tree.leaf_vectors, q, args.k, tree.leaf_chunk_ids)
        out["k"] = args.k
        out["chunks"] = [{"chunk_id": cid, "doc_id": by_id[cid].doc_id, "score": s, "text": by_id[cid].text}
                         for cid, s in hits]
    else:
        result = retrieve(tree, q, cfg.search_options())
        dist = node_distances(tree, q)
        pos = {int(c): k for k, c in enumerate(tree.leaf_chunk_ids)}
        out.update(best_node_id=result.best_node_id, best_distance=result.best_distance,
                   refined=result.refined)
        items = []
        for k, (cid, text) in enumerate(result.chunks):
            item = {"chunk_id": cid, "doc_id": by_id[cid].doc_id, "distance": float(dist[pos[cid]]),
                    "text": text}
            if result.scores is not None:
                item["score"] = result.scores[k]
            items.append(item)
        out["chunks"] = items

    if args.json:
        _emit(json.dumps(out, ensure_ascii=False, indent=2) + "\n")
        return 0
    lines = [f"mode: {args.mode}", f"query: {_escape(query)}"]
    if args.mode == "tree-qe":
        lines.append(f"extracted query: {_escape(embedded_query)}")
    if args.mode == "topk":
        lines.append(f"top {args.k} by inner product")
        lines += [f"{c['chunk_id']}\t{c['doc_id']}\tscore={c['score']:.6f}\t{_escape(c['text'])}"
                  for c in out["chunks"]]
    else:
        lines.append(f"best node: {out['best_node_id']} (distance {out['best_distance']:.6f}, "
                     f"{len(out['chunks'])} chunk{'s' if len(out['chunks']) != 1 else ''}"
                     f"{', MIPS-refined' if out['refined'] else ''})")
        lines += [f"{c['chunk_id']}\t{c['doc_id']}\tdistance={c['distance']:.6f}\t{_escape(c['text'])}"
                  for c in out["chunks"]]
    _emit("\n".join(lines) + "\n")
    return 0


# ---------------------------------------------------------------------------
# eval

def cmd_eval(args, cfg: CliConfig) -> int:
    runs = read_judgments(args.judgments)
    if args.methods:
        wanted = [m.strip() for m in args.methods.split(",") if m.strip()]
        missing = [m for m in wanted if m not in runs]
        if missing:
            raise EvalError(f"judgments file has no records for method(s) {', '.join(missing)}")
        runs = {m: runs[m] for m in wanted}
    if args.index:
        tree, _, _ = load_index(args.index)
        known = {int(c) for c in tree.leaf_chunk_ids}
        for method, judgments in runs.items():
            for j in judgments:
                unknown = (j.gold_chunk_ids | j.retrieved_chunk_ids) - known
                if unknown:
                    raise EvalError(f"{method}/{j.query_id}: chunk ids {sorted(unknown)[:5]} not in index")
    report = compare_methods(runs, args.baseline, beta=args.beta)
    if args.json_out:
        Path(args.json_out).write_text(report.to_json(), encoding="utf-8")
    if args.csv_out:
        Path(args.csv_out).write_text(report.differences_csv(), encoding="utf-8")
    _emit(report.render_table())
    return 0


# ---------------------------------------------------------------------------
# inspect

def cmd_inspect(args, cfg: CliConfig) -> int:
    tree, chunks, manifest = load_index(args.index)
    if args.stats:
        lines = [f"leaves: {tree.n_leaves}", f"nodes: {tree.n_nodes}", f"root: {tree.root_id}",
                 f"depth: {tree.height}", f"dim: {tree.dim}"]
        merges = np.array([r.distance for r in tree.linkage])
        if merges.size:
            counts, edges = np.histogram(merges, bins=args.bins)
            lines.append(f"merge distance histogram ({args.bins} bins):")
            for k, c in enumerate(counts):
                close = "]" if k == len(counts) - 1 else ")"
                lines.append(f"  [{edges[k]:.6f}, {edges[k + 1]:.6f}{close}  {c}")
        else:
            lines.append("merge distance histogram: no merges")
        _emit("\n".join(lines) + "\n")
        return 0

    node_id = tree.root_id if args.node == "root" else tree.check_id(args.node)
    node = tree.node(node_id)
    lines = [f"node: {node.id}"]
    if node.is_leaf:
        chunk = chunks[node_id - 1]
        lines += ["kind: leaf", f"chunk_id: {chunk.chunk_id}", f"doc_id: {chunk.doc_id}",
                  f"span: [{chunk.start}, {chunk.end})", f"text: {_escape(chunk.text)}"]
    else:
        lines += ["kind: internal", f"children: {node.children[0]}, {node.children[1]}",
                  f"size: {node.size}", f"merge_distance: {node.merge_distance:.6f}",
                  "leaves: " + ", ".join(str(c) for c in leaves_under(tree, node_id))]
    parent = int(tree.parent[node_id - 1])
    lines.append(f"parent: {parent if parent else '-'}")
    _emit("\n".join(lines) + "\n")
    return 0


# ---------------------------------------------------------------------------

def _add_config_flags(p: argparse.ArgumentParser, *groups: str) -> None:
    if "chunk" in groups:
        p.add_argument("--chunk-size", dest="chunk_size", type=int)
        p.add_argument("--chunk-overlap", dest="chunk_overlap", type=int)
        p.add_argument("--representative", choices=("leaf_mean", "children_mean"))
    if "embed" in groups:
        p.add_argument("--embed-provider", dest="embed_provider", choices=("remote_api", "deterministic_test"))
        p.add_argument("--embed-model", dest="embed_model")
        p.add_argument("--embed-endpoint", dest="embed_endpoint")
        p.add_argument("--embed-dim", dest="embed_dim", type=int)
        p.add_argument("--embed-batch-size", dest="embed_batch_size", type=int)
        p.add_argument("--embed-seed", dest="embed_seed", type=int)
        p.add_argument("--embed-api-key-env", dest="embed_api_key_env")
        p.add_argument("--document-prefix", dest="document_prefix")
        p.add_argument("--query-prefix", dest="query_prefix")
        p.add_argument("--cache-dir", dest="cache_dir")
        p.add_argument("--no-cache", dest="no_cache", action="store_const", const=True)
    if "search" in groups:
        p.add_argument("--mips-m", dest="mips_m", type=int, help="keep only the top-m chunks by inner product")
        p.add_argument("--exclude-root", dest="exclude_root", action="store_const", const=True)
        p.add_argument("--qe-endpoint", dest="qe_endpoint")
        p.add_argument("--qe-model", dest="qe_model")
        p.add_argument("--qe-api-key-env", dest="qe_api_key_env")
        p.add_argument("--qe-template", dest="qe_template",
                       help="shipped template name or path to a template file")
        p.add_argument("--qe-timeout", dest="qe_timeout", type=float)
        p.add_argument("--qe-fallback-identity", dest="qe_fallback_identity", action="store_const", const=True)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hctree", description="Hierarchical clustering tree retrieval")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("--config", help="key = value config file (or $HCTREE_CONFIG)")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    parser.add_argument("-q", "--quiet", action="store_true", help="warnings and errors only")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("build", help="chunk, embed and cluster a corpus into an index directory")
    p.add_argument("corpus", nargs="+", help="text/JSONL files or directories of them")
    p.add_argument("-o", "--out", required=True, help="index directory to write")
    _add_config_flags(p, "chunk", "embed")
    p.set_defaults(func=cmd_build)

    p = sub.add_parser("query", help="retrieve chunks for a query")
    p.add_argument("index")
    p.add_argument("query")
    p.add_argument("--mode", choices=MODES, default="tree")
    p.add_argument("--k", type=int, help="result count for topk mode")
    p.add_argument("--json", action="store_true", help="machine-readable output")
    _add_config_flags(p, "embed", "search")
    p.set_defaults(func=cmd_query)

    p = sub.add_parser("eval", help="score judgments and compare methods against a baseline")
    p.add_argument("judgments", help="JSONL judgments file")
    p.add_argument("--index", help="index directory used to validate chunk ids")
    p.add_argument("--methods", help="comma-separated subset of methods to include")
    p.add_argument("--baseline", default="origin")
    p.add_argument("--beta", type=float, default=4.0)
    p.add_argument("--json-out", help="write the full report as JSON")
    p.add_argument("--csv-out", help="write per-query differences as CSV")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("inspect", help="describe an index or one of its nodes")
    p.add_argument("index")
    g = p.add_mutually_exclusive_group(required=True)
    g.add_argument("--node", help="node id, or 'root'")
    g.add_argument("--stats", action="store_true")
    p.add_argument("--bins", type=int, default=10)
    p.set_defaults(func=cmd_inspect)
    return parser


def _setup_logging(args) -> None:
    level = logging.DEBUG if args.verbose else logging.WARNING if args.quiet else logging.INFO
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(logging.Formatter("%(levelname)s %(name)s: %(message)s"))
    root = logging.getLogger()
    root.handlers[:] = [handler]
    root.setLevel(level)
    logging.getLogger("httpx").setLevel(logging.WARNING)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    _setup_logging(args)
    try:
        cfg = resolve(vars(args), args.config)
    except (OSError, ValueError) as exc:
        log.error("configuration error: %s", exc)
        return 2
    log.info("resolved config: %s", json.dumps(cfg.to_dict(), ensure_ascii=False, sort_keys=True))
    try:
        return args.func(args, cfg)
    except argparse.ArgumentTypeError as exc:
        log.error("%s", exc)
        return 2
    except HctreeError as exc:
        log.error("%s: %s", type(exc).__name__, exc)
        return exc.exit_code
    except Exception:
        log.exception("unexpected error")
        return 1


if __name__ == "__main__":
    sys.exit(main())
