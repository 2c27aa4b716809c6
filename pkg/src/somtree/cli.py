"""Command-line surface: build, query, bench, and translate subcommands.

Exit codes: 0 success, 2 usage errors (argparse), 3 data errors, 4 broken
internal invariants. ``SOMTREE_SEED`` overrides the default --seed value.

Translate-mode artifacts are zip bundles holding the binary index plus the
two dictionaries (CSV dumps) and the aligned sentence lists, so a saved
translator is a single self-contained file.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import os
import struct
import sys
import time
import zipfile
from dataclasses import dataclass

import numpy as np

from . import ingest
from .bench import run_bench
from .core import L2, Metric, Record, RecordStore, load_csv
from .errors import InvalidIndex, SomTreeError
from .index import BuildConfig, SomTreeIndex, build_tree, insert
from .ingest import PairCorpus, TokenDictionary
from .query import QueryParams, classify, regress, search
from .som import SomParams, SomTopology
from .storage import deserialize_index, load_index, save_index, serialize_index


def _default_seed() -> int:
    return int(os.environ.get("SOMTREE_SEED", "0"))


def _metric_arg(text: str) -> Metric:
    try:
        return Metric.parse(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc))


def _branching_arg(text: str) -> tuple[int, int]:
    try:
        topo = SomTopology.parse(text)
        return topo.rank, topo.side
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc))


def _add_build_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--branching", type=_branching_arg, default=(1, 10),
                   help="split topology per level, e.g. 1d:10, 2d:4, 3d:3")
    p.add_argument("--depth", type=int, default=5, help="maximum tree depth")
    p.add_argument("--min-leaf", type=int, default=1, help="stop splitting at this size")
    p.add_argument("--metric", type=_metric_arg, default=L2,
                   help="query metric: l2, l1, cosine, minkowski:<p>")
    p.add_argument("--grid-metric", choices=["euclid", "euclidean", "manhattan"],
                   default="euclidean", help="lattice distance for 2d/3d maps")
    p.add_argument("--epochs", type=int, default=20)
    p.add_argument("--alpha0", type=float, default=0.5)
    p.add_argument("--sigma0", type=float, default=None)
    p.add_argument("--seed", type=int, default=_default_seed())


def _config_from_args(args) -> BuildConfig:
    rank, side = args.branching
    grid = "manhattan" if args.grid_metric == "manhattan" else "euclidean"
    return BuildConfig(
        branching=SomTopology(rank=rank, side=side, grid_metric=grid),
        max_depth=args.depth,
        min_leaf_size=args.min_leaf,
        metric=args.metric,
        som_params=SomParams(
            epochs=args.epochs, alpha0=args.alpha0, sigma0=args.sigma0, seed=args.seed
        ),
    )


def _load_dataset(csv_path, images, labels, parser) -> RecordStore:
    if csv_path:
        return load_csv(csv_path)
    if images and labels:
        return ingest.load_idx(images, labels)
    parser.error("need --input CSV or both --images and --labels")


# --- build ------------------------------------------------------------------


def cmd_build(args, parser) -> int:
    store = _load_dataset(args.input, args.images, args.labels, parser)
    config = _config_from_args(args)
    t0 = time.perf_counter()
    index = build_tree(store, config)
    build_seconds = time.perf_counter() - t0
    save_index(index, args.out)
    print(
        json.dumps(
            {
                "nodes": len(index.nodes),
                "leaves": len(index.leaves()),
                "records": index.record_count,
                "dim": index.dim,
                "build_seconds": round(build_seconds, 3),
                "out": str(args.out),
            },
            sort_keys=True,
        )
    )
    return 0


# --- query ------------------------------------------------------------------


def _query_vectors(args, parser) -> list[np.ndarray]:
    if args.vector is not None:
        return [np.array([float(v) for v in args.vector.split(",")], dtype=np.float64)]
    if args.input:
        vectors = []
        with open(args.input, newline="", encoding="utf-8") as fh:
            for row in csv.reader(line for line in fh if not line.startswith("#")):
                if row:
                    vectors.append(np.array([float(v) for v in row[3:]], dtype=np.float64))
        return vectors
    parser.error("need --vector or --input")


def query_result_json(index: SomTreeIndex, result) -> str:
    label = None
    response = None
    if not result.rejected and result.neighbors:
        rows = [index.store.row_of(nb.record_id) for nb in result.neighbors]
        if all(index.store.labels[r] is not None for r in rows):
            label = classify(index, result)
        if all(np.isfinite(index.store.responses[r]) for r in rows):
            response = regress(index, result)
    return json.dumps(
        {
            "ids": [nb.record_id for nb in result.neighbors],
            "distances": [nb.distance for nb in result.neighbors],
            "similarities": [nb.similarity for nb in result.neighbors],
            "rejected": result.rejected,
            "label": label,
            "response": response,
        },
        sort_keys=True,
    )


def cmd_query(args, parser) -> int:
    index = load_index(args.index)
    params = QueryParams(k=args.k, beam=args.beam, min_similarity=args.min_similarity)
    for q in _query_vectors(args, parser):
        print(query_result_json(index, search(index, q, params)))
    return 0


# --- bench ------------------------------------------------------------------


def cmd_bench(args, parser) -> int:
    train = _load_dataset(args.train_csv, args.train_images, args.train_labels, parser)
    test = _load_dataset(args.test_csv, args.test_images, args.test_labels, parser)
    name = args.name or os.path.basename(
        str(args.train_csv or args.train_images or "dataset")
    )
    report = run_bench(
        train,
        test,
        _config_from_args(args),
        k=args.k,
        beam=args.beam,
        sample=args.sample,
        seed=args.seed,
        threads=args.threads,
        dataset=name,
    )
    print(report.table())
    print(report.to_json())
    return 0


# --- translate --------------------------------------------------------------


@dataclass
class TranslateBundle:
    index: SomTreeIndex
    source_dict: TokenDictionary
    target_dict: TokenDictionary
    pairs: list[tuple[str, str]]


def _dict_to_csv_text(d: TokenDictionary) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    for rank, (token, freq) in enumerate(d.tokens):
        writer.writerow([rank, token, freq])
    return buf.getvalue()


def _dict_from_csv_text(text: str) -> TokenDictionary:
    rows = sorted(
        ((int(r), tok, int(f)) for r, tok, f in csv.reader(io.StringIO(text))),
        key=lambda r: r[0],
    )
    return TokenDictionary(
        tokens=tuple((tok, f) for _, tok, f in rows),
        index_of={tok: rank for rank, tok, _ in rows},
    )


def save_bundle(bundle: TranslateBundle, path) -> None:
    with zipfile.ZipFile(path, "w", zipfile.ZIP_DEFLATED) as zf:
        zf.writestr("index.somt", serialize_index(bundle.index))
        zf.writestr("source_dict.csv", _dict_to_csv_text(bundle.source_dict))
        zf.writestr("target_dict.csv", _dict_to_csv_text(bundle.target_dict))
        zf.writestr("source.txt", "\n".join(src for src, _ in bundle.pairs) + "\n")
        zf.writestr("target.txt", "\n".join(tgt for _, tgt in bundle.pairs) + "\n")


def load_bundle(path) -> TranslateBundle:
    with zipfile.ZipFile(path) as zf:
        index = deserialize_index(zf.read("index.somt"))
        source_dict = _dict_from_csv_text(zf.read("source_dict.csv").decode("utf-8"))
        target_dict = _dict_from_csv_text(zf.read("target_dict.csv").decode("utf-8"))
        sources = zf.read("source.txt").decode("utf-8").splitlines()
        targets = zf.read("target.txt").decode("utf-8").splitlines()
    return TranslateBundle(
        index=index,
        source_dict=source_dict,
        target_dict=target_dict,
        pairs=list(zip(sources, targets)),
    )


def build_translator(corpus: PairCorpus, config: BuildConfig) -> TranslateBundle:
    index = build_tree(ingest.source_records(corpus), config)
    return TranslateBundle(
        index=index,
        source_dict=corpus.source_dict,
        target_dict=corpus.target_dict,
        pairs=list(corpus.pairs),
    )


def add_pair(bundle: TranslateBundle, src: str, tgt: str, tau_new: float) -> None:
    """Fine-tune without rebuilding: grow the dictionaries, insert one record."""
    bundle.source_dict = ingest.update_dictionary(bundle.source_dict, [src])
    bundle.target_dict = ingest.update_dictionary(bundle.target_dict, [tgt])
    pair_idx = len(bundle.pairs)
    bundle.pairs.append((src, tgt))
    vec = ingest.vectorize_sentence(bundle.source_dict, src).astype(np.float64)
    record = Record(id=pair_idx, features=vec, payload=struct.pack("<Q", pair_idx))
    insert(bundle.index, record, tau_new)


def translate_line(bundle: TranslateBundle, line: str, params: QueryParams) -> list[str]:
    """Output lines for one input sentence: alternatives or a rejection marker."""
    vec = ingest.vectorize_sentence(bundle.source_dict, line).astype(np.float64)
    result = search(bundle.index, vec, params)
    if result.rejected:
        return ["<REJECTED>"]
    out = []
    for nb in result.neighbors:
        row = bundle.index.store.row_of(nb.record_id)
        (pair_idx,) = struct.unpack("<Q", bundle.index.store.payloads[row])
        out.append(f"{nb.similarity:.6f}\t{bundle.pairs[pair_idx][1]}")
    return out


def cmd_translate(args, parser, stdin=None, stdout=None) -> int:
    stdin = stdin if stdin is not None else sys.stdin
    stdout = stdout if stdout is not None else sys.stdout
    if args.index:
        bundle = load_bundle(args.index)
    elif args.source and args.target:
        corpus = ingest.load_parallel_corpus(args.source, args.target)
        bundle = build_translator(corpus, bundle_config(args))
    else:
        parser.error("need --index or both --source and --target")

    for pair_text in args.add_pair or []:
        src, sep, tgt = pair_text.partition("|||")
        if not sep:
            parser.error('--add-pair expects "source|||target"')
        add_pair(bundle, src, tgt, args.min_similarity)

    if args.save_index:
        save_bundle(bundle, args.save_index)

    params = QueryParams(
        k=args.n_alternatives, beam=args.beam, min_similarity=args.min_similarity
    )
    for line in stdin:
        line = line.rstrip("\n").rstrip("\r")
        for out_line in translate_line(bundle, line, params):
            print(out_line, file=stdout)
        stdout.flush()
    return 0


def bundle_config(args) -> BuildConfig:
    rank, side = args.branching
    return BuildConfig(
        branching=SomTopology(rank=rank, side=side),
        max_depth=args.depth,
        metric=L2,
        som_params=SomParams(seed=args.seed),
    )


# --- entry ------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="somtree",
        description="Hierarchical SOM-tree nearest-neighbor search",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("build", help="build an index from CSV or IDX data")
    p.add_argument("--input", help="CSV dataset: id,label,response,f1,...,fn")
    p.add_argument("--images", help="IDX image file (MNIST format)")
    p.add_argument("--labels", help="IDX label file (MNIST format)")
    _add_build_flags(p)
    p.add_argument("--out", required=True, help="index file to write")

    p = sub.add_parser("query", help="query a saved index")
    p.add_argument("--index", required=True)
    p.add_argument("--k", type=int, default=1)
    p.add_argument("--beam", type=int, default=1)
    p.add_argument("--min-similarity", type=float, default=0.0)
    p.add_argument("--vector", help='query vector "v1,v2,..."')
    p.add_argument("--input", help="CSV batch of queries (record format)")

    p = sub.add_parser("bench", help="brute force vs tree benchmark")
    p.add_argument("--train-csv")
    p.add_argument("--train-images")
    p.add_argument("--train-labels")
    p.add_argument("--test-csv")
    p.add_argument("--test-images")
    p.add_argument("--test-labels")
    _add_build_flags(p)
    p.add_argument("--k", type=int, default=1)
    p.add_argument("--beam", type=int, default=1)
    p.add_argument("--sample", type=int, default=None,
                   help="subsample this many test queries (seeded)")
    p.add_argument("--threads", type=int, default=1,
                   help="extra multi-threaded brute pass when > 1")
    p.add_argument("--name", default=None, help="dataset name for the report")

    p = sub.add_parser("translate", help="retrieval translator REPL")
    p.add_argument("--source", help="source-language sentences, one per line")
    p.add_argument("--target", help="target-language sentences, one per line")
    p.add_argument("--index", help="saved translator bundle (zip)")
    p.add_argument("--save-index", help="write the translator bundle here")
    p.add_argument("--min-similarity", type=float, default=0.5)
    p.add_argument("--n-alternatives", type=int, default=3)
    p.add_argument("--beam", type=int, default=1)
    p.add_argument("--add-pair", action="append", metavar="SRC|||TGT",
                   help="insert one new sentence pair before the REPL starts")
    p.add_argument("--branching", type=_branching_arg, default=(1, 10))
    p.add_argument("--depth", type=int, default=5)
    p.add_argument("--seed", type=int, default=_default_seed())

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    handlers = {
        "build": cmd_build,
        "query": cmd_query,
        "bench": cmd_bench,
        "translate": cmd_translate,
    }
    try:
        return handlers[args.command](args, parser)
    except (InvalidIndex, AssertionError) as exc:
        print(f"somtree: internal invariant violation: {exc}", file=sys.stderr)
        return 4
    except (SomTreeError, OSError, ValueError, zipfile.BadZipFile, KeyError) as exc:
        print(f"somtree: error: {exc}", file=sys.stderr)
        return 3


def entry() -> None:
    sys.exit(main(sys.argv[1:]))


if __name__ == "__main__":
    sys.exit(main(sys.argv[1:]))
