from __future__ import annotations

import argparse
import logging
from pathlib import Path

from ..config import AppConfig
from ..errors import InputError
from ..services.corpus import CorpusStats, read_jsonl
from ..services.distribution import BucketCounts, BucketDistribution, write_distribution
from ..services.features import FeatureConfig, featurize, read_features, write_features
from ..services.tokenizer import tokenize, word_tokenize
from ..services.vocab import load_vocab
from .common import parse_orders

logger = logging.getLogger("gransel.handlers.features")


async def handle_featurize(args: argparse.Namespace, app: AppConfig) -> int:
    cfg = FeatureConfig(num_buckets=args.buckets, ngram_orders=parse_orders(args.ngram_orders) or (1, 2))
    if args.vocab is None and not args.words:
        raise InputError("featurize needs --vocab or --words")
    vocab = load_vocab(args.vocab) if args.vocab is not None else None

    stats = CorpusStats()
    args.out.parent.mkdir(parents=True, exist_ok=True)
    with args.out.open("w", encoding="utf-8") as out:
        for doc in read_jsonl(args.corpus, strict=args.strict, stats=stats, show_progress=app.progress):
            seq = tokenize(doc.text, vocab, doc.doc_id) if vocab is not None else word_tokenize(doc.text, doc.doc_id)
            write_features([featurize(seq, cfg)], out)

    logger.info(
        "Featurized %d documents into %s (%d bad lines, %d duplicate ids skipped)",
        stats.documents,
        args.out,
        stats.bad_lines,
        stats.duplicate_ids,
    )
    return 0


async def handle_estimate(args: argparse.Namespace, app: AppConfig) -> int:
    """
    estimate: sum the counts of one or more feature dumps, then smooth once.
    """
    counts = BucketCounts(args.buckets)
    for path in args.features:
        try:
            counts.add_all(read_features(path, args.buckets))
        except OSError as e:
            raise InputError(f"cannot read features {path}: {e}")
    dist = BucketDistribution.from_counts(counts, args.alpha)
    write_distribution(dist, args.out, corpus=",".join(str(p) for p in args.features), doc_count=counts.doc_count)
    logger.info("Wrote distribution over %d buckets (%d documents) to %s", dist.num_buckets, counts.doc_count, args.out)
    return 0


def register(subparsers: argparse._SubParsersAction) -> None:
    p = subparsers.add_parser("featurize", help="hashed n-gram features for a JSONL corpus")
    p.add_argument("--corpus", type=Path, nargs="+", required=True)
    p.add_argument("--vocab", type=Path, help="tokenize with this vocabulary")
    p.add_argument("--words", action="store_true", help="plain word n-grams instead of a vocabulary")
    p.add_argument("--buckets", type=int, default=10_000)
    p.add_argument("--ngram-orders", default="1,2")
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--strict", action="store_true")
    p.set_defaults(handler=handle_featurize)

    p = subparsers.add_parser("estimate", help="smoothed bucket distribution from feature dumps")
    p.add_argument("--features", type=Path, nargs="+", required=True)
    p.add_argument("--buckets", type=int, default=10_000)
    p.add_argument("--alpha", type=float, default=0.01)
    p.add_argument("--out", type=Path, required=True)
    p.set_defaults(handler=handle_estimate)
