from __future__ import annotations

import argparse
import csv
import json
import logging
from pathlib import Path
from typing import List

import numpy as np

from ..config import AppConfig
from ..errors import ConfigError
from ..services.corpus import read_jsonl, read_texts, shard_of
from ..services.distribution import read_distribution
from ..services.features import read_features, stack_features
from ..services.pipeline import ShardPool, select_shards, write_selected_ids, write_weights
from ..services.sampler import log_importance_weights
from ..services.tokenizer import nsl, sequence_lengths
from ..services.vocab import load_vocab
from .common import check_seed

logger = logging.getLogger("gransel.handlers.selection")


async def handle_select(args: argparse.Namespace, app: AppConfig) -> int:
    """
    select:
    - weights every document of a feature dump against target/raw distributions
    - shards are assigned round-robin by line position in the dump
    """
    seed = check_seed(args.seed)
    if args.k < 1:
        raise ConfigError(f"k must be >= 1, got {args.k}")
    if args.num_shards < 1:
        raise ConfigError(f"num_shards must be >= 1, got {args.num_shards}")

    target, _ = read_distribution(args.target)
    raw, _ = read_distribution(args.raw)

    ids, matrix = stack_features(list(read_features(args.features, target.num_buckets)), target.num_buckets)
    weights = log_importance_weights(matrix, target, raw) if ids else np.zeros(0)

    positions: List[List[int]] = [[] for _ in range(args.num_shards)]
    for i in range(len(ids)):
        positions[shard_of(i, args.num_shards)].append(i)
    pools = [
        ShardPool(shard_id=s, doc_ids=[ids[i] for i in rows], log_weights=weights[rows])
        for s, rows in enumerate(positions)
    ]

    outcome = select_shards(pools, args.k, seed, args.mode)
    write_selected_ids(outcome.selected, args.out)
    if args.weights:
        write_weights(pools, args.weights)
    if args.emit_docs:
        if not args.corpus:
            raise ConfigError("--emit-docs needs --corpus")
        chosen = set(outcome.selected)
        with args.emit_docs.open("w", encoding="utf-8") as f:
            for doc in read_jsonl(args.corpus):
                if doc.doc_id in chosen:
                    f.write(json.dumps({"id": doc.doc_id, "text": doc.text}, ensure_ascii=False) + "\n")

    logger.info("Selected %d of %d documents into %s", len(outcome.selected), len(ids), args.out)
    return 0


async def handle_nsl(args: argparse.Namespace, app: AppConfig) -> int:
    candidate = load_vocab(args.candidate_vocab)
    reference = load_vocab(args.reference_vocab)
    docs = read_texts(args.docs)
    cand_lengths = sequence_lengths(docs, candidate)
    ref_lengths = sequence_lengths(docs, reference)
    ratio = nsl(cand_lengths, ref_lengths)
    if args.per_doc:
        with args.per_doc.open("w", encoding="utf-8", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(["doc_index", "candidate_tokens", "reference_tokens"])
            writer.writerows(zip(range(len(docs)), cand_lengths, ref_lengths))
    print(f"{ratio:.6f}")
    return 0


def register(subparsers: argparse._SubParsersAction) -> None:
    p = subparsers.add_parser("select", help="importance selection from a feature dump")
    p.add_argument("--features", type=Path, required=True)
    p.add_argument("--target", type=Path, required=True, help="target distribution (.bkdt)")
    p.add_argument("--raw", type=Path, required=True, help="raw distribution (.bkdt)")
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--num-shards", type=int, default=16)
    p.add_argument("--mode", choices=("per_shard", "global"), default="per_shard")
    p.add_argument("--out", type=Path, required=True, help="selected ids, one per line")
    p.add_argument("--weights", type=Path, help="write doc_id,shard_id,log_weight")
    p.add_argument("--corpus", type=Path, nargs="+", help="raw corpus, for --emit-docs")
    p.add_argument("--emit-docs", type=Path, help="write the selected documents as JSONL")
    p.set_defaults(handler=handle_select)

    p = subparsers.add_parser("nsl", help="normalized sequence length of one vocabulary against another")
    p.add_argument("--candidate-vocab", type=Path, required=True)
    p.add_argument("--reference-vocab", type=Path, required=True)
    p.add_argument("--docs", type=Path, required=True, help="JSONL documents")
    p.add_argument("--per-doc", type=Path, help="write per-document token counts as CSV")
    p.set_defaults(handler=handle_nsl)
