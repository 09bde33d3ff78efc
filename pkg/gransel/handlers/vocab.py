from __future__ import annotations

import argparse
import logging
from pathlib import Path

from ..config import AppConfig, parse_strategy
from ..services.corpus import read_texts
from ..services.vocab import (
    count_token_frequencies,
    learn_task_vocab,
    load_vocab,
    merge_vocabs,
    prune_vocab,
    save_vocab,
    write_trace_csv,
)
from .common import strategy_value

logger = logging.getLogger("gransel.handlers.vocab")


async def handle_learn_vocab(args: argparse.Namespace, app: AppConfig) -> int:
    docs = read_texts(args.task, strict=args.strict)
    vocab = learn_task_vocab(
        docs,
        max_words=args.max_words,
        max_multiwords=args.max_multiwords,
        min_multiword_count=args.min_multiword_count,
    )
    save_vocab(vocab, args.out)
    logger.info("Wrote task vocabulary (%d tokens) to %s", len(vocab), args.out)
    return 0


async def handle_merge_vocab(args: argparse.Namespace, app: AppConfig) -> int:
    """
    merge-vocab:
    - with --task the inputs are re-counted on the task corpus before and after merging
    - without it the frequencies stored in the files are used as they are
    """
    strategy = parse_strategy(strategy_value(args.strategy, args.mix))

    base = load_vocab(args.base)
    task = load_vocab(args.task_vocab)
    docs = read_texts(args.task) if args.task else None
    if docs is not None:
        base = count_token_frequencies(base, docs)

    merged = merge_vocabs(base, task, strategy, target_size=args.target_size)
    if docs is not None:
        merged = count_token_frequencies(merged, docs)
    save_vocab(merged, args.out)
    logger.info("Wrote merged vocabulary (%d tokens) to %s", len(merged), args.out)
    return 0


async def handle_prune_vocab(args: argparse.Namespace, app: AppConfig) -> int:
    vocab = load_vocab(args.vocab)
    pruned, trace = prune_vocab(vocab, args.target_size, args.steps)
    save_vocab(pruned, args.out)
    if args.trace:
        write_trace_csv(trace, args.trace)
    logger.info(
        "Pruned %d -> %d tokens in %d steps, H_v %.6f -> %.6f",
        trace.initial.size,
        len(pruned),
        len(trace.steps),
        trace.initial.utility_nats,
        trace.entries[-1].utility_nats,
    )
    return 0


def register(subparsers: argparse._SubParsersAction) -> None:
    p = subparsers.add_parser("learn-vocab", help="mine words and multi-words from the task corpus")
    p.add_argument("--task", type=Path, required=True, help="task corpus (JSONL)")
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--max-words", type=int, default=5000)
    p.add_argument("--max-multiwords", type=int, default=5000)
    p.add_argument("--min-multiword-count", type=int, default=5)
    p.add_argument("--strict", action="store_true")
    p.set_defaults(handler=handle_learn_vocab)

    p = subparsers.add_parser("merge-vocab", help="merge a base and a task vocabulary")
    p.add_argument("--base", type=Path, required=True)
    p.add_argument("--task-vocab", type=Path, required=True)
    p.add_argument("--task", type=Path, help="task corpus used to re-count frequencies")
    p.add_argument("--strategy", default="multi_granular")
    p.add_argument("--mix", help="preset name or three comma-separated shares")
    p.add_argument("--target-size", type=int)
    p.add_argument("--out", type=Path, required=True)
    p.set_defaults(handler=handle_merge_vocab)

    p = subparsers.add_parser("prune-vocab", help="utility-guided pruning to a target size")
    p.add_argument("--vocab", type=Path, required=True)
    p.add_argument("--target-size", type=int, required=True)
    p.add_argument("--steps", type=int, default=10)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--trace", type=Path, help="write the per-step trace as CSV")
    p.set_defaults(handler=handle_prune_vocab)
