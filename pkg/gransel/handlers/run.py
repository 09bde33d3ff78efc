from __future__ import annotations

import argparse
import json
import logging
from pathlib import Path
from typing import Any, Dict

from ..config import AppConfig, PipelineConfig, load_pipeline_config
from ..services.corpus import read_texts
from ..services.pipeline import compare_strategies, run_pipeline
from ..services.vocab import load_vocab
from .common import check_seed, parse_orders, strategy_value

logger = logging.getLogger("gransel.handlers.run")

STRATEGIES_FILE = "strategies.json"


def _overrides(args: argparse.Namespace) -> Dict[str, Any]:
    if args.seed is not None:
        check_seed(args.seed)
    return {
        "raw_corpus": args.raw,
        "task_corpus": args.task,
        "base_vocab": args.base_vocab,
        "k": args.k,
        "output_dir": args.output_dir,
        "strategy": strategy_value(args.strategy, args.mix),
        "target_vocab_size": args.target_vocab_size,
        "prune_steps": args.prune_steps,
        "num_buckets": args.buckets,
        "ngram_orders": parse_orders(args.ngram_orders),
        "alpha": args.alpha,
        "num_shards": args.num_shards,
        "seed": args.seed,
        "selection_mode": args.selection_mode,
        "feature_tokenizer": args.feature_tokenizer,
        "workers": args.workers,
        "emit_docs": True if args.emit_docs else None,
        "strict": True if args.strict else None,
        "cache": False if args.no_cache else None,
    }


def pipeline_config(args: argparse.Namespace, app: AppConfig) -> PipelineConfig:
    return load_pipeline_config(args.config, _overrides(args), app)


async def handle_run(args: argparse.Namespace, app: AppConfig) -> int:
    cfg = pipeline_config(args, app)
    report = await run_pipeline(cfg, app)
    logger.info(
        "Run finished: k=%d/%d, kl_reduction=%.6f, report in %s",
        report.k_achieved,
        report.k_requested,
        report.kl_reduction,
        cfg.output_dir,
    )
    return 0


async def handle_compare_strategies(args: argparse.Namespace, app: AppConfig) -> int:
    cfg = pipeline_config(args, app)
    cfg.check_inputs()
    base = load_vocab(cfg.base_vocab)
    docs = read_texts(cfg.task_corpus, strict=cfg.strict)
    stats = compare_strategies(base, docs, cfg)

    cfg.output_dir.mkdir(parents=True, exist_ok=True)
    out = cfg.output_dir / STRATEGIES_FILE
    out.write_text(json.dumps([s.model_dump() for s in stats], indent=2), encoding="utf-8")
    logger.info("Wrote %d strategy results to %s", len(stats), out)
    return 0


def _add_config_arguments(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="pipeline config (.toml or .json)")
    p.add_argument("--raw", type=Path, nargs="+", help="raw corpus JSONL files")
    p.add_argument("--task", type=Path, help="task corpus JSONL")
    p.add_argument("--base-vocab", type=Path)
    p.add_argument("--k", type=int)
    p.add_argument("--output-dir", type=Path)
    p.add_argument("--strategy", help="merging strategy")
    p.add_argument("--mix", help="preset name or three comma-separated shares")
    p.add_argument("--target-vocab-size", type=int)
    p.add_argument("--prune-steps", type=int)
    p.add_argument("--buckets", type=int)
    p.add_argument("--ngram-orders")
    p.add_argument("--alpha", type=float)
    p.add_argument("--num-shards", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--selection-mode", choices=("per_shard", "global"))
    p.add_argument("--feature-tokenizer", choices=("adapted", "words"))
    p.add_argument("--workers", type=int)
    p.add_argument("--emit-docs", action="store_true")
    p.add_argument("--strict", action="store_true")
    p.add_argument("--no-cache", action="store_true")


def register(subparsers: argparse._SubParsersAction) -> None:
    p = subparsers.add_parser("run", help="end-to-end selection")
    _add_config_arguments(p)
    p.set_defaults(handler=handle_run)

    p = subparsers.add_parser("compare-strategies", help="NSL and time per vocabulary merging strategy")
    _add_config_arguments(p)
    p.set_defaults(handler=handle_compare_strategies)
