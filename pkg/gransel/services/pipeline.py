from __future__ import annotations

import asyncio
import contextlib
import csv
import json
import logging
import multiprocessing
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Set, Tuple

import numpy as np

from ..config import AppConfig, PipelineConfig
from ..errors import InputError
from ..models import base as db
from .corpus import CorpusStats, read_jsonl, read_texts, shard_of
from .distribution import (
    BucketCounts,
    BucketDistribution,
    kl_divergence,
    kl_reduction,
    read_distribution,
    sidecar_path,
    write_distribution,
)
from .features import FeatureConfig, featurize, read_features, stack_features, write_features
from .report import SelectionReport, StrategyStat, save_report
from .sampler import SelectionResult, gumbel_topk_arrays, log_importance_weights, merge_selections, random_select
from .stage_cache import StageCache, file_digest, fingerprint
from .tokenizer import nsl, sequence_lengths, tokenize, word_tokenize
from .vocab import (
    MergeKind,
    MergeStrategy,
    PruneTrace,
    TraceEntry,
    Vocabulary,
    cap_vocab,
    count_token_frequencies,
    learn_task_vocab,
    load_vocab,
    merge_vocabs,
    prune_vocab,
    save_vocab,
    vocab_utility,
    write_trace_csv,
)

logger = logging.getLogger("gransel.pipeline")

# bump when a stage's output format or semantics change
STAGE_VERSION = 1

VOCAB_FILE = "vocab.json"
TRACE_FILE = "prune_trace.csv"
TARGET_DIST = "target.bkdt"
RAW_DIST = "raw.bkdt"
FEATURES_DIR = "features"
FEATURES_MANIFEST = "manifest.json"
WEIGHTS_FILE = "weights.csv"
SELECTED_IDS = "selected_ids.txt"
SELECTED_DOCS = "selected.jsonl"
REPORT_FILE = "report.json"

STRATEGY_ORDER = (
    MergeKind.MULTI_GRANULAR,
    MergeKind.MULTIWORD_ONLY,
    MergeKind.TARGET_ONLY,
    MergeKind.BASE_ONLY,
    MergeKind.MERGE_UNION,
)


# =====================================================================
# VOCABULARY ADAPTATION
# =====================================================================


def adapt_vocab(
    base: Vocabulary,
    task_docs: Sequence[str],
    cfg: PipelineConfig,
    strategy: Optional[MergeStrategy] = None,
) -> Tuple[Vocabulary, Optional[PruneTrace]]:
    """
    Learn V_task, merge it with the base vocabulary and bound the result to
    cfg.target_vocab_size: utility pruning for multi_granular, frequency rank for
    the other strategies.
    """
    strategy = strategy or cfg.strategy
    task = learn_task_vocab(
        task_docs,
        max_words=cfg.task_max_words,
        max_multiwords=cfg.task_max_multiwords,
        min_multiword_count=cfg.min_multiword_count,
    )
    base_counted = count_token_frequencies(base, task_docs)
    merged = merge_vocabs(base_counted, task, strategy, target_size=cfg.target_vocab_size)
    merged = count_token_frequencies(merged, task_docs)

    if strategy.kind is MergeKind.MULTI_GRANULAR and not strategy.fixed_ratio:
        return prune_vocab(merged, cfg.target_vocab_size, cfg.prune_steps)

    capped = cap_vocab(merged, cfg.target_vocab_size)
    if capped is not merged:
        capped = count_token_frequencies(capped, task_docs)
    return capped, None


def compare_strategies(base: Vocabulary, task_docs: Sequence[str], cfg: PipelineConfig) -> List[StrategyStat]:
    """
    Build every merging strategy's vocabulary under the same size bound and report
    its NSL against the base vocabulary on the task documents.
    """
    reference = sequence_lengths(task_docs, base)
    stats: List[StrategyStat] = []
    for kind in STRATEGY_ORDER:
        started = time.perf_counter()
        vocab, _ = adapt_vocab(base, task_docs, cfg, MergeStrategy(kind))
        ratio = nsl(sequence_lengths(task_docs, vocab), reference)
        stats.append(
            StrategyStat(
                strategy=kind.value,
                vocab_size=len(vocab),
                granularity_counts=vocab.granularity_counts(),
                nsl=ratio,
                seconds=time.perf_counter() - started,
            )
        )
        logger.info("Strategy %s: %d tokens, NSL %.4f", kind.value, len(vocab), ratio)
    return stats


# =====================================================================
# SHARD FEATURIZATION (runs in worker processes)
# =====================================================================


@dataclass(frozen=True)
class ShardJob:
    raw_corpus: Tuple[Path, ...]
    shard_ids: Tuple[int, ...]
    num_shards: int
    vocab_path: Optional[Path]
    num_buckets: int
    ngram_orders: Tuple[int, ...]
    out_dir: Path
    strict: bool = False
    show_progress: bool = False


@dataclass
class ShardResult:
    doc_counts: Dict[int, int]
    bucket_counts: Dict[int, np.ndarray]
    stats: CorpusStats


def shard_features_path(out_dir: Path, shard_id: int) -> Path:
    return out_dir / f"shard_{shard_id:05d}.tsv"


def featurize_shards(job: ShardJob) -> ShardResult:
    """
    One pass over the raw corpus that featurizes the documents of `job.shard_ids`
    and writes one feature dump per shard.
    """
    cfg = FeatureConfig(num_buckets=job.num_buckets, ngram_orders=job.ngram_orders)
    vocab = load_vocab(job.vocab_path) if job.vocab_path is not None else None
    wanted = set(job.shard_ids)

    counts = {s: BucketCounts(cfg.num_buckets) for s in job.shard_ids}
    job.out_dir.mkdir(parents=True, exist_ok=True)
    outs = {s: shard_features_path(job.out_dir, s).open("w", encoding="utf-8") for s in job.shard_ids}
    stats = CorpusStats()
    try:
        for doc in read_jsonl(job.raw_corpus, strict=job.strict, stats=stats, show_progress=job.show_progress):
            shard = shard_of(doc.index, job.num_shards)
            if shard not in wanted:
                continue
            seq = tokenize(doc.text, vocab, doc.doc_id) if vocab is not None else word_tokenize(doc.text, doc.doc_id)
            fv = featurize(seq, cfg)
            counts[shard].add(fv)
            write_features([fv], outs[shard])
    finally:
        for f in outs.values():
            f.close()

    return ShardResult(
        doc_counts={s: c.doc_count for s, c in counts.items()},
        bucket_counts={s: c.counts for s, c in counts.items()},
        stats=stats,
    )


async def _run_jobs(jobs: Sequence[ShardJob], workers: int) -> List[ShardResult]:
    if workers <= 1 or len(jobs) <= 1:
        return [await asyncio.to_thread(featurize_shards, job) for job in jobs]

    loop = asyncio.get_running_loop()
    # spawn: the parent holds SQLite worker threads that must not be forked
    ctx = multiprocessing.get_context("spawn")
    with ProcessPoolExecutor(max_workers=workers, mp_context=ctx) as pool:
        return list(await asyncio.gather(*(loop.run_in_executor(pool, featurize_shards, job) for job in jobs)))


# =====================================================================
# SELECTION
# =====================================================================


@dataclass
class ShardPool:
    shard_id: int
    doc_ids: List[str]
    log_weights: np.ndarray


@dataclass
class SelectionOutcome:
    selected: List[str]
    random: List[str]
    quotas: List[int]
    selected_per_shard: List[int]
    warnings: List[str] = field(default_factory=list)


def shard_quotas(k: int, shard_sizes: Sequence[int]) -> Tuple[List[int], List[str]]:
    """
    k // S per shard, the remainder one each to the lowest shard ids. A shard that
    cannot fill its quota hands the excess to the shards with room, in shard-id order.
    """
    n_shards = len(shard_sizes)
    base, rem = divmod(k, n_shards)
    quotas = [base + (1 if s < rem else 0) for s in range(n_shards)]
    warnings: List[str] = []

    excess = 0
    for s, size in enumerate(shard_sizes):
        if quotas[s] > size:
            warnings.append(f"shard {s} holds {size} documents, below its quota of {quotas[s]}; redistributing")
            excess += quotas[s] - size
            quotas[s] = size
    for s, size in enumerate(shard_sizes):
        if excess == 0:
            break
        extra = min(excess, size - quotas[s])
        quotas[s] += extra
        excess -= extra
    if excess:
        warnings.append(f"only {sum(shard_sizes)} documents available for k={k}; selecting all")
    return quotas, warnings


def select_shards(pools: Sequence[ShardPool], k: int, seed: int, mode: str = "per_shard") -> SelectionOutcome:
    sizes = [len(p.doc_ids) for p in pools]
    shard_of_doc = {d: p.shard_id for p in pools for d in p.doc_ids}

    if mode == "global":
        quotas = [0] * len(pools)
        warnings: List[str] = []
        partial_sel: List[SelectionResult] = []
        partial_rnd: List[SelectionResult] = []
        for p in pools:
            if not p.doc_ids:
                continue
            partial_sel.append(gumbel_topk_arrays(p.doc_ids, p.log_weights, min(k, len(p.doc_ids)), seed))
            partial_rnd.append(random_select(p.doc_ids, min(k, len(p.doc_ids)), seed))
        if not partial_sel:
            raise InputError("raw corpus has no documents")
        selected = merge_selections(partial_sel, k).selected
        random_ids = merge_selections(partial_rnd, k).selected
        if k > sum(sizes):
            warnings.append(f"only {sum(sizes)} documents available for k={k}; selecting all")
    else:
        quotas, warnings = shard_quotas(k, sizes)
        selected = []
        random_ids = []
        for p, quota in zip(pools, quotas):
            if quota == 0:
                continue
            selected += gumbel_topk_arrays(p.doc_ids, p.log_weights, quota, seed).selected
            random_ids += random_select(p.doc_ids, quota, seed).selected

    per_shard = [0] * len(pools)
    for d in selected:
        per_shard[shard_of_doc[d]] += 1
    for w in warnings:
        logger.warning(w)
    return SelectionOutcome(
        selected=selected,
        random=random_ids,
        quotas=quotas,
        selected_per_shard=per_shard,
        warnings=warnings,
    )


def write_weights(pools: Sequence[ShardPool], path: Path) -> None:
    with path.open("w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(["doc_id", "shard_id", "log_weight"])
        for p in pools:
            writer.writerows((doc_id, p.shard_id, repr(w)) for doc_id, w in zip(p.doc_ids, p.log_weights.tolist()))


def write_selected_ids(ids: Sequence[str], path: Path) -> None:
    path.write_text("".join(f"{d}\n" for d in ids), encoding="utf-8")


def emit_documents(cfg: PipelineConfig, selected: Set[str], path: Path) -> int:
    written = 0
    with path.open("w", encoding="utf-8") as f:
        for doc in read_jsonl(cfg.raw_corpus, strict=cfg.strict):
            if doc.doc_id in selected:
                f.write(json.dumps({"id": doc.doc_id, "text": doc.text}, ensure_ascii=False) + "\n")
                written += 1
    return written


# =====================================================================
# PIPELINE
# =====================================================================


@dataclass
class _Stages:
    seconds: Dict[str, float] = field(default_factory=dict)
    cached: List[str] = field(default_factory=list)

    def timed(self, name: str, started: float) -> None:
        self.seconds[name] = round(time.perf_counter() - started, 6)
        logger.info("Stage %s done in %.2fs", name, self.seconds[name])


def _cache_url(cfg: PipelineConfig, app: AppConfig) -> str:
    if app.cache_url:
        return app.cache_url
    return db.sqlite_url(cfg.output_dir / "stage_cache.db")


async def _vocab_stage(
    cfg: PipelineConfig,
    cache: StageCache,
    stages: _Stages,
    task_docs: Sequence[str],
    digests: Dict[str, str],
) -> Tuple[Vocabulary, str]:
    started = time.perf_counter()
    vocab_path = cfg.output_dir / VOCAB_FILE
    trace_path = cfg.output_dir / TRACE_FILE
    key = fingerprint(
        {
            "stage": "vocab",
            "version": STAGE_VERSION,
            "output_dir": str(cfg.output_dir.resolve()),
            "task": digests[str(cfg.task_corpus)],
            "base": digests[str(cfg.base_vocab)],
            "strategy": cfg.strategy.to_dict(),
            "target_vocab_size": cfg.target_vocab_size,
            "prune_steps": cfg.prune_steps,
            "task_max_words": cfg.task_max_words,
            "task_max_multiwords": cfg.task_max_multiwords,
            "min_multiword_count": cfg.min_multiword_count,
        }
    )
    if await cache.lookup("vocab", key) is not None:
        stages.cached.append("vocab")
        vocab = load_vocab(vocab_path)
    else:
        base = load_vocab(cfg.base_vocab)
        vocab, trace = adapt_vocab(base, task_docs, cfg)
        save_vocab(vocab, vocab_path, source=f"adapted:{cfg.strategy.kind.value}")
        outputs = [vocab_path]
        if trace is None:
            trace = PruneTrace(initial=TraceEntry(0, len(vocab), vocab_utility(vocab)))
        write_trace_csv(trace, trace_path)
        outputs.append(trace_path)
        await cache.record("vocab", key, outputs)
    stages.timed("vocab", started)
    return vocab, key


@dataclass
class _FeatureOutputs:
    target: BucketDistribution
    raw: BucketDistribution
    shard_doc_counts: List[int]
    stats: CorpusStats
    task_documents: int


async def _features_stage(
    cfg: PipelineConfig,
    app: AppConfig,
    cache: StageCache,
    stages: _Stages,
    vocab: Vocabulary,
    vocab_key: str,
    task_docs: Sequence[str],
    digests: Dict[str, str],
) -> _FeatureOutputs:
    started = time.perf_counter()
    features_dir = cfg.output_dir / FEATURES_DIR
    manifest_path = features_dir / FEATURES_MANIFEST
    target_path = cfg.output_dir / TARGET_DIST
    raw_path = cfg.output_dir / RAW_DIST
    adapted = cfg.feature_tokenizer == "adapted"
    key = fingerprint(
        {
            "stage": "features",
            "version": STAGE_VERSION,
            "output_dir": str(cfg.output_dir.resolve()),
            "vocab": vocab_key if adapted else "words",
            "raw": [digests[str(p)] for p in cfg.raw_corpus],
            "task": digests[str(cfg.task_corpus)],
            "num_buckets": cfg.num_buckets,
            "ngram_orders": list(cfg.features.ngram_orders),
            "alpha": cfg.alpha,
            "num_shards": cfg.num_shards,
            "strict": cfg.strict,
        }
    )

    if await cache.lookup("features", key) is not None:
        stages.cached.append("features")
        manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
        target, _ = read_distribution(target_path)
        raw, _ = read_distribution(raw_path)
        stages.timed("features", started)
        return _FeatureOutputs(
            target=target,
            raw=raw,
            shard_doc_counts=manifest["shard_doc_counts"],
            stats=CorpusStats(**manifest["stats"]),
            task_documents=manifest["task_documents"],
        )

    feature_cfg = cfg.features

    # target side: small, featurized in-process
    target_counts = BucketCounts(feature_cfg.num_buckets)
    for i, text in enumerate(task_docs):
        seq = tokenize(text, vocab, f"task:{i}") if adapted else word_tokenize(text, f"task:{i}")
        target_counts.add(featurize(seq, feature_cfg))
    target = BucketDistribution.from_counts(target_counts, cfg.alpha)

    # raw side: shards grouped so that each worker makes a single corpus pass
    n_jobs = min(cfg.workers, cfg.num_shards)
    jobs = [
        ShardJob(
            raw_corpus=tuple(cfg.raw_corpus),
            shard_ids=tuple(s for s in range(cfg.num_shards) if s % n_jobs == j),
            num_shards=cfg.num_shards,
            vocab_path=(cfg.output_dir / VOCAB_FILE) if adapted else None,
            num_buckets=feature_cfg.num_buckets,
            ngram_orders=feature_cfg.ngram_orders,
            out_dir=features_dir,
            strict=cfg.strict,
            show_progress=app.progress and j == 0,
        )
        for j in range(n_jobs)
    ]
    results = await _run_jobs(jobs, cfg.workers)

    raw_counts = BucketCounts(feature_cfg.num_buckets)
    shard_doc_counts = [0] * cfg.num_shards
    shard_arrays: Dict[int, np.ndarray] = {}
    for result in results:
        for s, n in result.doc_counts.items():
            shard_doc_counts[s] = n
        shard_arrays.update(result.bucket_counts)
    for s in range(cfg.num_shards):
        raw_counts.add_array(shard_arrays[s], shard_doc_counts[s])
    raw = BucketDistribution.from_counts(raw_counts, cfg.alpha)
    # every job scans the whole corpus, so any job's stats describe it
    stats = results[0].stats

    if stats.documents == 0:
        raise InputError("raw corpus has no usable documents")

    write_distribution(target, target_path, corpus=str(cfg.task_corpus), doc_count=len(task_docs))
    write_distribution(raw, raw_path, corpus=",".join(str(p) for p in cfg.raw_corpus), doc_count=stats.documents)
    manifest_path.write_text(
        json.dumps(
            {
                "shard_doc_counts": shard_doc_counts,
                "stats": stats.__dict__,
                "task_documents": len(task_docs),
            },
            indent=1,
        ),
        encoding="utf-8",
    )
    outputs = [target_path, sidecar_path(target_path), raw_path, sidecar_path(raw_path), manifest_path]
    outputs += [shard_features_path(features_dir, s) for s in range(cfg.num_shards)]
    await cache.record("features", key, outputs)

    stages.timed("features", started)
    return _FeatureOutputs(
        target=target,
        raw=raw,
        shard_doc_counts=shard_doc_counts,
        stats=stats,
        task_documents=len(task_docs),
    )


def _load_pools(cfg: PipelineConfig, target: BucketDistribution, raw: BucketDistribution) -> List[ShardPool]:
    features_dir = cfg.output_dir / FEATURES_DIR
    pools: List[ShardPool] = []
    for s in range(cfg.num_shards):
        vectors = list(read_features(shard_features_path(features_dir, s), cfg.num_buckets))
        ids, matrix = stack_features(vectors, cfg.num_buckets)
        weights = log_importance_weights(matrix, target, raw) if ids else np.zeros(0)
        pools.append(ShardPool(shard_id=s, doc_ids=ids, log_weights=weights))
    return pools


def _selection_counts(cfg: PipelineConfig, selected: Set[str], random_ids: Set[str]) -> Tuple[BucketCounts, BucketCounts]:
    features_dir = cfg.output_dir / FEATURES_DIR
    sel = BucketCounts(cfg.num_buckets)
    rnd = BucketCounts(cfg.num_buckets)
    for s in range(cfg.num_shards):
        for fv in read_features(shard_features_path(features_dir, s), cfg.num_buckets):
            if fv.doc_id in selected:
                sel.add(fv)
            if fv.doc_id in random_ids:
                rnd.add(fv)
    return sel, rnd


async def run_pipeline(cfg: PipelineConfig, app: Optional[AppConfig] = None) -> SelectionReport:
    """
    vocabulary adaptation -> featurization of both corpora -> target and raw
    distributions -> importance selection and random baseline -> artifacts + report.
    """
    app = app or AppConfig(workers=cfg.workers)
    cfg.validate()
    cfg.check_inputs()
    cfg.output_dir.mkdir(parents=True, exist_ok=True)

    stages = _Stages()
    cache = StageCache(enabled=cfg.cache)
    async with (db.open_db(_cache_url(cfg, app)) if cfg.cache else contextlib.nullcontext()):
        started = time.perf_counter()
        digests = {str(p): file_digest(p) for p in [*cfg.raw_corpus, cfg.task_corpus, cfg.base_vocab]}
        task_docs = read_texts(cfg.task_corpus, strict=cfg.strict)
        if not task_docs:
            raise InputError(f"task corpus {cfg.task_corpus} has no documents")
        stages.timed("ingest", started)

        vocab, vocab_key = await _vocab_stage(cfg, cache, stages, task_docs, digests)
        features = await _features_stage(cfg, app, cache, stages, vocab, vocab_key, task_docs, digests)

    started = time.perf_counter()
    pools = _load_pools(cfg, features.target, features.raw)
    write_weights(pools, cfg.output_dir / WEIGHTS_FILE)
    outcome = select_shards(pools, cfg.k, cfg.seed, cfg.selection_mode)
    write_selected_ids(outcome.selected, cfg.output_dir / SELECTED_IDS)
    stages.timed("select", started)

    started = time.perf_counter()
    sel_counts, rnd_counts = _selection_counts(cfg, set(outcome.selected), set(outcome.random))
    selected_dist = BucketDistribution.from_counts(sel_counts, cfg.alpha)
    random_dist = BucketDistribution.from_counts(rnd_counts, cfg.alpha)
    kl_selected = kl_divergence(features.target, selected_dist)
    kl_random = kl_divergence(features.target, random_dist)
    reduction = kl_reduction(features.target, selected_dist, random_dist)
    write_distribution(selected_dist, cfg.output_dir / "selected.bkdt", corpus="selected", doc_count=sel_counts.doc_count)

    base = load_vocab(cfg.base_vocab)
    task_nsl = nsl(sequence_lengths(task_docs, vocab), sequence_lengths(task_docs, base))
    stages.timed("evaluate", started)

    if cfg.emit_docs:
        started = time.perf_counter()
        written = emit_documents(cfg, set(outcome.selected), cfg.output_dir / SELECTED_DOCS)
        logger.info("Wrote %d selected documents", written)
        stages.timed("emit", started)

    report = SelectionReport(
        shard_doc_counts=features.shard_doc_counts,
        shard_selected_counts=outcome.selected_per_shard,
        k_requested=cfg.k,
        k_achieved=len(outcome.selected),
        kl_target_selected=kl_selected,
        kl_target_random=kl_random,
        kl_reduction=reduction,
        nsl_adapted_vs_base=task_nsl,
        vocab_size=len(vocab),
        vocab_utility=vocab_utility(vocab),
        granularity_counts=vocab.granularity_counts(),
        raw_documents=features.stats.documents,
        task_documents=features.task_documents,
        bad_lines=features.stats.bad_lines,
        duplicate_ids=features.stats.duplicate_ids,
        stage_seconds=stages.seconds,
        cached_stages=stages.cached,
        warnings=outcome.warnings,
        config=cfg.echo(),
    )
    save_report(report, cfg.output_dir / REPORT_FILE)
    logger.info(
        "Selected %d/%d documents: KL(target||selected)=%.6f KL(target||random)=%.6f reduction=%.6f",
        report.k_achieved,
        report.raw_documents,
        kl_selected,
        kl_random,
        reduction,
    )
    return report
