"""
Importance weights and sampling without replacement.

Selection uses the Gumbel top-k construction: perturb every log-weight with
independent Gumbel(0, 1) noise and keep the k largest. The noise for a document is
a pure function of (seed, stream, doc_id), so results do not depend on input order,
sharding or the number of workers.
"""
from __future__ import annotations

import heapq
import logging
from dataclasses import dataclass, field
from itertools import chain
from typing import Iterable, List, Optional, Sequence, Tuple

import numpy as np
from scipy import sparse

from ..errors import DimensionMismatchError, InputError
from .distribution import BucketDistribution
from .features import FeatureVector, fnv1a64

logger = logging.getLogger("gransel.sampler")

MAX_SEED = 2**64 - 1
MASK64 = 0xFFFFFFFFFFFFFFFF

# noise stream labels
STREAM_SELECT = 0x53454C454354
STREAM_RANDOM = 0x52414E444F4D

_SM_C1 = np.uint64(0xBF58476D1CE4E5B9)
_SM_C2 = np.uint64(0x94D049BB133111EB)
_S30, _S27, _S31, _S11 = (np.uint64(s) for s in (30, 27, 31, 11))


@dataclass(frozen=True)
class WeightedDoc:
    doc_id: str
    log_weight: float
    shard_id: int = 0

    def __post_init__(self) -> None:
        if not np.isfinite(self.log_weight):
            raise InputError(f"log weight of {self.doc_id} is not finite: {self.log_weight}")
        if self.shard_id < 0:
            raise InputError(f"shard id of {self.doc_id} must be >= 0")


@dataclass
class SelectionResult:
    selected: List[str]
    k: int
    N: int
    seed: int
    # perturbed scores aligned with `selected`
    scores: List[float] = field(default_factory=list)
    truncated: bool = False


# =====================================================================
# WEIGHTS
# =====================================================================


def log_importance_weight(fv: FeatureVector, p: BucketDistribution, q: BucketDistribution) -> float:
    """
    log w = sum_b count_b * (ln p_b - ln q_b); 0.0 for a document without features.
    """
    if not (fv.num_buckets == p.num_buckets == q.num_buckets):
        raise DimensionMismatchError(
            f"buckets differ: features {fv.num_buckets}, p {p.num_buckets}, q {q.num_buckets}"
        )
    if not fv.counts:
        return 0.0
    buckets = sorted(fv.counts)
    idx = np.asarray(buckets, dtype=np.int64)
    cnt = np.asarray([fv.counts[b] for b in buckets], dtype=np.float64)
    return float(np.dot(cnt, np.log(p.probs[idx]) - np.log(q.probs[idx])))


def log_ratio(p: BucketDistribution, q: BucketDistribution) -> np.ndarray:
    if p.num_buckets != q.num_buckets:
        raise DimensionMismatchError(f"buckets differ: p {p.num_buckets}, q {q.num_buckets}")
    return np.log(p.probs) - np.log(q.probs)


def log_importance_weights(matrix: sparse.csr_matrix, p: BucketDistribution, q: BucketDistribution) -> np.ndarray:
    """
    Row-wise log importance weights for a documents x buckets count matrix.
    """
    ratio = log_ratio(p, q)
    if matrix.shape[1] != ratio.shape[0]:
        raise DimensionMismatchError(f"matrix has {matrix.shape[1]} buckets, distributions {ratio.shape[0]}")
    return np.asarray(matrix.astype(np.float64) @ ratio, dtype=np.float64).reshape(-1)


# =====================================================================
# NOISE
# =====================================================================


def _splitmix64(x: np.ndarray) -> np.ndarray:
    x = x ^ (x >> _S30)
    x = x * _SM_C1
    x = x ^ (x >> _S27)
    x = x * _SM_C2
    return x ^ (x >> _S31)


def doc_keys(doc_ids: Sequence[str]) -> np.ndarray:
    return np.fromiter((fnv1a64(d.encode("utf-8")) for d in doc_ids), dtype=np.uint64, count=len(doc_ids))


def uniform_noise(seed: int, doc_ids: Sequence[str], stream: int = STREAM_SELECT) -> np.ndarray:
    """
    Uniform(0, 1) draws, one per document, keyed by (seed, stream, doc_id).
    """
    if not 0 <= seed <= MAX_SEED:
        raise InputError(f"seed must be a 64-bit unsigned integer, got {seed}")
    with np.errstate(over="ignore"):
        key = _splitmix64(np.asarray([(seed + stream) & MASK64], dtype=np.uint64))
        bits = _splitmix64(doc_keys(doc_ids) ^ key)
    # top 53 bits, centred in their interval so 0 and 1 never occur
    return ((bits >> _S11).astype(np.float64) + 0.5) * 2.0**-53


def gumbel_noise(seed: int, doc_ids: Sequence[str], stream: int = STREAM_SELECT) -> np.ndarray:
    return -np.log(-np.log(uniform_noise(seed, doc_ids, stream)))


# =====================================================================
# TOP-K
# =====================================================================


def _rank_key(item: Tuple[float, str]) -> Tuple[float, str]:
    score, doc_id = item
    return (-score, doc_id)


class TopK:
    """
    Bounded set of the k best (score, doc_id) pairs; higher score wins, ties go to
    the smaller doc_id. merge() is associative and commutative.
    """

    def __init__(self, k: int, items: Iterable[Tuple[float, str]] = ()) -> None:
        if k < 1:
            raise InputError(f"k must be >= 1, got {k}")
        self.k = k
        self._items: List[Tuple[float, str]] = heapq.nsmallest(k, items, key=_rank_key)

    def merge(self, other: "TopK") -> "TopK":
        return TopK(max(self.k, other.k), chain(self._items, other._items))

    def items(self) -> List[Tuple[float, str]]:
        return list(self._items)

    def __len__(self) -> int:
        return len(self._items)


def _select(
    doc_ids: Sequence[str],
    log_weights: np.ndarray,
    k: int,
    seed: int,
    stream: int,
) -> SelectionResult:
    if k < 1:
        raise InputError(f"k must be >= 1, got {k}")
    if len(doc_ids) == 0:
        raise InputError("cannot select from an empty document list")
    if len(set(doc_ids)) != len(doc_ids):
        raise InputError("document ids must be unique")

    n = len(doc_ids)
    truncated = k > n
    if truncated:
        logger.warning("Requested k=%d exceeds the pool of %d documents; selecting all", k, n)

    scores = np.asarray(log_weights, dtype=np.float64) + gumbel_noise(seed, doc_ids, stream)
    top = TopK(min(k, n), zip(scores.tolist(), doc_ids))
    ranked = top.items()
    return SelectionResult(
        selected=[d for _, d in ranked],
        k=k,
        N=n,
        seed=seed,
        scores=[s for s, _ in ranked],
        truncated=truncated,
    )


def gumbel_topk(docs: Sequence[WeightedDoc], k: int, seed: int) -> SelectionResult:
    """
    Sample k documents without replacement with probability proportional to
    exp(log_weight). Output is ordered by descending perturbed score.
    """
    ids = [d.doc_id for d in docs]
    weights = np.asarray([d.log_weight for d in docs], dtype=np.float64)
    return _select(ids, weights, k, seed, STREAM_SELECT)


def gumbel_topk_arrays(
    doc_ids: Sequence[str],
    log_weights: np.ndarray,
    k: int,
    seed: int,
    stream: int = STREAM_SELECT,
) -> SelectionResult:
    return _select(doc_ids, log_weights, k, seed, stream)


def random_select(doc_ids: Sequence[str], k: int, seed: int) -> SelectionResult:
    """
    Uniform sampling without replacement, on its own noise stream.
    """
    return _select(list(doc_ids), np.zeros(len(doc_ids)), k, seed, STREAM_RANDOM)


def merge_selections(results: Sequence[SelectionResult], k: Optional[int] = None) -> SelectionResult:
    """
    Global top-k over several partial selections (e.g. one per shard).
    """
    if not results:
        raise InputError("nothing to merge")
    k = k if k is not None else max(r.k for r in results)
    top = TopK(k)
    for r in results:
        top = top.merge(TopK(k, zip(r.scores, r.selected)))
    ranked = top.items()
    n = sum(r.N for r in results)
    return SelectionResult(
        selected=[d for _, d in ranked],
        k=k,
        N=n,
        seed=results[0].seed,
        scores=[s for s, _ in ranked],
        truncated=k > n,
    )
