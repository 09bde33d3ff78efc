"""
Hashed n-gram features: every token n-gram of a document is hashed into one of B
buckets and the bucket counts form the document's fixed-size feature vector.
"""
from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Dict, Iterable, Iterator, List, Sequence, TextIO, Tuple

import numpy as np
from scipy import sparse

from ..errors import ConfigError, DimensionMismatchError, InputError
from .tokenizer import TokenSequence

FNV64_OFFSET = 0xCBF29CE484222325
FNV64_PRIME = 0x100000001B3
MASK64 = 0xFFFFFFFFFFFFFFFF

# joins the tokens of an n-gram before hashing
NGRAM_JOINER = b"\x1f"


@dataclass(frozen=True)
class FeatureConfig:
    num_buckets: int = 10_000
    ngram_orders: Tuple[int, ...] = (1, 2)

    def __post_init__(self) -> None:
        if self.num_buckets < 2:
            raise ConfigError(f"num_buckets must be >= 2, got {self.num_buckets}")
        if not self.ngram_orders:
            raise ConfigError("ngram_orders must not be empty")
        if any(n < 1 for n in self.ngram_orders):
            raise ConfigError(f"ngram orders must be >= 1, got {self.ngram_orders}")
        # canonical form: sorted, unique
        object.__setattr__(self, "ngram_orders", tuple(sorted(set(self.ngram_orders))))


@dataclass
class FeatureVector:
    doc_id: str
    counts: Dict[int, int] = field(default_factory=dict)
    num_buckets: int = 10_000

    @property
    def total(self) -> int:
        return sum(self.counts.values())


def fnv1a64(data: bytes) -> int:
    h = FNV64_OFFSET
    for byte in data:
        h ^= byte
        h = (h * FNV64_PRIME) & MASK64
    return h


@lru_cache(maxsize=1 << 20)
def _ngram_hash(ngram: Tuple[str, ...]) -> int:
    return fnv1a64(NGRAM_JOINER.join(t.encode("utf-8") for t in ngram))


def hash_ngram(ngram: Sequence[str], num_buckets: int) -> int:
    """
    FNV-1a 64 over the UTF-8 token texts joined by 0x1F, modulo the bucket count.
    ["a", "b"] and the single token "a\\x1fb" land in the same bucket.
    """
    if not ngram:
        raise InputError("cannot hash an empty n-gram")
    return _ngram_hash(tuple(ngram)) % num_buckets


def extract_ngrams(tokens: Sequence[str], orders: Iterable[int]) -> List[Tuple[str, ...]]:
    """
    All contiguous n-grams of each requested order, lower orders first.
    """
    out: List[Tuple[str, ...]] = []
    for n in sorted(set(orders)):
        for i in range(len(tokens) - n + 1):
            out.append(tuple(tokens[i:i + n]))
    return out


def featurize(doc: TokenSequence, cfg: FeatureConfig) -> FeatureVector:
    buckets = Counter(hash_ngram(g, cfg.num_buckets) for g in extract_ngrams(doc.tokens, cfg.ngram_orders))
    return FeatureVector(doc_id=str(doc.doc_id), counts=dict(buckets), num_buckets=cfg.num_buckets)


def stack_features(vectors: Sequence[FeatureVector], num_buckets: int) -> Tuple[List[str], sparse.csr_matrix]:
    """
    Rows of a CSR matrix (documents x buckets) plus the matching doc ids.
    """
    ids: List[str] = []
    indptr = [0]
    indices: List[int] = []
    data: List[int] = []
    for fv in vectors:
        if fv.num_buckets != num_buckets:
            raise DimensionMismatchError(
                f"feature vector {fv.doc_id} has {fv.num_buckets} buckets, expected {num_buckets}"
            )
        ids.append(fv.doc_id)
        for bucket in sorted(fv.counts):
            indices.append(bucket)
            data.append(fv.counts[bucket])
        indptr.append(len(indices))
    matrix = sparse.csr_matrix(
        (np.asarray(data, dtype=np.int64), np.asarray(indices, dtype=np.int64), np.asarray(indptr, dtype=np.int64)),
        shape=(len(ids), num_buckets),
    )
    return ids, matrix


# ---- feature dump: doc_id TAB total TAB bucket:count,... ----


def format_feature_line(fv: FeatureVector) -> str:
    pairs = ",".join(f"{b}:{fv.counts[b]}" for b in sorted(fv.counts))
    return f"{fv.doc_id}\t{fv.total}\t{pairs}\n"


def write_features(vectors: Iterable[FeatureVector], out: TextIO) -> int:
    written = 0
    for fv in vectors:
        out.write(format_feature_line(fv))
        written += 1
    return written


def parse_feature_line(line: str, num_buckets: int) -> FeatureVector:
    try:
        doc_id, total_raw, pairs = line.rstrip("\n").split("\t")
        counts: Dict[int, int] = {}
        if pairs:
            for pair in pairs.split(","):
                bucket, count = pair.split(":")
                counts[int(bucket)] = int(count)
        total = int(total_raw)
    except ValueError as e:
        raise InputError(f"malformed feature line {line[:80]!r}: {e}")
    fv = FeatureVector(doc_id=doc_id, counts=counts, num_buckets=num_buckets)
    if fv.total != total:
        raise InputError(f"feature line for {doc_id} declares total {total} but counts sum to {fv.total}")
    if counts and (min(counts) < 0 or max(counts) >= num_buckets):
        raise DimensionMismatchError(f"feature line for {doc_id} has buckets outside [0, {num_buckets})")
    return fv


def read_features(path: Path, num_buckets: int) -> Iterator[FeatureVector]:
    with path.open("r", encoding="utf-8") as f:
        for line in f:
            if line.strip():
                yield parse_feature_line(line, num_buckets)
