from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Optional, Tuple

import numpy as np
from pydantic import BaseModel

from ..errors import ConfigError, DimensionMismatchError, InputError
from .features import FeatureVector

MAGIC = b"BKDT"
FORMAT_VERSION = 1
# magic, version, B, alpha (little-endian)
HEADER = struct.Struct("<4sIId")


class BucketCounts:
    """
    Mergeable bucket-count accumulator. Partial counts from any partition of a
    corpus merge to the same totals, so smoothing after merging is exact.
    """

    def __init__(self, num_buckets: int) -> None:
        if num_buckets < 2:
            raise ConfigError(f"num_buckets must be >= 2, got {num_buckets}")
        self.num_buckets = num_buckets
        self.counts = np.zeros(num_buckets, dtype=np.int64)
        self.doc_count = 0

    def add(self, fv: FeatureVector) -> None:
        if fv.num_buckets != self.num_buckets:
            raise DimensionMismatchError(
                f"feature vector {fv.doc_id} has {fv.num_buckets} buckets, expected {self.num_buckets}"
            )
        if fv.counts:
            idx = np.fromiter(fv.counts.keys(), dtype=np.int64, count=len(fv.counts))
            val = np.fromiter(fv.counts.values(), dtype=np.int64, count=len(fv.counts))
            np.add.at(self.counts, idx, val)
        self.doc_count += 1

    def add_all(self, vectors: Iterable[FeatureVector]) -> "BucketCounts":
        for fv in vectors:
            self.add(fv)
        return self

    def add_array(self, counts: np.ndarray, doc_count: int) -> None:
        if counts.shape != (self.num_buckets,):
            raise DimensionMismatchError(f"count array has shape {counts.shape}, expected ({self.num_buckets},)")
        self.counts += counts.astype(np.int64)
        self.doc_count += doc_count

    def merge(self, other: "BucketCounts") -> "BucketCounts":
        merged = BucketCounts(self.num_buckets)
        merged.add_array(self.counts, self.doc_count)
        merged.add_array(other.counts, other.doc_count)
        return merged


@dataclass(frozen=True, eq=False)
class BucketDistribution:
    probs: np.ndarray
    smoothing_alpha: float
    support_total: int

    @property
    def num_buckets(self) -> int:
        return int(self.probs.shape[0])

    @classmethod
    def from_counts(cls, counts: BucketCounts, alpha: float) -> "BucketDistribution":
        if alpha <= 0:
            raise ConfigError(f"alpha must be > 0, got {alpha}")
        total = int(counts.counts.sum())
        probs = (counts.counts.astype(np.float64) + alpha) / (total + alpha * counts.num_buckets)
        probs.setflags(write=False)
        return cls(probs=probs, smoothing_alpha=alpha, support_total=total)

    def log_probs(self) -> np.ndarray:
        return np.log(self.probs)


def estimate_distribution(vectors: Iterable[FeatureVector], num_buckets: int, alpha: float) -> BucketDistribution:
    """
    probs[b] = (C_b + alpha) / (C + alpha * B)
    """
    return BucketDistribution.from_counts(BucketCounts(num_buckets).add_all(vectors), alpha)


def _check_dims(*dists: BucketDistribution) -> None:
    sizes = {d.num_buckets for d in dists}
    if len(sizes) != 1:
        raise DimensionMismatchError(f"distributions have different bucket counts: {sorted(sizes)}")


def kl_divergence(p: BucketDistribution, q: BucketDistribution) -> float:
    _check_dims(p, q)
    return float(np.sum(p.probs * (np.log(p.probs) - np.log(q.probs))))


def kl_reduction(
    target: BucketDistribution,
    selected: BucketDistribution,
    random_baseline: BucketDistribution,
) -> float:
    """
    KL(target || random) - KL(target || selected); positive means the selection is
    closer to the target than random sampling.
    """
    _check_dims(target, selected, random_baseline)
    return kl_divergence(target, random_baseline) - kl_divergence(target, selected)


# =====================================================================
# FILES
# =====================================================================


class DistributionSidecar(BaseModel):
    corpus: str
    doc_count: int
    support_total: int
    num_buckets: int
    alpha: float


def sidecar_path(path: Path) -> Path:
    return path.with_name(path.name + ".json")


def write_distribution(dist: BucketDistribution, path: Path, corpus: str = "", doc_count: int = 0) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("wb") as f:
        f.write(HEADER.pack(MAGIC, FORMAT_VERSION, dist.num_buckets, dist.smoothing_alpha))
        f.write(np.asarray(dist.probs, dtype="<f8").tobytes())
    sidecar = DistributionSidecar(
        corpus=corpus,
        doc_count=doc_count,
        support_total=dist.support_total,
        num_buckets=dist.num_buckets,
        alpha=dist.smoothing_alpha,
    )
    sidecar_path(path).write_text(sidecar.model_dump_json(indent=1), encoding="utf-8")


def read_distribution(path: Path) -> Tuple[BucketDistribution, Optional[DistributionSidecar]]:
    try:
        raw = path.read_bytes()
    except OSError as e:
        raise InputError(f"cannot read distribution {path}: {e}")
    if len(raw) < HEADER.size:
        raise InputError(f"distribution file {path} is truncated")
    magic, version, num_buckets, alpha = HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise InputError(f"{path} is not a bucket distribution file")
    if version != FORMAT_VERSION:
        raise InputError(f"{path} has unsupported format version {version}")
    body = raw[HEADER.size:]
    if len(body) != 8 * num_buckets:
        raise InputError(f"{path} declares {num_buckets} buckets but holds {len(body) // 8}")

    probs = np.frombuffer(body, dtype="<f8").astype(np.float64)
    probs.setflags(write=False)

    sidecar: Optional[DistributionSidecar] = None
    side = sidecar_path(path)
    if side.is_file():
        sidecar = DistributionSidecar.model_validate(json.loads(side.read_text(encoding="utf-8")))
    support = sidecar.support_total if sidecar else 0
    return BucketDistribution(probs=probs, smoothing_alpha=alpha, support_total=support), sidecar
