from __future__ import annotations

import csv
import logging
import math
from collections import Counter
from dataclasses import dataclass, field
from enum import Enum
from functools import cached_property
from pathlib import Path
from types import MappingProxyType
from typing import Any, Dict, Iterable, Iterator, List, Mapping, Optional, Sequence, Tuple

from pydantic import BaseModel, ConfigDict, Field, ValidationError

from ..errors import VocabularyError
from .tokenizer import Trie, has_internal_separator, normalize, split_words, word_spans

logger = logging.getLogger("gransel.vocab")

FREQ_TOLERANCE = 1e-9
MULTIWORD_MIN_WORDS = 2
MULTIWORD_MAX_WORDS = 4


# =====================================================================
# TYPES
# =====================================================================


class Granularity(str, Enum):
    SUBWORD = "subword"
    WORD = "word"
    MULTIWORD = "multiword"


@dataclass(frozen=True)
class Token:
    text: str
    granularity: Granularity = Granularity.SUBWORD

    def __post_init__(self) -> None:
        if not self.text:
            raise VocabularyError("token text must be non-empty")
        internal = has_internal_separator(self.text)
        if self.granularity is Granularity.MULTIWORD and not internal:
            raise VocabularyError(f"multiword token without a word separator: {self.text!r}")
        if self.granularity is not Granularity.MULTIWORD and internal:
            raise VocabularyError(
                f"{self.granularity.value} token contains a word separator: {self.text!r}"
            )

    @property
    def length(self) -> int:
        return len(self.text)


class MergeKind(str, Enum):
    MULTI_GRANULAR = "multi_granular"
    MERGE_UNION = "merge"
    TARGET_ONLY = "target_only"
    BASE_ONLY = "base_only"
    MULTIWORD_ONLY = "multiword_only"

    @classmethod
    def parse(cls, raw: str) -> "MergeKind":
        key = raw.strip().lower().replace("-", "_")
        for kind in cls:
            if key in (kind.value, kind.name.lower()):
                return kind
        choices = ", ".join(k.value for k in cls)
        raise ValueError(f"unknown merge strategy {raw!r} (expected one of: {choices})")


# (subword, word, multiword)
MIX_PRESETS: Dict[str, Tuple[float, float, float]] = {
    "subword-word": (0.6, 0.3, 0.1),
    "subword-multiword": (0.6, 0.1, 0.3),
}
DEFAULT_MIX = MIX_PRESETS["subword-word"]


@dataclass(frozen=True)
class MergeStrategy:
    kind: MergeKind = MergeKind.MULTI_GRANULAR
    mix: Optional[Tuple[float, float, float]] = None

    def __post_init__(self) -> None:
        if self.mix is None:
            return
        if self.kind is not MergeKind.MULTI_GRANULAR:
            raise ValueError("a granularity mix is only valid for the multi_granular strategy")
        if len(self.mix) != 3 or any(p < 0 for p in self.mix):
            raise ValueError(f"mix must be three non-negative proportions, got {self.mix}")
        if abs(sum(self.mix) - 1.0) > FREQ_TOLERANCE:
            raise ValueError(f"mix proportions must sum to 1, got {sum(self.mix)}")

    @staticmethod
    def preset(name: str) -> Tuple[float, float, float]:
        if name == "default":
            return DEFAULT_MIX
        try:
            return MIX_PRESETS[name]
        except KeyError:
            raise ValueError(f"unknown mix preset {name!r} (expected one of: {', '.join(MIX_PRESETS)})")

    @property
    def fixed_ratio(self) -> bool:
        return self.mix is not None

    def to_dict(self) -> Dict[str, Any]:
        return {"kind": self.kind.value, "mix": list(self.mix) if self.mix else None}


class Vocabulary:
    """
    Ordered set of tokens with relative frequencies on the target data.

    Frequencies are renormalized on construction; tokens never seen on target data
    keep frequency 0. Instances are treated as immutable, every operation returns a
    new Vocabulary.
    """

    def __init__(
        self,
        tokens: Iterable[Token],
        freq: Optional[Mapping[str, float]] = None,
        meta: Optional[Mapping[str, Any]] = None,
    ) -> None:
        entries: Dict[str, Token] = {}
        for token in tokens:
            if token.text in entries:
                raise VocabularyError(f"duplicate token text: {token.text!r}")
            entries[token.text] = token
        self._entries = entries
        self._freq = _normalized(entries, freq or {})
        self.meta: Dict[str, Any] = dict(meta or {})

    # ---- container protocol ----

    def __len__(self) -> int:
        return len(self._entries)

    def __iter__(self) -> Iterator[Token]:
        return iter(self._entries.values())

    def __contains__(self, text: object) -> bool:
        return text in self._entries

    def __repr__(self) -> str:
        return f"<Vocabulary size={len(self)} avg_len={self.avg_token_length:.3f}>"

    # ---- accessors ----

    @property
    def tokens(self) -> Tuple[Token, ...]:
        return tuple(self._entries.values())

    @property
    def texts(self) -> List[str]:
        return list(self._entries)

    @property
    def freq(self) -> Mapping[str, float]:
        return MappingProxyType(self._freq)

    def get(self, text: str) -> Optional[Token]:
        return self._entries.get(text)

    def frequency(self, text: str) -> float:
        return self._freq.get(text, 0.0)

    @property
    def avg_token_length(self) -> float:
        if not self._entries:
            return 0.0
        return sum(len(t) for t in self._entries) / len(self._entries)

    @property
    def fallback_texts(self) -> List[str]:
        return [t for t in self._entries if len(t) == 1]

    def granularity_counts(self) -> Dict[str, int]:
        counts = Counter(t.granularity.value for t in self)
        return {g.value: counts.get(g.value, 0) for g in Granularity}

    @cached_property
    def trie(self) -> Trie:
        return Trie(self._entries)

    # ---- derivation ----

    def with_freq(self, freq: Mapping[str, float]) -> "Vocabulary":
        return Vocabulary(self.tokens, freq, self.meta)

    def subset(self, texts: Iterable[str]) -> "Vocabulary":
        keep = set(texts)
        tokens = [t for t in self if t.text in keep]
        return Vocabulary(tokens, {t.text: self._freq[t.text] for t in tokens}, self.meta)


def _normalized(entries: Mapping[str, Token], freq: Mapping[str, float]) -> Dict[str, float]:
    for text, value in freq.items():
        if text not in entries:
            raise VocabularyError(f"frequency given for unknown token {text!r}")
        if value < 0 or not math.isfinite(value):
            raise VocabularyError(f"invalid frequency for {text!r}: {value}")
    total = math.fsum(freq.values())
    if total <= 0:
        return {text: 0.0 for text in entries}
    return {text: freq.get(text, 0.0) / total for text in entries}


# =====================================================================
# UTILITY
# =====================================================================


def vocab_utility(vocab: Vocabulary) -> float:
    """
    H_v = -(1 / l_v) * sum_j P(j) ln P(j), in nats per character.
    """
    l_v = vocab.avg_token_length
    if l_v <= 0:
        raise VocabularyError("vocabulary utility is undefined for an empty vocabulary")
    entropy = -math.fsum(p * math.log(p) for p in vocab.freq.values() if p > 0)
    return entropy / l_v


# =====================================================================
# TASK VOCABULARY
# =====================================================================


def learn_task_vocab(
    task_corpus: Iterable[str],
    max_words: int,
    max_multiwords: int,
    min_multiword_count: int = 5,
) -> Vocabulary:
    """
    Mine the most frequent words and multi-word phrases (2 to 4 consecutive words
    separated by whitespace only) from the task documents.
    """
    words: Counter[str] = Counter()
    phrases: Counter[str] = Counter()
    seen = 0
    skipped = 0

    for raw in task_corpus:
        seen += 1
        if not raw or raw.isspace():
            skipped += 1
            continue
        text = normalize(raw)
        words.update(split_words(text))
        if max_multiwords > 0:
            phrases.update(_phrases(text))

    if skipped:
        logger.warning("Skipped %d whitespace-only task documents out of %d", skipped, seen)
    if seen == skipped:
        raise VocabularyError("empty task corpus")

    top_words = _top(words, max_words, min_count=1)
    top_phrases = _top(phrases, max_multiwords, min_count=min_multiword_count)

    tokens = [Token(w, Granularity.WORD) for w, _ in top_words]
    tokens += [Token(p, Granularity.MULTIWORD) for p, _ in top_phrases]
    freq = {text: float(count) for text, count in (*top_words, *top_phrases)}

    logger.info(
        "Learned task vocabulary: %d words, %d multiwords from %d documents",
        len(top_words),
        len(top_phrases),
        seen - skipped,
    )
    return Vocabulary(
        tokens,
        freq,
        meta={"source": "task", "documents": seen - skipped, "skipped_documents": skipped},
    )


def _phrases(text: str) -> Iterator[str]:
    spans = word_spans(text)
    # whitespace_gap[i] tells whether words i and i+1 are joined by whitespace only
    whitespace_gap = [text[spans[i][1]:spans[i + 1][0]].isspace() for i in range(len(spans) - 1)]
    for i in range(len(spans)):
        for n in range(MULTIWORD_MIN_WORDS, MULTIWORD_MAX_WORDS + 1):
            j = i + n - 1
            if j >= len(spans) or not whitespace_gap[j - 1]:
                break
            yield text[spans[i][0]:spans[j][1]]


def _top(counts: Counter[str], limit: int, min_count: int) -> List[Tuple[str, int]]:
    ranked = sorted(
        ((text, c) for text, c in counts.items() if c >= min_count),
        key=lambda item: (-item[1], item[0]),
    )
    return ranked[:max(limit, 0)]


def count_token_frequencies(vocab: Vocabulary, documents: Iterable[str]) -> Vocabulary:
    """
    Re-estimate P(j) by segmenting the documents with the vocabulary itself.
    Fallback characters outside the vocabulary are not counted.
    """
    counts: Counter[str] = Counter()
    trie = vocab.trie
    for raw in documents:
        pieces, known = trie.segment(normalize(raw))
        counts.update(p for p, k in zip(pieces, known) if k)
    return vocab.with_freq({text: float(c) for text, c in counts.items()})


# =====================================================================
# MERGING
# =====================================================================


def _union(base: Vocabulary, task: Vocabulary) -> Tuple[List[Token], Dict[str, float]]:
    tokens: Dict[str, Token] = {t.text: t for t in base}
    freq: Dict[str, float] = dict(base.freq)
    for t in task:
        # duplicates: task side wins for both the token and its frequency
        tokens[t.text] = t
        freq[t.text] = task.frequency(t.text)
    return list(tokens.values()), freq


def merge_vocabs(
    base: Vocabulary,
    task: Vocabulary,
    strategy: MergeStrategy,
    target_size: Optional[int] = None,
) -> Vocabulary:
    kind = strategy.kind

    if kind is MergeKind.BASE_ONLY:
        tokens, freq = list(base.tokens), dict(base.freq)
    else:
        tokens, freq = _union(base, task)
        if kind is MergeKind.TARGET_ONLY:
            tokens = [t for t in tokens if t.text in task or base.frequency(t.text) > 0]
        elif kind is MergeKind.MULTIWORD_ONLY:
            tokens = [t for t in tokens if t.granularity is Granularity.MULTIWORD]
        elif kind is MergeKind.MULTI_GRANULAR and strategy.fixed_ratio:
            if target_size is None:
                raise VocabularyError("fixed-ratio merge needs a target vocabulary size")
            tokens = _trim_to_mix(tokens, freq, strategy.mix, target_size)

    if not tokens:
        raise VocabularyError("merge produced empty vocabulary")

    kept = {t.text for t in tokens}
    merged = Vocabulary(
        tokens,
        {text: value for text, value in freq.items() if text in kept},
        meta={"source": f"merge:{kind.value}"},
    )
    logger.info("Merged vocabulary with %s: %d tokens %s", kind.value, len(merged), merged.granularity_counts())
    return merged


def _mix_quotas(mix: Sequence[float], size: int) -> List[int]:
    raw = [p * size for p in mix]
    quotas = [math.floor(r + FREQ_TOLERANCE) for r in raw]
    remainders = sorted(range(len(mix)), key=lambda i: (-(raw[i] - quotas[i]), i))
    for i in remainders[: size - sum(quotas)]:
        quotas[i] += 1
    return quotas


def _rank(tokens: Iterable[Token], freq: Mapping[str, float]) -> List[Token]:
    return sorted(tokens, key=lambda t: (-freq.get(t.text, 0.0), t.text))


def _trim_to_mix(
    tokens: List[Token],
    freq: Mapping[str, float],
    mix: Sequence[float],
    size: int,
) -> List[Token]:
    if len(tokens) <= size:
        return tokens
    # single characters lead their group and are always kept
    groups = [
        sorted(
            (t for t in tokens if t.granularity is g),
            key=lambda t: (t.length != 1, -freq.get(t.text, 0.0), t.text),
        )
        for g in Granularity
    ]
    reserved = [sum(1 for t in g if t.length == 1) for g in groups]
    if sum(reserved) > size:
        raise VocabularyError(
            f"target size {size} is below the {sum(reserved)} single-character fallback tokens"
        )
    quotas = _mix_quotas(mix, size)

    # a quota below its reserved singles grows; the excess comes off the later groups first
    excess = sum(max(r - q, 0) for q, r in zip(quotas, reserved))
    quotas = [max(q, r) for q, r in zip(quotas, reserved)]
    for i in reversed(range(len(groups))):
        take = min(excess, quotas[i] - reserved[i])
        quotas[i] -= take
        excess -= take

    # a group short of its quota hands the shortfall to the others, in group order
    shortfall = sum(max(q - len(g), 0) for q, g in zip(quotas, groups))
    quotas = [min(q, len(g)) for q, g in zip(quotas, groups)]
    for i, g in enumerate(groups):
        extra = min(shortfall, len(g) - quotas[i])
        quotas[i] += extra
        shortfall -= extra

    keep = {t.text for q, g in zip(quotas, groups) for t in g[:q]}
    return [t for t in tokens if t.text in keep]


def cap_vocab(vocab: Vocabulary, target_size: int) -> Vocabulary:
    """
    Bound a vocabulary by frequency rank, always keeping single-character tokens.
    """
    if len(vocab) <= target_size:
        return vocab
    fallback = set(vocab.fallback_texts)
    if len(fallback) > target_size:
        raise VocabularyError(
            f"target size {target_size} is below the {len(fallback)} single-character fallback tokens"
        )
    ranked = _rank((t for t in vocab if t.text not in fallback), vocab.freq)
    keep = fallback | {t.text for t in ranked[: target_size - len(fallback)]}
    return vocab.subset(keep)


# =====================================================================
# PRUNING
# =====================================================================


@dataclass(frozen=True)
class TraceEntry:
    step: int
    size: int
    utility_nats: float


@dataclass
class PruneTrace:
    initial: TraceEntry
    steps: List[TraceEntry] = field(default_factory=list)

    @property
    def entries(self) -> List[TraceEntry]:
        return [self.initial, *self.steps]


def prune_schedule(start: int, target: int, steps: int) -> List[int]:
    """
    Geometric sizes from `start` down to `target`, strictly decreasing. Fewer rounds
    than `steps` are used when there are not enough tokens to remove.
    """
    rounds = min(steps, start - target)
    sizes: List[int] = []
    prev = start
    for t in range(1, rounds + 1):
        size = round(start * (target / start) ** (t / rounds))
        size = max(size, target + (rounds - t))
        size = min(size, prev - 1)
        sizes.append(size)
        prev = size
    if sizes:
        sizes[-1] = target
    return sizes


def _xlogx(x: float) -> float:
    return x * math.log(x) if x > 0 else 0.0


class _PruneState:
    """
    Unnormalized token masses plus the running sums needed to score a single
    removal in time proportional to the removed token's decomposition.
    """

    def __init__(self, vocab: Vocabulary) -> None:
        self.granularity = {t.text: t.granularity for t in vocab}
        self.mass: Dict[str, float] = dict(vocab.freq)

    def utility(self, mass_total: float, xlogx_total: float, length_total: int, n: int) -> float:
        if mass_total <= 0 or n == 0 or length_total == 0:
            return 0.0
        entropy = math.log(mass_total) - xlogx_total / mass_total
        return entropy * n / length_total

    def totals(self) -> Tuple[float, float, int, int]:
        return (
            math.fsum(self.mass.values()),
            math.fsum(_xlogx(m) for m in self.mass.values()),
            sum(len(t) for t in self.mass),
            len(self.mass),
        )

    def pieces(self, text: str, trie: Trie, exclude_whole: bool) -> Counter[str]:
        if self.granularity[text] is Granularity.SUBWORD:
            return Counter()
        parts, known = trie.segment(text, exclude_whole=exclude_whole)
        return Counter(p for p, k in zip(parts, known) if k)

    def score(self, text: str, trie: Trie, base: Tuple[float, float, int, int], current: float) -> float:
        mass_total, xlogx_total, length_total, n = base
        m_r = self.mass[text]
        pieces = self.pieces(text, trie, exclude_whole=True)
        new_mass = mass_total - m_r
        new_xlogx = xlogx_total - _xlogx(m_r)
        for piece, c in pieces.items():
            m_j = self.mass[piece]
            new_mass += c * m_r
            new_xlogx += _xlogx(m_j + c * m_r) - _xlogx(m_j)
        after = self.utility(new_mass, new_xlogx, length_total - len(text), n - 1)
        return abs(after - current)

    def remove(self, removed: Sequence[str]) -> None:
        dropped = set(removed)
        survivors = Trie(t for t in self.mass if t not in dropped)
        for text in removed:
            m_r = self.mass[text]
            for piece, c in self.pieces(text, survivors, exclude_whole=False).items():
                self.mass[piece] += c * m_r
        for text in removed:
            del self.mass[text]
            del self.granularity[text]
        total = math.fsum(self.mass.values())
        if total > 0:
            self.mass = {t: m / total for t, m in self.mass.items()}


def prune_vocab(merged: Vocabulary, target_size: int, steps: int) -> Tuple[Vocabulary, PruneTrace]:
    """
    Shrink `merged` to exactly `target_size` tokens in `steps` rounds. Each round
    scores every removable token by |H_v(after) - H_v(before)| against the round's
    starting vocabulary and removes the lowest-impact tokens, ties broken by text.
    Single-character tokens are never removed.
    """
    if steps < 1:
        raise VocabularyError(f"steps must be >= 1, got {steps}")
    fallback = set(merged.fallback_texts)
    if target_size < len(fallback):
        raise VocabularyError(
            f"target size {target_size} is below the {len(fallback)} single-character fallback tokens"
        )

    trace = PruneTrace(initial=TraceEntry(0, len(merged), vocab_utility(merged)))
    if len(merged) <= target_size:
        return merged, trace

    state = _PruneState(merged)
    order = merged.texts
    for step, size in enumerate(prune_schedule(len(merged), target_size, steps), start=1):
        base = state.totals()
        current = state.utility(*base)
        trie = Trie(state.mass)
        scored = sorted(
            (state.score(text, trie, base, current), text)
            for text in state.mass
            if text not in fallback
        )
        removed = [text for _, text in scored[: len(state.mass) - size]]
        state.remove(removed)

        pruned = merged.subset(state.mass).with_freq(state.mass)
        trace.steps.append(TraceEntry(step, len(pruned), vocab_utility(pruned)))
        logger.info("Prune step %d: %d tokens, H_v=%.6f", step, len(pruned), trace.steps[-1].utility_nats)

    result = Vocabulary(
        [merged.get(t) for t in order if t in state.mass],
        state.mass,
        meta={**merged.meta, "pruned_from": len(merged)},
    )
    return result, trace


# =====================================================================
# FILES
# =====================================================================


class TokenEntry(BaseModel):
    text: str = Field(min_length=1)
    granularity: Granularity = Granularity.SUBWORD
    freq: float = Field(default=0.0, ge=0.0)


class VocabMeta(BaseModel):
    model_config = ConfigDict(extra="allow")

    source: str = ""
    size: int = 0


class VocabFile(BaseModel):
    tokens: List[TokenEntry]
    meta: VocabMeta = Field(default_factory=VocabMeta)


def load_vocab(path: Path) -> Vocabulary:
    try:
        raw = path.read_text(encoding="utf-8")
    except OSError as e:
        raise VocabularyError(f"cannot read vocabulary {path}: {e}")
    try:
        data = VocabFile.model_validate_json(raw)
    except ValidationError as e:
        raise VocabularyError(f"invalid vocabulary file {path}: {e}")

    if data.meta.size and data.meta.size != len(data.tokens):
        logger.warning("Vocabulary %s declares size %d but has %d tokens", path, data.meta.size, len(data.tokens))

    tokens = [Token(e.text, e.granularity) for e in data.tokens]
    freq = {e.text: e.freq for e in data.tokens}
    meta = data.meta.model_dump()
    meta["path"] = str(path)
    return Vocabulary(tokens, freq, meta)


def save_vocab(vocab: Vocabulary, path: Path, source: Optional[str] = None) -> None:
    data = VocabFile(
        tokens=[
            TokenEntry(text=t.text, granularity=t.granularity, freq=vocab.frequency(t.text))
            for t in vocab
        ],
        meta=VocabMeta(source=source or str(vocab.meta.get("source", "")), size=len(vocab)),
    )
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(data.model_dump_json(indent=1), encoding="utf-8")


def write_trace_csv(trace: PruneTrace, path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["step", "size", "utility_nats"])
        for entry in trace.entries:
            writer.writerow([entry.step, entry.size, repr(entry.utility_nats)])
