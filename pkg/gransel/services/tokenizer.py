"""
Greedy longest-match segmentation over a multi-granular vocabulary.

The vocabulary is indexed by a prefix trie; at every position the longest token text
that matches wins, so a multi-word entry beats its constituent words. When nothing
matches, the next character is emitted on its own and counted as out-of-vocabulary.
"""
from __future__ import annotations

import re
import string
import unicodedata
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Dict, Iterable, List, Optional, Sequence, Tuple

from ..errors import TokenizerError

if TYPE_CHECKING:
    from .vocab import Vocabulary

SEPARATOR_PUNCTUATION = frozenset(string.punctuation)

_WORD_RE = re.compile(r"[^\s" + re.escape(string.punctuation) + r"]+")

# terminal marker; trie keys are otherwise single characters
_END = ""


def is_separator(ch: str) -> bool:
    return ch.isspace() or ch in SEPARATOR_PUNCTUATION


def has_internal_separator(text: str) -> bool:
    """
    True when a separator sits between two non-separator characters.
    """
    flags = [is_separator(ch) for ch in text]
    if all(flags):
        return False
    first = flags.index(False)
    last = len(flags) - 1 - flags[::-1].index(False)
    return any(flags[first:last + 1])


def word_spans(text: str) -> List[Tuple[int, int]]:
    """
    (start, end) of every maximal run of non-separator characters.
    """
    return [m.span() for m in _WORD_RE.finditer(text)]


def split_words(text: str) -> List[str]:
    return _WORD_RE.findall(text)


def normalize(text: str) -> str:
    return unicodedata.normalize("NFC", text)


class Trie:
    def __init__(self, tokens: Iterable[str] = ()) -> None:
        self._root: Dict[str, dict] = {}
        self._size = 0
        for token in tokens:
            self.insert(token)

    def insert(self, token: str) -> None:
        if not token:
            raise TokenizerError("cannot insert an empty token")
        node = self._root
        for ch in token:
            node = node.setdefault(ch, {})
        if _END not in node:
            node[_END] = {}
            self._size += 1

    def __len__(self) -> int:
        return self._size

    def __contains__(self, token: str) -> bool:
        node = self._root
        for ch in token:
            node = node.get(ch)
            if node is None:
                return False
        return _END in node

    def longest_match(self, text: str, start: int = 0, limit: Optional[int] = None) -> int:
        """
        End offset of the longest match starting at `start`, or -1.
        `limit` bounds the end offset (exclusive of longer matches).
        """
        stop = len(text) if limit is None else min(limit, len(text))
        best = -1
        node = self._root
        for i in range(start, stop):
            node = node.get(text[i])
            if node is None:
                break
            if _END in node:
                best = i + 1
        return best

    def segment(self, text: str, exclude_whole: bool = False) -> Tuple[List[str], List[bool]]:
        """
        Greedy segmentation of `text`. Returns the pieces and, per piece, whether it
        is a vocabulary token (False for single-character fallbacks).

        With `exclude_whole`, a match covering all of `text` from offset 0 is not
        allowed, which gives the decomposition of a token under the rest of the
        vocabulary.
        """
        pieces: List[str] = []
        known: List[bool] = []
        pos = 0
        n = len(text)
        while pos < n:
            limit = n - 1 if exclude_whole and pos == 0 else None
            end = self.longest_match(text, pos, limit)
            if end == -1:
                pieces.append(text[pos])
                known.append(False)
                pos += 1
            else:
                pieces.append(text[pos:end])
                known.append(True)
                pos = end
        return pieces, known


@dataclass
class TokenSequence:
    doc_id: Optional[str]
    tokens: List[str] = field(default_factory=list)
    oov_count: int = 0

    def __len__(self) -> int:
        return len(self.tokens)

    def text(self) -> str:
        return "".join(self.tokens)


def tokenize(text: str, vocab: "Vocabulary", doc_id: Optional[str] = None) -> TokenSequence:
    if len(vocab) == 0:
        raise TokenizerError("cannot tokenize with an empty vocabulary")
    pieces, known = vocab.trie.segment(normalize(text))
    return TokenSequence(doc_id=doc_id, tokens=pieces, oov_count=known.count(False))


def word_tokenize(text: str, doc_id: Optional[str] = None) -> TokenSequence:
    """
    Plain separator-delimited words, the vocabulary-free n-gram baseline.
    """
    return TokenSequence(doc_id=doc_id, tokens=split_words(normalize(text)))


def nsl(candidate_lengths: Sequence[int], reference_lengths: Sequence[int]) -> float:
    """
    Normalized sequence length: total candidate tokens over total reference tokens.
    """
    if len(candidate_lengths) != len(reference_lengths):
        raise TokenizerError(
            f"length lists differ: {len(candidate_lengths)} vs {len(reference_lengths)}"
        )
    if not candidate_lengths:
        raise TokenizerError("nsl needs at least one document")
    reference_total = sum(reference_lengths)
    if reference_total <= 0:
        raise TokenizerError("reference token count is zero")
    return sum(candidate_lengths) / reference_total


def sequence_lengths(texts: Iterable[str], vocab: "Vocabulary") -> List[int]:
    return [len(tokenize(text, vocab)) for text in texts]
