from __future__ import annotations

import json
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
import pytest

from gransel.services.vocab import Granularity, Token, Vocabulary, save_vocab

LETTERS = "abcdefghijklmnopqrstuvwxyz"

# ---- synthetic phrase corpus for strategy comparisons ----

PHRASE_LEXICON = [
    "alpha", "bravo", "charlie", "delta", "echo", "foxtrot", "golf", "hotel", "india", "juliet",
    "kilo", "lima", "mike", "november", "oscar", "papa", "quebec", "romeo", "sierra", "tango",
]
BASE_SUBWORDS = [
    "in", "er", "an", "th", "on", "re", "at", "en", "ng", "ti", "de", "le", "ra",
    "ta", "es", "ar", "or", "mo", "el", "ne", "qu", "zz", "xy", "ing", "ion", "the",
]


def write_jsonl(path: Path, records: Iterable[Dict]) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as f:
        for record in records:
            f.write(json.dumps(record, ensure_ascii=False) + "\n")
    return path


def make_vocab(texts: Sequence[str], freq: Optional[Dict[str, float]] = None) -> Vocabulary:
    """
    Granularity inferred from the text: spaces inside make a multiword, plain
    alphabetic strings of length > 1 are words, everything else is a subword.
    """
    tokens = []
    for text in texts:
        if " " in text.strip():
            g = Granularity.MULTIWORD
        elif text.isalpha() and len(text) > 1:
            g = Granularity.WORD
        else:
            g = Granularity.SUBWORD
        tokens.append(Token(text, g))
    return Vocabulary(tokens, freq)


def phrase_corpus(num_phrases: int = 60, num_docs: int = 300) -> List[str]:
    """
    Documents made of two four-word phrases each; every phrase repeats several times.
    """
    phrases = [
        " ".join(PHRASE_LEXICON[(p * (w + 1) + w * 3 + p // 20) % 20] for w in range(4))
        for p in range(num_phrases)
    ]
    return [f"{phrases[i % num_phrases]} {phrases[(i * 7 + 3) % num_phrases]}" for i in range(num_docs)]


def phrase_base_vocab(unused_chars: str = "01") -> Vocabulary:
    singles = list(LETTERS + " " + unused_chars)
    return Vocabulary([Token(t, Granularity.SUBWORD) for t in singles + BASE_SUBWORDS])


# ---- synthetic two-domain corpus for selection checks ----

DOMAIN_VOCAB = [f"t{i:02d}" for i in range(50)]


def domain_probs(domain: str) -> np.ndarray:
    """
    80% of the mass on one half of the 50-token vocabulary.
    """
    probs = np.full(50, 0.2 / 25)
    if domain == "A":
        probs[:25] = 0.8 / 25
    else:
        probs[25:] = 0.8 / 25
    return probs


def domain_docs(rng: np.random.Generator, domain: str, n: int, length: int = 20) -> List[str]:
    probs = domain_probs(domain)
    draws = rng.choice(50, size=(n, length), p=probs)
    return [" ".join(DOMAIN_VOCAB[j] for j in row) for row in draws]


def two_domain_corpus(
    num_docs: int = 20_000,
    share_a: float = 0.1,
    num_target: int = 200,
    seed: int = 7,
) -> Tuple[List[Tuple[str, str]], List[str]]:
    """
    (raw documents as (id, text) in ingestion order, target texts from domain A).
    """
    rng = np.random.default_rng(seed)
    n_a = int(num_docs * share_a)
    texts = domain_docs(rng, "A", n_a) + domain_docs(rng, "B", num_docs - n_a)
    order = rng.permutation(num_docs)
    raw = [(f"doc-{i:05d}", texts[j]) for i, j in enumerate(order)]
    target = domain_docs(rng, "A", num_target)
    return raw, target


@pytest.fixture
def pipeline_inputs(tmp_path: Path) -> Dict[str, Path]:
    """
    A small two-domain run: 1,600 raw documents, 80 target documents, a character
    base vocabulary with the domain tokens' shared prefix.
    """
    raw, target = two_domain_corpus(num_docs=1_600, share_a=0.25, num_target=80, seed=11)
    raw_path = write_jsonl(tmp_path / "raw.jsonl", ({"id": d, "text": t} for d, t in raw))
    task_path = write_jsonl(tmp_path / "task.jsonl", ({"text": t} for t in target))
    base = Vocabulary([Token(c, Granularity.SUBWORD) for c in "t0123456789 "] + [Token("t0", Granularity.SUBWORD)])
    base_path = tmp_path / "base_vocab.json"
    save_vocab(base, base_path, source="test")
    return {"raw": raw_path, "task": task_path, "base": base_path, "root": tmp_path}
