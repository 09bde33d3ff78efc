from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, List, Optional, Sequence, Set

from tqdm import tqdm

from ..errors import InputError

logger = logging.getLogger("gransel.corpus")

# warnings per file before going quiet
MAX_LINE_WARNINGS = 10


@dataclass(frozen=True)
class Document:
    doc_id: str
    text: str
    index: int


@dataclass
class CorpusStats:
    documents: int = 0
    bad_lines: int = 0
    duplicate_ids: int = 0


def _parse_line(line: str, path: Path, line_no: int) -> Document:
    record = json.loads(line)
    if not isinstance(record, dict):
        raise ValueError("line is not a JSON object")
    text = record.get("text")
    if not isinstance(text, str):
        raise ValueError("missing string field 'text'")
    raw_id = record.get("id")
    doc_id = f"{path}:{line_no}" if raw_id is None else str(raw_id)
    if not doc_id or any(ch in doc_id for ch in "\t\n\r"):
        raise ValueError(f"unusable document id {doc_id!r}")
    return Document(doc_id=doc_id, text=text, index=-1)


def read_jsonl(
    paths: Sequence[Path],
    strict: bool = False,
    stats: Optional[CorpusStats] = None,
    show_progress: bool = False,
) -> Iterator[Document]:
    """
    Stream documents from JSONL files in order. `index` counts accepted documents
    across all files and drives shard assignment.
    """
    stats = stats if stats is not None else CorpusStats()
    seen: Set[str] = set()
    index = 0
    for path in paths:
        warned = 0
        try:
            f = path.open("r", encoding="utf-8")
        except OSError as e:
            raise InputError(f"cannot read corpus {path}: {e}")
        with f:
            lines = tqdm(f, desc=path.name, unit=" docs", disable=not show_progress)
            for line_no, line in enumerate(lines, start=1):
                if not line.strip():
                    continue
                try:
                    doc = _parse_line(line, path, line_no)
                except (ValueError, json.JSONDecodeError) as e:
                    if strict:
                        raise InputError(f"{path}:{line_no}: {e}")
                    stats.bad_lines += 1
                    if warned < MAX_LINE_WARNINGS:
                        logger.warning("Skipping %s:%d: %s", path, line_no, e)
                        warned += 1
                    continue
                if doc.doc_id in seen:
                    if strict:
                        raise InputError(f"{path}:{line_no}: duplicate document id {doc.doc_id!r}")
                    stats.duplicate_ids += 1
                    if warned < MAX_LINE_WARNINGS:
                        logger.warning("Skipping %s:%d: duplicate document id %r", path, line_no, doc.doc_id)
                        warned += 1
                    continue
                seen.add(doc.doc_id)
                stats.documents += 1
                yield Document(doc_id=doc.doc_id, text=doc.text, index=index)
                index += 1
        if stats.bad_lines and warned >= MAX_LINE_WARNINGS:
            logger.warning("Further problems in %s were not logged individually", path)


def read_texts(path: Path, strict: bool = False) -> List[str]:
    return [doc.text for doc in read_jsonl([path], strict=strict)]


def shard_of(index: int, num_shards: int) -> int:
    """
    Round-robin assignment by ingestion index.
    """
    return index % num_shards
