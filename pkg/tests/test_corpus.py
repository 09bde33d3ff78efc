import logging
from collections import Counter

import pytest

from gransel.errors import InputError
from gransel.services.corpus import CorpusStats, read_jsonl, read_texts, shard_of

from .conftest import write_jsonl


def _write_lines(path, lines):
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def test_reads_documents_in_order(tmp_path):
    path = write_jsonl(tmp_path / "c.jsonl", [{"id": "a", "text": "one"}, {"id": 7, "text": "two"}])
    docs = list(read_jsonl([path]))
    assert [(d.doc_id, d.text, d.index) for d in docs] == [("a", "one", 0), ("7", "two", 1)]


def test_missing_id_falls_back_to_path_and_line(tmp_path):
    path = _write_lines(tmp_path / "c.jsonl", ['{"text": "x"}', "", '{"text": "y"}'])
    docs = list(read_jsonl([path]))
    assert [d.doc_id for d in docs] == [f"{path}:1", f"{path}:3"]


def test_bad_lines_and_duplicates_are_skipped(tmp_path, caplog):
    path = _write_lines(
        tmp_path / "c.jsonl",
        [
            '{"id": "a", "text": "ok"}',
            "not json",
            '{"id": "b"}',
            '["a list"]',
            '{"id": "a", "text": "again"}',
            '{"id": "tab\\there", "text": "x"}',
            '{"id": "c", "text": ""}',
        ],
    )
    stats = CorpusStats()
    with caplog.at_level(logging.WARNING, logger="gransel.corpus"):
        docs = list(read_jsonl([path], stats=stats))
    assert [d.doc_id for d in docs] == ["a", "c"]
    assert stats == CorpusStats(documents=2, bad_lines=4, duplicate_ids=1)
    assert "duplicate document id" in caplog.text


def test_strict_mode_raises(tmp_path):
    bad = _write_lines(tmp_path / "bad.jsonl", ['{"id": "a", "text": "ok"}', "{"])
    with pytest.raises(InputError, match="bad.jsonl:2"):
        list(read_jsonl([bad], strict=True))
    dup = _write_lines(tmp_path / "dup.jsonl", ['{"id": "a", "text": "ok"}', '{"id": "a", "text": "ok"}'])
    with pytest.raises(InputError, match="duplicate"):
        list(read_jsonl([dup], strict=True))


def test_ids_are_unique_across_files(tmp_path):
    first = write_jsonl(tmp_path / "1.jsonl", [{"id": "x", "text": "a"}])
    second = write_jsonl(tmp_path / "2.jsonl", [{"id": "x", "text": "b"}, {"id": "y", "text": "c"}])
    stats = CorpusStats()
    docs = list(read_jsonl([first, second], stats=stats))
    assert [(d.doc_id, d.index) for d in docs] == [("x", 0), ("y", 1)]
    assert stats.duplicate_ids == 1


def test_unreadable_file(tmp_path):
    with pytest.raises(InputError, match="cannot read corpus"):
        list(read_jsonl([tmp_path / "missing.jsonl"]))


def test_read_texts(tmp_path):
    path = write_jsonl(tmp_path / "t.jsonl", [{"text": "a"}, {"text": "b"}])
    assert read_texts(path) == ["a", "b"]


def test_round_robin_shards_are_balanced(tmp_path):
    path = write_jsonl(tmp_path / "c.jsonl", ({"id": f"d{i}", "text": "x"} for i in range(16_000)))
    sizes = Counter(shard_of(d.index, 16) for d in read_jsonl([path]))
    assert sizes == {s: 1000 for s in range(16)}
    shard3 = [d.doc_id for d in read_jsonl([path]) if shard_of(d.index, 16) == 3]
    assert shard3[:3] == ["d3", "d19", "d35"]
    assert len(shard3) == 1000
