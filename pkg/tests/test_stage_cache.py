import asyncio

import pytest

from gransel.models import base as db
from gransel.services.stage_cache import StageCache, file_digest, fingerprint


def test_fingerprint_is_canonical():
    assert fingerprint({"a": 1, "b": [1, 2]}) == fingerprint({"b": [1, 2], "a": 1})
    assert fingerprint({"a": 1}) != fingerprint({"a": 2})
    assert len(fingerprint({})) == 64


def test_file_digest(tmp_path):
    path = tmp_path / "x.txt"
    path.write_bytes(b"abc")
    assert file_digest(path) == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"


async def _with_db(tmp_path, body):
    async with db.open_db(db.sqlite_url(tmp_path / "cache.db")):
        return await body(StageCache())


def test_lookup_and_record(tmp_path):
    out = tmp_path / "vocab.json"
    out.write_text("{}", encoding="utf-8")

    async def body(cache: StageCache):
        assert await cache.lookup("vocab", "k1") is None
        await cache.record("vocab", "k1", [out])
        hit = await cache.lookup("vocab", "k1")
        assert await cache.lookup("features", "k1") is None
        # recording again replaces the outputs
        await cache.record("vocab", "k1", [out, out])
        return hit, await cache.lookup("vocab", "k1")

    hit, again = asyncio.run(_with_db(tmp_path, body))
    assert hit == [out]
    assert again == [out, out]


def test_missing_outputs_make_entry_stale(tmp_path):
    out = tmp_path / "features.tsv"
    out.write_text("", encoding="utf-8")

    async def body(cache: StageCache):
        await cache.record("features", "k", [out])
        out.unlink()
        return await cache.lookup("features", "k")

    assert asyncio.run(_with_db(tmp_path, body)) is None


def test_disabled_cache_needs_no_database():
    async def body():
        cache = StageCache(enabled=False)
        await cache.record("vocab", "k", [])
        return await cache.lookup("vocab", "k")

    assert asyncio.run(body()) is None


def test_uninitialized_database():
    async def body():
        await StageCache().lookup("vocab", "k")

    with pytest.raises(RuntimeError, match="not initialized"):
        asyncio.run(body())


def test_open_db_clears_globals_on_exit(tmp_path):
    async def body():
        async with db.open_db(db.sqlite_url(tmp_path / "c.db")):
            assert db.async_session_maker is not None
        return db.engine, db.async_session_maker

    assert asyncio.run(body()) == (None, None)
    assert (tmp_path / "c.db").exists()
    assert db.sqlite_url(tmp_path / "c.db").startswith("sqlite+aiosqlite:////")
