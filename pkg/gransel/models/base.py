from __future__ import annotations

from contextlib import asynccontextmanager
from pathlib import Path
from typing import AsyncIterator, Optional

from sqlalchemy import event
from sqlalchemy.ext.asyncio import (
    AsyncEngine,
    AsyncSession,
    async_sessionmaker,
    create_async_engine,
)
from sqlalchemy.orm import declarative_base

Base = declarative_base()

# one cache database per process; set by setup_db(), cleared by dispose_db()
engine: Optional[AsyncEngine] = None
async_session_maker: Optional[async_sessionmaker[AsyncSession]] = None


def sqlite_url(path: Path) -> str:
    """aiosqlite URL for a cache file (absolute, so workers and reruns agree)."""
    return f"sqlite+aiosqlite:///{Path(path).resolve()}"


def _sqlite_pragmas(dbapi_connection, _record) -> None:
    cursor = dbapi_connection.cursor()
    cursor.execute("PRAGMA journal_mode=WAL")
    cursor.execute("PRAGMA synchronous=NORMAL")
    cursor.close()


def setup_db(database_url: str) -> None:
    """
    Create the async engine and session factory for the stage cache.
    Must run before init_db().
    """
    global engine, async_session_maker

    engine = create_async_engine(database_url, echo=False, future=True)
    if engine.dialect.name == "sqlite":
        event.listen(engine.sync_engine, "connect", _sqlite_pragmas)
    async_session_maker = async_sessionmaker(
        engine,
        expire_on_commit=False,
        class_=AsyncSession,
    )


async def init_db() -> None:
    if engine is None:
        raise RuntimeError("DB engine is not initialized. Call setup_db() first.")

    # register models on Base.metadata
    from . import artifact  # noqa: F401

    async with engine.begin() as conn:
        await conn.run_sync(Base.metadata.create_all)


async def dispose_db() -> None:
    global engine, async_session_maker

    if engine is not None:
        await engine.dispose()
    engine = None
    async_session_maker = None


@asynccontextmanager
async def open_db(database_url: str) -> AsyncIterator[None]:
    """setup_db + init_db for the duration of a block, disposed on exit."""
    setup_db(database_url)
    try:
        await init_db()
        yield
    finally:
        await dispose_db()
