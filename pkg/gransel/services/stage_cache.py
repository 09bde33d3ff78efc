from __future__ import annotations

import hashlib
import json
import logging
from pathlib import Path
from typing import Any, List, Mapping, Optional, Sequence

from sqlalchemy import select

from ..models import base as db
from ..models.artifact import StageArtifact

logger = logging.getLogger("gransel.cache")

CHUNK = 1 << 20


def file_digest(path: Path) -> str:
    h = hashlib.sha256()
    with path.open("rb") as f:
        for chunk in iter(lambda: f.read(CHUNK), b""):
            h.update(chunk)
    return h.hexdigest()


def fingerprint(parts: Mapping[str, Any]) -> str:
    """
    sha256 over the canonical JSON of `parts`.
    """
    canonical = json.dumps(parts, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


class StageCache:
    """
    Records which outputs a stage produced for a given input fingerprint, so an
    identical re-run can skip the stage.
    """

    def __init__(self, enabled: bool = True) -> None:
        self.enabled = enabled

    def _session_maker(self):
        if db.async_session_maker is None:
            raise RuntimeError("DB session maker is not initialized")
        return db.async_session_maker

    async def lookup(self, stage: str, key: str) -> Optional[List[Path]]:
        if not self.enabled:
            return None
        async with self._session_maker()() as session:
            result = await session.execute(
                select(StageArtifact).where(
                    StageArtifact.stage == stage,
                    StageArtifact.fingerprint == key,
                )
            )
            row: Optional[StageArtifact] = result.scalar_one_or_none()

        if row is None:
            return None
        outputs = [Path(p) for p in row.outputs]
        missing = [p for p in outputs if not p.exists()]
        if missing:
            logger.info("Stage %s cache entry is stale (%d outputs missing)", stage, len(missing))
            return None
        logger.info("Stage %s cache hit (%s)", stage, key[:12])
        return outputs

    async def record(self, stage: str, key: str, outputs: Sequence[Path]) -> None:
        if not self.enabled:
            return
        async with self._session_maker()() as session:
            result = await session.execute(
                select(StageArtifact).where(
                    StageArtifact.stage == stage,
                    StageArtifact.fingerprint == key,
                )
            )
            row: Optional[StageArtifact] = result.scalar_one_or_none()
            if row is None:
                row = StageArtifact(stage=stage, fingerprint=key)
                session.add(row)
            row.outputs = [str(p) for p in outputs]
            await session.commit()
        logger.info("Stage %s recorded %d outputs (%s)", stage, len(outputs), key[:12])
