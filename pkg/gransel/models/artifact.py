from __future__ import annotations

from datetime import datetime, timezone

from sqlalchemy import JSON, DateTime, Integer, String, UniqueConstraint
from sqlalchemy.orm import Mapped, mapped_column

from .base import Base


def _utcnow() -> datetime:
    return datetime.now(timezone.utc)


class StageArtifact(Base):
    """
    Outputs of one pipeline stage, keyed by the stage name and the content
    fingerprint of everything the stage read.
    """

    __tablename__ = "stage_artifacts"
    __table_args__ = (UniqueConstraint("stage", "fingerprint", name="uq_stage_fingerprint"),)

    id: Mapped[int] = mapped_column(Integer, primary_key=True, autoincrement=True)

    stage: Mapped[str] = mapped_column(String(32), nullable=False, index=True)

    # sha256 hex
    fingerprint: Mapped[str] = mapped_column(String(64), nullable=False, index=True)

    # list of output paths, as strings
    outputs: Mapped[list] = mapped_column(JSON, nullable=False, default=list)

    created_at: Mapped[datetime] = mapped_column(
        DateTime(timezone=True),
        nullable=False,
        default=_utcnow,
    )

    def __repr__(self) -> str:
        return (
            f"<StageArtifact id={self.id} stage={self.stage!r} "
            f"fingerprint={self.fingerprint[:12]} outputs={len(self.outputs or [])}>"
        )
