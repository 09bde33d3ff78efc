from __future__ import annotations

import csv
import logging
import math
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

import numpy as np
from jinja2 import Environment, FileSystemLoader, StrictUndefined
from pydantic import BaseModel, Field, ValidationError, model_validator

from ..errors import DegenerateInputError, InputError, InvariantError

logger = logging.getLogger("gransel.report")

TEMPLATES_DIR = Path(__file__).resolve().parents[1] / "templates"
REPORT_TEMPLATE = "report.md.j2"
KL_TOLERANCE = 1e-12

# fields compared when checking that two runs agree
METRIC_FIELDS = (
    "shard_doc_counts",
    "shard_selected_counts",
    "k_requested",
    "k_achieved",
    "kl_target_selected",
    "kl_target_random",
    "kl_reduction",
    "nsl_adapted_vs_base",
    "vocab_size",
    "vocab_utility",
)


class StrategyStat(BaseModel):
    strategy: str
    vocab_size: int
    granularity_counts: Dict[str, int] = Field(default_factory=dict)
    nsl: float
    seconds: float


class SelectionReport(BaseModel):
    shard_doc_counts: List[int]
    shard_selected_counts: List[int]
    k_requested: int
    k_achieved: int
    kl_target_selected: float
    kl_target_random: float
    kl_reduction: float
    nsl_adapted_vs_base: Optional[float] = None
    vocab_size: int
    vocab_utility: float
    granularity_counts: Dict[str, int] = Field(default_factory=dict)
    raw_documents: int
    task_documents: int
    bad_lines: int = 0
    duplicate_ids: int = 0
    stage_seconds: Dict[str, float] = Field(default_factory=dict)
    cached_stages: List[str] = Field(default_factory=list)
    warnings: List[str] = Field(default_factory=list)
    config: Dict[str, Any] = Field(default_factory=dict)

    @model_validator(mode="after")
    def _kl_consistent(self) -> "SelectionReport":
        expected = self.kl_target_random - self.kl_target_selected
        if abs(self.kl_reduction - expected) > KL_TOLERANCE:
            raise InvariantError(
                f"kl_reduction {self.kl_reduction} != KL(target||random) - KL(target||selected) = {expected}"
            )
        return self

    def metrics(self) -> Dict[str, Any]:
        return {name: getattr(self, name) for name in METRIC_FIELDS}


def save_report(report: SelectionReport, path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(report.model_dump_json(indent=2), encoding="utf-8")


def load_report(path: Path) -> SelectionReport:
    try:
        return SelectionReport.model_validate_json(path.read_text(encoding="utf-8"))
    except OSError as e:
        raise InputError(f"cannot read report {path}: {e}")
    except ValidationError as e:
        raise InputError(f"invalid report {path}: {e}")
    except InvariantError as e:
        raise InputError(f"inconsistent report {path}: {e}")


# =====================================================================
# CORRELATION
# =====================================================================


def pearson(x: Sequence[float], y: Sequence[float]) -> float:
    """
    Sample Pearson correlation, clipped to [-1, 1].
    """
    if len(x) != len(y):
        raise InputError(f"pearson needs equal lengths, got {len(x)} and {len(y)}")
    if len(x) < 2:
        raise DegenerateInputError("degenerate input")
    xa = np.asarray(x, dtype=np.float64)
    ya = np.asarray(y, dtype=np.float64)
    xc = xa - xa.mean()
    yc = ya - ya.mean()
    sxx = float(np.dot(xc, xc))
    syy = float(np.dot(yc, yc))
    if sxx == 0.0 or syy == 0.0:
        raise DegenerateInputError("degenerate input")
    r = float(np.dot(xc, yc)) / math.sqrt(sxx * syy)
    return max(-1.0, min(1.0, r))


def load_scores(path: Path) -> Dict[str, float]:
    """
    CSV with columns `report,score`: external performance numbers per run.
    """
    scores: Dict[str, float] = {}
    try:
        with path.open("r", encoding="utf-8", newline="") as f:
            for row in csv.DictReader(f):
                scores[row["report"].strip()] = float(row["score"])
    except OSError as e:
        raise InputError(f"cannot read scores {path}: {e}")
    except (KeyError, ValueError) as e:
        raise InputError(f"scores file {path} needs numeric columns report,score: {e}")
    return scores


def correlate_reports(reports: Dict[str, SelectionReport], scores: Dict[str, float]) -> float:
    """
    Pearson correlation between each run's kl_reduction and its external score.
    Runs without a score are ignored.
    """
    names = [name for name in reports if name in scores]
    missing = sorted(set(reports) - set(names))
    if missing:
        logger.warning("No score for %d reports: %s", len(missing), ", ".join(missing))
    return pearson([reports[n].kl_reduction for n in names], [scores[n] for n in names])


# =====================================================================
# RENDERING
# =====================================================================


def _environment() -> Environment:
    return Environment(
        loader=FileSystemLoader(str(TEMPLATES_DIR)),
        undefined=StrictUndefined,
        keep_trailing_newline=True,
        trim_blocks=True,
        lstrip_blocks=True,
    )


def render_reports(
    reports: Dict[str, SelectionReport],
    correlation: Optional[float] = None,
    strategies: Optional[Sequence[StrategyStat]] = None,
) -> str:
    template = _environment().get_template(REPORT_TEMPLATE)
    return template.render(
        reports=reports,
        correlation=correlation,
        strategies=list(strategies or []),
    )
