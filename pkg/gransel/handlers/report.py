from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path
from typing import Dict, List, Optional

from pydantic import TypeAdapter, ValidationError

from ..config import AppConfig
from ..errors import ConfigError, InputError
from ..services.report import SelectionReport, StrategyStat, correlate_reports, load_report, load_scores, render_reports

logger = logging.getLogger("gransel.handlers.report")


def run_name(path: Path) -> str:
    """
    A run is named after the directory holding its report.json.
    """
    return path.parent.name if path.name == "report.json" else path.stem


def _load_strategies(path: Path) -> List[StrategyStat]:
    try:
        return TypeAdapter(List[StrategyStat]).validate_json(path.read_text(encoding="utf-8"))
    except OSError as e:
        raise InputError(f"cannot read strategies {path}: {e}")
    except ValidationError as e:
        raise InputError(f"invalid strategies file {path}: {e}")


async def handle_report(args: argparse.Namespace, app: AppConfig) -> int:
    reports: Dict[str, SelectionReport] = {}
    for path in args.reports:
        name = run_name(path)
        if name in reports:
            raise ConfigError(f"two reports are named {name!r}; keep each run in its own directory")
        reports[name] = load_report(path)

    correlation: Optional[float] = None
    if args.scores:
        correlation = correlate_reports(reports, load_scores(args.scores))
        logger.info("Pearson r(kl_reduction, score) = %.4f", correlation)

    strategies = _load_strategies(args.strategies) if args.strategies else None
    text = render_reports(reports, correlation, strategies)
    if args.out:
        args.out.write_text(text, encoding="utf-8")
        logger.info("Wrote report to %s", args.out)
    else:
        sys.stdout.write(text)
    return 0


def register(subparsers: argparse._SubParsersAction) -> None:
    p = subparsers.add_parser("report", help="render run reports and correlate them with external scores")
    p.add_argument("reports", type=Path, nargs="+", help="report.json files")
    p.add_argument("--scores", type=Path, help="CSV with columns report,score")
    p.add_argument("--strategies", type=Path, help="strategies.json from compare-strategies")
    p.add_argument("--out", type=Path, help="Markdown output (default: stdout)")
    p.set_defaults(handler=handle_report)
