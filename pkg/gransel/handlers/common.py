from __future__ import annotations

from typing import Any, Dict, List, Optional, Tuple, Union

from ..config import MAX_SEED
from ..errors import ConfigError


def parse_mix(raw: Optional[str]) -> Union[None, str, List[float]]:
    """
    --mix accepts a preset name or three comma-separated shares.
    """
    if not raw:
        return None
    if "," not in raw:
        return raw
    try:
        return [float(x) for x in raw.split(",")]
    except ValueError:
        raise ConfigError(f"--mix must be a preset name or three numbers, got {raw!r}")


def parse_orders(raw: Optional[str]) -> Optional[Tuple[int, ...]]:
    if raw is None:
        return None
    try:
        return tuple(int(x) for x in raw.split(","))
    except ValueError:
        raise ConfigError(f"--ngram-orders must be comma-separated integers, got {raw!r}")


def check_seed(seed: int) -> int:
    if not 0 <= seed <= MAX_SEED:
        raise ConfigError(f"seed must be a 64-bit unsigned integer, got {seed}")
    return seed


def strategy_value(kind: Optional[str], mix: Optional[str]) -> Optional[Dict[str, Any]]:
    if kind is None and mix is None:
        return None
    value: Dict[str, Any] = {"kind": kind or "multi_granular"}
    parsed = parse_mix(mix)
    if parsed is not None:
        value["mix"] = parsed
    return value
