from __future__ import annotations

import json
import os
try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Tuple

from dotenv import load_dotenv

from .errors import ConfigError, InputError
from .services.features import FeatureConfig
from .services.vocab import MergeKind, MergeStrategy

# Load variables from .env
load_dotenv()

SELECTION_MODES = ("per_shard", "global")
FEATURE_TOKENIZERS = ("adapted", "words")
MAX_SEED = 2**64 - 1


@dataclass
class AppConfig:
    log_level: str = "INFO"
    workers: int = 1
    cache_url: Optional[str] = None
    progress: bool = False


@dataclass
class PipelineConfig:
    raw_corpus: List[Path]
    task_corpus: Path
    base_vocab: Path
    k: int
    output_dir: Path
    strategy: MergeStrategy = field(default_factory=MergeStrategy)
    target_vocab_size: int = 10_000
    prune_steps: int = 10
    num_buckets: int = 10_000
    ngram_orders: Tuple[int, ...] = (1, 2)
    alpha: float = 0.01
    num_shards: int = 16
    seed: int = 0

    # task vocabulary mining
    task_max_words: int = 5_000
    task_max_multiwords: int = 5_000
    min_multiword_count: int = 5

    selection_mode: str = "per_shard"
    feature_tokenizer: str = "adapted"
    workers: int = 1
    emit_docs: bool = False
    strict: bool = False
    cache: bool = True

    @property
    def features(self) -> FeatureConfig:
        return FeatureConfig(num_buckets=self.num_buckets, ngram_orders=tuple(self.ngram_orders))

    def validate(self) -> "PipelineConfig":
        if not self.raw_corpus:
            raise ConfigError("raw_corpus must list at least one file")
        if self.k < 1:
            raise ConfigError(f"k must be >= 1, got {self.k}")
        if self.num_shards < 1:
            raise ConfigError(f"num_shards must be >= 1, got {self.num_shards}")
        if self.target_vocab_size < 1:
            raise ConfigError(f"target_vocab_size must be >= 1, got {self.target_vocab_size}")
        if self.prune_steps < 1:
            raise ConfigError(f"prune_steps must be >= 1, got {self.prune_steps}")
        if self.alpha <= 0:
            raise ConfigError(f"alpha must be > 0, got {self.alpha}")
        if not 0 <= self.seed <= MAX_SEED:
            raise ConfigError(f"seed must be a 64-bit unsigned integer, got {self.seed}")
        if self.workers < 1:
            raise ConfigError(f"workers must be >= 1, got {self.workers}")
        if self.task_max_words < 0 or self.task_max_multiwords < 0:
            raise ConfigError("task_max_words and task_max_multiwords must be >= 0")
        if self.min_multiword_count < 1:
            raise ConfigError("min_multiword_count must be >= 1")
        if self.selection_mode not in SELECTION_MODES:
            raise ConfigError(f"selection_mode must be one of {SELECTION_MODES}")
        if self.feature_tokenizer not in FEATURE_TOKENIZERS:
            raise ConfigError(f"feature_tokenizer must be one of {FEATURE_TOKENIZERS}")
        # FeatureConfig raises ConfigError on its own invariants
        self.features
        return self

    def check_inputs(self) -> None:
        """
        Fail fast on unreadable inputs, before any compute starts.
        """
        for path in [*self.raw_corpus, self.task_corpus, self.base_vocab]:
            if not path.is_file():
                raise InputError(f"input file not found: {path}")
            if not os.access(path, os.R_OK):
                raise InputError(f"input file not readable: {path}")

    def echo(self) -> Dict[str, Any]:
        """
        JSON-friendly copy of the config for the report.
        """
        out: Dict[str, Any] = {}
        for f in fields(self):
            value = getattr(self, f.name)
            if isinstance(value, Path):
                value = str(value)
            elif isinstance(value, list):
                value = [str(v) for v in value]
            elif isinstance(value, tuple):
                value = list(value)
            elif isinstance(value, MergeStrategy):
                value = value.to_dict()
            out[f.name] = value
        return out


def _env_bool(name: str, default: bool) -> bool:
    raw = os.getenv(name)
    if raw is None:
        return default
    return raw.strip().lower() in ("1", "true", "yes", "on")


def load_config() -> AppConfig:
    try:
        workers = int(os.getenv("GRANSEL_WORKERS", "1"))
    except ValueError:
        raise ConfigError("GRANSEL_WORKERS must be an integer")

    return AppConfig(
        log_level=os.getenv("GRANSEL_LOG_LEVEL", "INFO").upper(),
        workers=workers,
        cache_url=os.getenv("GRANSEL_CACHE_URL") or None,
        progress=_env_bool("GRANSEL_PROGRESS", False),
    )


def _read_config_file(path: Path) -> Dict[str, Any]:
    try:
        if path.suffix == ".toml":
            with path.open("rb") as f:
                return tomllib.load(f)
        if path.suffix == ".json":
            with path.open("r", encoding="utf-8") as f:
                return json.load(f)
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e}")
    except (tomllib.TOMLDecodeError, json.JSONDecodeError) as e:
        raise ConfigError(f"cannot parse config {path}: {e}")
    raise ConfigError(f"config must be .toml or .json, got {path.name}")


def parse_strategy(raw: Any) -> MergeStrategy:
    if isinstance(raw, MergeStrategy):
        return raw
    if isinstance(raw, str):
        raw = {"kind": raw}
    if not isinstance(raw, Mapping):
        raise ConfigError(f"strategy must be a name or a table, got {raw!r}")
    try:
        kind = MergeKind.parse(str(raw.get("kind", MergeKind.MULTI_GRANULAR.value)))
    except ValueError as e:
        raise ConfigError(str(e))
    mix = raw.get("mix")
    try:
        if isinstance(mix, str):
            mix = MergeStrategy.preset(mix)
        return MergeStrategy(kind=kind, mix=tuple(mix) if mix is not None else None)
    except ValueError as e:
        raise ConfigError(str(e))


def build_pipeline_config(values: Mapping[str, Any]) -> PipelineConfig:
    known = {f.name for f in fields(PipelineConfig)}
    unknown = sorted(set(values) - known)
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")

    data = dict(values)
    missing = [name for name in ("raw_corpus", "task_corpus", "base_vocab", "k", "output_dir") if data.get(name) is None]
    if missing:
        raise ConfigError(f"missing required config keys: {', '.join(missing)}")

    raw = data["raw_corpus"]
    if isinstance(raw, (str, Path)):
        raw = [raw]
    data["raw_corpus"] = [Path(p) for p in raw]
    for name in ("task_corpus", "base_vocab", "output_dir"):
        data[name] = Path(data[name])
    if "strategy" in data:
        data["strategy"] = parse_strategy(data["strategy"])
    if "ngram_orders" in data:
        data["ngram_orders"] = tuple(int(n) for n in data["ngram_orders"])

    try:
        cfg = PipelineConfig(**data)
    except TypeError as e:
        raise ConfigError(f"invalid config: {e}")
    return cfg.validate()


def load_pipeline_config(
    path: Optional[Path] = None,
    overrides: Optional[Mapping[str, Any]] = None,
    app: Optional[AppConfig] = None,
) -> PipelineConfig:
    """
    File values first, then flag overrides (None means "not given").
    The environment only contributes `workers` when neither file nor flags set it.
    """
    values: Dict[str, Any] = _read_config_file(path) if path is not None else {}
    for key, value in (overrides or {}).items():
        if value is not None:
            values[key] = value
    if "workers" not in values and app is not None:
        values["workers"] = app.workers
    return build_pipeline_config(values)
