from pathlib import Path

import pytest

from gransel.config import (
    AppConfig,
    build_pipeline_config,
    load_config,
    load_pipeline_config,
    parse_strategy,
)
from gransel.errors import ConfigError
from gransel.services.vocab import MergeKind, MergeStrategy

REQUIRED = {
    "raw_corpus": ["raw.jsonl"],
    "task_corpus": "task.jsonl",
    "base_vocab": "base.json",
    "k": 10,
    "output_dir": "out",
}


def test_toml_config(tmp_path):
    path = tmp_path / "run.toml"
    path.write_text(
        'raw_corpus = ["a.jsonl", "b.jsonl"]\n'
        'task_corpus = "task.jsonl"\n'
        'base_vocab = "base.json"\n'
        "k = 100\n"
        'output_dir = "out"\n'
        "ngram_orders = [1, 2, 3]\n"
        "[strategy]\n"
        'kind = "multi_granular"\n'
        'mix = "subword-multiword"\n',
        encoding="utf-8",
    )
    cfg = load_pipeline_config(path)
    assert cfg.raw_corpus == [Path("a.jsonl"), Path("b.jsonl")]
    assert cfg.k == 100
    assert cfg.ngram_orders == (1, 2, 3)
    assert cfg.strategy == MergeStrategy(MergeKind.MULTI_GRANULAR, (0.6, 0.1, 0.3))
    assert cfg.num_buckets == 10_000 and cfg.alpha == 0.01 and cfg.num_shards == 16


def test_json_config_with_overrides(tmp_path):
    path = tmp_path / "run.json"
    path.write_text('{"raw_corpus": "raw.jsonl", "task_corpus": "t", "base_vocab": "b", "k": 5, "output_dir": "o"}')
    cfg = load_pipeline_config(path, overrides={"k": 7, "seed": None}, app=AppConfig(workers=3))
    assert cfg.k == 7
    assert cfg.seed == 0
    assert cfg.workers == 3
    assert cfg.raw_corpus == [Path("raw.jsonl")]


def test_flags_without_file():
    cfg = load_pipeline_config(None, overrides={**REQUIRED, "workers": 2}, app=AppConfig(workers=8))
    assert cfg.workers == 2


def test_unknown_and_missing_keys():
    with pytest.raises(ConfigError, match="unknown config keys: bogus"):
        build_pipeline_config({**REQUIRED, "bogus": 1})
    with pytest.raises(ConfigError, match="missing required config keys: k"):
        build_pipeline_config({key: v for key, v in REQUIRED.items() if key != "k"})


@pytest.mark.parametrize(
    "changes",
    [
        {"k": 0},
        {"seed": -1},
        {"seed": 2**64},
        {"alpha": 0.0},
        {"num_buckets": 1},
        {"num_shards": 0},
        {"selection_mode": "everywhere"},
        {"feature_tokenizer": "bytes"},
        {"ngram_orders": []},
        {"strategy": "nonsense"},
        {"strategy": {"kind": "merge", "mix": "default"}},
        {"strategy": {"kind": "multi_granular", "mix": "unknown-preset"}},
        {"strategy": {"kind": "multi_granular", "mix": [0.5, 0.5, 0.5]}},
        {"raw_corpus": []},
    ],
)
def test_invalid_values(changes):
    with pytest.raises(ConfigError):
        build_pipeline_config({**REQUIRED, **changes})


def test_seed_bounds_are_inclusive():
    assert build_pipeline_config({**REQUIRED, "seed": 2**64 - 1}).seed == 2**64 - 1


def test_parse_strategy_forms():
    assert parse_strategy("target-only").kind is MergeKind.TARGET_ONLY
    assert parse_strategy("MERGE_UNION").kind is MergeKind.MERGE_UNION
    assert parse_strategy({"mix": "default"}).mix == (0.6, 0.3, 0.1)
    assert parse_strategy({"kind": "multi_granular", "mix": [0.2, 0.3, 0.5]}).mix == (0.2, 0.3, 0.5)
    with pytest.raises(ConfigError):
        parse_strategy(3)


def test_config_file_errors(tmp_path):
    with pytest.raises(ConfigError, match="cannot read config"):
        load_pipeline_config(tmp_path / "missing.toml")
    bad = tmp_path / "bad.toml"
    bad.write_text("k = [", encoding="utf-8")
    with pytest.raises(ConfigError, match="cannot parse config"):
        load_pipeline_config(bad)
    other = tmp_path / "run.yaml"
    other.write_text("k: 1", encoding="utf-8")
    with pytest.raises(ConfigError, match=".toml or .json"):
        load_pipeline_config(other)


def test_echo():
    cfg = build_pipeline_config(REQUIRED)
    echo = cfg.echo()
    assert echo["raw_corpus"] == ["raw.jsonl"]
    assert echo["strategy"] == {"kind": "multi_granular", "mix": None}
    assert echo["ngram_orders"] == [1, 2]


def test_environment(monkeypatch):
    monkeypatch.setenv("GRANSEL_LOG_LEVEL", "debug")
    monkeypatch.setenv("GRANSEL_WORKERS", "4")
    monkeypatch.setenv("GRANSEL_PROGRESS", "yes")
    monkeypatch.delenv("GRANSEL_CACHE_URL", raising=False)
    app = load_config()
    assert app == AppConfig(log_level="DEBUG", workers=4, cache_url=None, progress=True)

    monkeypatch.setenv("GRANSEL_WORKERS", "many")
    with pytest.raises(ConfigError):
        load_config()
