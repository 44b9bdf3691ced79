"""Experiment configuration: loads and validates a TOML, JSON or YAML file.

Relative paths in the file are resolved against the file's directory.
Unknown keys are rejected so typos do not silently fall back to defaults.
If no config exists yet, :func:`create_default` writes a commented starter.
"""

from __future__ import annotations

import json
import tomllib
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any

import yaml

from geotweet.checksum import sha256_text
from geotweet.corpus import SplitConfig
from geotweet.errors import ConfigError
from geotweet.features import (
    BOW_KINDS,
    DEFAULT_MIN_DF,
    FeatureCombination,
    FeatureKind,
    combination_name,
    enumerate_combinations,
    parse_combination,
    singleton_combinations,
)
from geotweet.model import TrainConfig

DEFAULT_L2_GRID: tuple[float, ...] = (0.0, 0.01, 0.1, 1.0)
SELECTION_METRICS = ("micro", "macro", "mse")

_PATH_KEYS = ("train_corpus", "test_corpus", "centroids", "boundaries", "gazetteer", "out")
_TOP_KEYS = frozenset(
    {
        *_PATH_KEYS,
        "seed",
        "threads",
        "split",
        "train",
        "l2_grid",
        "combinations",
        "top_k",
        "selection_metric",
        "features",
        "macro_include_other",
        "fallback_km",
    }
)
_SPLIT_KEYS = frozenset(SplitConfig.__dataclass_fields__)
_TRAIN_KEYS = frozenset(TrainConfig.__dataclass_fields__)
_FEATURE_KEYS = frozenset({"binary", "missing_indicator", "min_df"})


def _path_str(p: Path | None) -> str | None:
    return None if p is None else str(p)


def _by_value(item: tuple[FeatureKind, int]) -> str:
    return item[0].value


@dataclass(frozen=True)
class FeatureOptions:
    """Vectorization switches shared by every combination of a sweep."""

    binary: bool = True
    missing_indicator: bool = False
    min_df: dict[FeatureKind, int] = field(default_factory=lambda: dict(DEFAULT_MIN_DF))

    def to_dict(self) -> dict[str, Any]:
        return {
            "binary": self.binary,
            "missing_indicator": self.missing_indicator,
            "min_df": {k.value: n for k, n in sorted(self.min_df.items(), key=_by_value)},
        }


@dataclass
class ExperimentConfig:
    """Everything one label/split/train/sweep invocation needs."""

    train_corpus: Path | None = None
    test_corpus: Path | None = None
    centroids: Path | None = None
    boundaries: Path | None = None
    gazetteer: Path | None = None
    out: Path = Path("geotweet-out")
    threads: int = 1
    split: SplitConfig = field(default_factory=SplitConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    l2_grid: tuple[float, ...] = DEFAULT_L2_GRID
    combinations: list[FeatureCombination] = field(default_factory=enumerate_combinations)
    top_k: int | None = None
    selection_metric: str = "macro"
    features: FeatureOptions = field(default_factory=FeatureOptions)
    macro_include_other: bool = False
    fallback_km: float = 100.0
    sha256: str = ""  # checksum of the raw config file

    def validate(self) -> None:
        self.split.validate()
        self.train.validate()
        if self.top_k is not None and self.top_k < 2:
            raise ConfigError(
                f"top_k must be >= 2, got {self.top_k}", "Omit top_k to keep all countries."
            )
        if not self.combinations:
            raise ConfigError(
                "no feature combination selected", 'Use "all", "singletons" or a list.'
            )
        if self.selection_metric not in SELECTION_METRICS:
            raise ConfigError(
                f"selection_metric '{self.selection_metric}' is unknown",
                f"Use one of {', '.join(SELECTION_METRICS)}.",
            )
        if not self.l2_grid or any(not v >= 0 for v in self.l2_grid):
            raise ConfigError(f"l2_grid {list(self.l2_grid)} is empty or negative")
        if self.threads < 1:
            raise ConfigError(f"threads must be >= 1, got {self.threads}")
        if self.fallback_km < 0:
            raise ConfigError(f"fallback_km must be >= 0, got {self.fallback_km}")
        if any(v < 1 for v in self.features.min_df.values()):
            raise ConfigError(f"min_df values must be >= 1, got {self.features.to_dict()}")

    def with_overrides(
        self,
        *,
        seed: int | None = None,
        threads: int | None = None,
        out: Path | None = None,
    ) -> ExperimentConfig:
        """Apply command-line overrides; a seed replaces both split and train seeds."""
        cfg = self
        if seed is not None:
            cfg = replace(
                cfg, split=replace(cfg.split, seed=seed), train=replace(cfg.train, seed=seed)
            )
        if threads is not None:
            cfg = replace(cfg, threads=threads)
        if out is not None:
            cfg = replace(cfg, out=out)
        return cfg

    def require(self, *names: str) -> None:
        """Raise ConfigError unless every named path is set."""
        for name in names:
            if getattr(self, name) is None:
                raise ConfigError(f"'{name}' is not set", f"Add {name}: <path> to the config.")

    def to_dict(self) -> dict[str, Any]:
        """JSON-ready echo, recorded in manifests and run records."""
        return {
            **{k: _path_str(getattr(self, k)) for k in _PATH_KEYS},
            "threads": self.threads,
            "split": self.split.to_dict(),
            "train": self.train.to_dict(),
            "l2_grid": list(self.l2_grid),
            "combinations": [combination_name(c) for c in self.combinations],
            "top_k": self.top_k,
            "selection_metric": self.selection_metric,
            "features": self.features.to_dict(),
            "macro_include_other": self.macro_include_other,
            "fallback_km": self.fallback_km,
        }


_DEFAULT_CONFIG = """\
# geotweet experiment configuration
# Relative paths are resolved against this file's directory.

train_corpus: data/tc2014.labeled.jsonl
# Later-era corpus; each run's model is also evaluated on all of it.
# test_corpus: data/tc2015.labeled.jsonl

centroids: data/centroids.csv      # iso2,lat,lon
boundaries: data/countries.geojson # features carry property iso2
# gazetteer: data/gazetteer.tsv    # name, alternates, iso2, population

out: runs/sweep
threads: 4

split:
  runs: 10
  train_frac: 0.5
  dev_frac: 0.25
  test_frac: 0.25
  seed: 0

train:
  max_epochs: 50
  tol: 1.0e-4
  learning_rate: 0.1
  class_weighting: true

# Candidate L2 strengths; the best on dev (selection_metric) is kept.
l2_grid: [0.0, 0.01, 0.1, 1.0]
selection_metric: macro

# "all" (255 combinations), "singletons" (8) or a list such as
# ["content-tz", "uloc", "content-name-uloc"].
combinations: all

# Keep only the k most frequent training countries; other test tweets get OTHER.
# top_k: 25
# macro_include_other: true

features:
  binary: true
  missing_indicator: false
  min_df: {content: 2, description: 2, name: 1, uloc: 1}
"""


def create_default(path: Path) -> Path:
    """Write a starter config if *path* does not exist. Returns the path."""
    if not path.exists():
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(_DEFAULT_CONFIG, encoding="utf-8")
    return path


def _parse_text(raw: str, path: Path) -> dict[str, Any]:
    suffix = path.suffix.lower()
    try:
        if suffix == ".toml":
            data: Any = tomllib.loads(raw)
        elif suffix == ".json":
            data = json.loads(raw)
        elif suffix in (".yaml", ".yml"):
            data = yaml.safe_load(raw) or {}
        else:
            raise ConfigError(
                f"unsupported config format '{suffix or path.name}'",
                "Use a .toml, .json, .yaml or .yml file.",
            )
    except (tomllib.TOMLDecodeError, json.JSONDecodeError, yaml.YAMLError) as e:
        raise ConfigError(f"invalid {suffix[1:].upper()} in {path}: {e}") from e
    if not isinstance(data, dict):
        raise ConfigError(f"expected a mapping in {path}, got {type(data).__name__}")
    return data


def _check_keys(section: str, data: dict[str, Any], allowed: frozenset[str]) -> None:
    unknown = sorted(set(data) - allowed)
    if unknown:
        raise ConfigError(
            f"unknown key(s) in {section}: {', '.join(unknown)}",
            f"Allowed: {', '.join(sorted(allowed))}.",
        )


def _section(data: dict[str, Any], key: str, allowed: frozenset[str]) -> dict[str, Any]:
    value = data.get(key) or {}
    if not isinstance(value, dict):
        raise ConfigError(f"'{key}' must be a mapping, got {type(value).__name__}")
    _check_keys(f"'{key}'", value, allowed)
    return value


def parse_combinations(value: Any) -> list[FeatureCombination]:
    """``"all"``, ``"singletons"`` or a list of names like ``"content-tz"``."""
    if value is None or value == "all":
        return enumerate_combinations()
    if value == "singletons":
        return singleton_combinations()
    if isinstance(value, str):
        value = [value]
    if not isinstance(value, list):
        raise ConfigError(f"combinations must be a string or list, got {type(value).__name__}")
    combos: list[FeatureCombination] = []
    for item in value:
        try:
            combo = parse_combination(str(item))
        except Exception as e:
            raise ConfigError(f"bad combination '{item}': {e}") from e
        if combo not in combos:
            combos.append(combo)
    return combos


def _parse_features(raw: dict[str, Any]) -> FeatureOptions:
    min_df = dict(DEFAULT_MIN_DF)
    for name, count in (raw.get("min_df") or {}).items():
        try:
            kind = FeatureKind(str(name))
        except ValueError:
            raise ConfigError(f"min_df names unknown feature '{name}'") from None
        if kind not in BOW_KINDS:
            raise ConfigError(f"min_df applies to bag-of-words features only, not '{name}'")
        min_df[kind] = int(count)
    return FeatureOptions(
        binary=bool(raw.get("binary", True)),
        missing_indicator=bool(raw.get("missing_indicator", False)),
        min_df=min_df,
    )


def config_from_dict(data: dict[str, Any], base_dir: Path | None = None) -> ExperimentConfig:
    """Build and validate an ExperimentConfig from a parsed mapping."""
    _check_keys("the config", data, _TOP_KEYS)

    def resolve(key: str) -> Path | None:
        value = data.get(key)
        if value in (None, ""):
            return None
        p = Path(str(value)).expanduser()
        return p if p.is_absolute() or base_dir is None else base_dir / p

    split_raw = _section(data, "split", _SPLIT_KEYS)
    train_raw = _section(data, "train", _TRAIN_KEYS)
    try:
        split = SplitConfig(**split_raw)
        train = TrainConfig(**train_raw)
    except TypeError as e:
        raise ConfigError(str(e)) from e

    cfg = ExperimentConfig(
        train_corpus=resolve("train_corpus"),
        test_corpus=resolve("test_corpus"),
        centroids=resolve("centroids"),
        boundaries=resolve("boundaries"),
        gazetteer=resolve("gazetteer"),
        out=resolve("out") or Path("geotweet-out"),
        threads=int(data.get("threads", 1)),
        split=split,
        train=train,
        l2_grid=tuple(float(v) for v in data.get("l2_grid", DEFAULT_L2_GRID)),
        combinations=parse_combinations(data.get("combinations", "all")),
        top_k=None if data.get("top_k") is None else int(data["top_k"]),
        selection_metric=str(data.get("selection_metric", "macro")),
        features=_parse_features(_section(data, "features", _FEATURE_KEYS)),
        macro_include_other=bool(data.get("macro_include_other", False)),
        fallback_km=float(data.get("fallback_km", 100.0)),
    )
    if data.get("seed") is not None:
        cfg = cfg.with_overrides(seed=int(data["seed"]))
    cfg.validate()
    return cfg


def load_config(path: Path) -> ExperimentConfig:
    """Load and validate a config file; records its SHA256."""
    try:
        raw = path.read_text(encoding="utf-8")
    except OSError as e:
        raise ConfigError(f"cannot read {path}: {e.strerror or e}") from e
    cfg = config_from_dict(_parse_text(raw, path), base_dir=path.parent)
    cfg.sha256 = sha256_text(raw)
    return cfg
