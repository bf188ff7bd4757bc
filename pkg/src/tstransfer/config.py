"""Experiment configuration: JSON in, validated dataclasses out.

Unknown keys are rejected everywhere so stale configs fail loudly.
Command-line flags override file values, which override defaults.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

from .data import SyntheticSpec
from .errors import ConfigError, ContractError
from .finetune import TrainConfig
from .model import ModelConfig, TIERS, tier_config
from .pretrain import PretrainConfig, SpanCorruptionConfig
from .tokenizers import (
    DEFAULT_BINS,
    DEFAULT_HALF_RANGE,
    DEFAULT_LAGS,
    BinSpec,
    LagSet,
    TOKENIZER_KINDS,
)

REGIMES = ("random", "language", "instruct")


@dataclass(frozen=True)
class TokenizerConfig:
    kind: str = "bin"
    n_bins: int = DEFAULT_BINS
    half_range: float = DEFAULT_HALF_RANGE
    lags: tuple[int, ...] = DEFAULT_LAGS

    def __post_init__(self):
        if self.kind not in TOKENIZER_KINDS:
            raise ConfigError(f"tokenizer.kind must be one of {TOKENIZER_KINDS}, got {self.kind!r}")

    def bin_spec(self) -> BinSpec:
        return BinSpec(n_bins=self.n_bins, half_range=self.half_range)

    def lag_set(self) -> LagSet | None:
        return LagSet(lags=tuple(self.lags)) if self.kind == "lag" else None


@dataclass(frozen=True)
class DataConfig:
    synthetic: SyntheticSpec = field(default_factory=SyntheticSpec)
    csv_paths: tuple[str, ...] = ()
    val_fraction: float = 0.2
    data_seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.val_fraction < 1.0:
            raise ConfigError(f"data.val_fraction must be in (0, 1), got {self.val_fraction}")


@dataclass(frozen=True)
class CorpusConfig:
    path: str = ""  # empty: generate deterministically instead of reading
    size_bytes: int = 1_000_000
    seed: int = 0


@dataclass(frozen=True)
class PretrainSection:
    steps: int = 2000
    instruct_steps: int = 500
    lr: float = 5e-4
    batch_size: int = 16
    weight_decay: float = 0.0
    warmup_fraction: float = 0.01
    chunk_len: int = 128
    log_interval_steps: int = 50
    corruption_rate: float = 0.15
    mean_span: float = 3.0
    n_sentinels: int = 32

    def pretrain_config(self) -> PretrainConfig:
        return PretrainConfig(
            lr=self.lr,
            batch_size=self.batch_size,
            weight_decay=self.weight_decay,
            warmup_fraction=self.warmup_fraction,
            chunk_len=self.chunk_len,
            log_interval_steps=self.log_interval_steps,
            corruption=SpanCorruptionConfig(
                rate=self.corruption_rate,
                mean_span=self.mean_span,
                n_sentinels=self.n_sentinels,
            ),
        )


@dataclass(frozen=True)
class SweepSection:
    lrs: tuple[float, ...] = (1e-4, 5e-4, 1e-3)
    batch_sizes: tuple[int, ...] = (64, 128)
    weight_decays: tuple[float, ...] = (0.0, 0.01, 0.1)
    warmup_fractions: tuple[float, ...] = (0.0, 0.005, 0.01, 0.02)


@dataclass(frozen=True)
class ExperimentConfig:
    tier: str = "tiny"
    vocab_size: int = 4160
    regime: str = "random"
    checkpoint: str = ""
    out_dir: str = "runs"
    tokenizer: TokenizerConfig = field(default_factory=TokenizerConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    pretrain: PretrainSection = field(default_factory=PretrainSection)
    data: DataConfig = field(default_factory=DataConfig)
    corpus: CorpusConfig = field(default_factory=CorpusConfig)
    sweep: SweepSection = field(default_factory=SweepSection)

    def __post_init__(self):
        if self.tier not in TIERS:
            raise ConfigError(f"tier must be one of {sorted(TIERS)}, got {self.tier!r}")
        if self.regime not in REGIMES:
            raise ConfigError(f"regime must be one of {REGIMES}, got {self.regime!r}")
        if self.vocab_size < self.tokenizer.n_bins + 1:
            raise ConfigError(
                f"vocab_size {self.vocab_size} < n_bins {self.tokenizer.n_bins} + specials"
            )

    def model_config(self) -> ModelConfig:
        return tier_config(self.tier, vocab_size=self.vocab_size)

    def run_id(self) -> str:
        return f"{self.tier}_{self.tokenizer.kind}_{self.regime}_s{self.train.seed}"


def parse_run_id(run_id: str) -> dict:
    """Invert the <tier>_<tokenizer>_<regime>_s<seed> naming scheme."""
    parts = run_id.split("_")
    if len(parts) != 4 or not parts[3].startswith("s"):
        raise ContractError(f"run id {run_id!r} does not match tier_tokenizer_regime_sN")
    return {
        "tier": parts[0],
        "tokenizer": parts[1],
        "regime": parts[2],
        "seed": int(parts[3][1:]),
    }


# ---------------------------------------------------------------------------
# strict dict -> dataclass conversion

_PAIR_FIELDS = {"trend_range", "period_range", "amplitude_range"}
_TUPLE_FIELDS = {"lags", "csv_paths", "lrs", "batch_sizes", "weight_decays", "warmup_fractions"}


def _build(cls, value, path: str):
    if dataclasses.is_dataclass(cls) and isinstance(value, dict):
        names = {f.name: f for f in dataclasses.fields(cls)}
        unknown = sorted(set(value) - set(names))
        if unknown:
            raise ConfigError(f"{path}: unknown keys {unknown}")
        kwargs = {}
        for key, raw in value.items():
            sub = _nested_type(cls, key)
            if sub is not None:
                kwargs[key] = _build(sub, raw, f"{path}.{key}")
            elif key in _PAIR_FIELDS:
                if not (isinstance(raw, (list, tuple)) and len(raw) == 2):
                    raise ConfigError(f"{path}.{key}: expected [low, high]")
                kwargs[key] = (float(raw[0]), float(raw[1]))
            elif key in _TUPLE_FIELDS:
                if not isinstance(raw, (list, tuple)):
                    raise ConfigError(f"{path}.{key}: expected a list")
                kwargs[key] = tuple(raw)
            else:
                kwargs[key] = raw
        try:
            return cls(**kwargs)
        except (TypeError, ContractError, ConfigError) as exc:
            raise ConfigError(f"{path}: {exc}") from None
    raise ConfigError(f"{path}: expected an object for {cls.__name__}")


_NESTED = {
    (ExperimentConfig, "tokenizer"): TokenizerConfig,
    (ExperimentConfig, "train"): TrainConfig,
    (ExperimentConfig, "pretrain"): PretrainSection,
    (ExperimentConfig, "data"): DataConfig,
    (ExperimentConfig, "corpus"): CorpusConfig,
    (ExperimentConfig, "sweep"): SweepSection,
    (DataConfig, "synthetic"): SyntheticSpec,
}


def _nested_type(cls, key):
    return _NESTED.get((cls, key))


def config_from_dict(d: dict) -> ExperimentConfig:
    if not isinstance(d, dict):
        raise ConfigError("config root must be a JSON object")
    return _build(ExperimentConfig, d, "config")


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        raw = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON: {exc}") from None
    return config_from_dict(raw)


def resolved_dict(cfg: ExperimentConfig) -> dict:
    return dataclasses.asdict(cfg)


def config_digest(cfg: ExperimentConfig) -> str:
    blob = json.dumps(resolved_dict(cfg), sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()[:16]
