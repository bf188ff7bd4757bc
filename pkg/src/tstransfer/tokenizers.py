"""The three time-series tokenization schemes and their shared normalization.

Every tokenizer consumes a window that has been divided by its own
standard deviation, so token sequences are invariant to rescaling the
raw series. Normalization arithmetic runs in float64 and rounds to
float32 once, which keeps bin indices stable under exact rescaling.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractError, InsufficientHistoryError

DEFAULT_BINS = 4096
DEFAULT_HALF_RANGE = 15.0
DEFAULT_LAGS = (1, 2, 3, 7, 14, 24)
STD_EPS = 1e-6

TOKENIZER_KINDS = ("naive", "lag", "bin")


@dataclass(frozen=True)
class NormalizationStats:
    std: float  # guarded: never below the epsilon floor


@dataclass(frozen=True)
class LagSet:
    lags: tuple[int, ...] = DEFAULT_LAGS

    def __post_init__(self):
        if not self.lags:
            raise ContractError("lag set must be non-empty")
        if any(l <= 0 for l in self.lags) or list(self.lags) != sorted(set(self.lags)):
            raise ContractError(f"lags must be strictly increasing positive ints: {self.lags}")

    @property
    def max_lag(self) -> int:
        return self.lags[-1]


@dataclass(frozen=True)
class BinSpec:
    n_bins: int = DEFAULT_BINS
    half_range: float = DEFAULT_HALF_RANGE

    def __post_init__(self):
        if self.n_bins < 2:
            raise ContractError(f"need at least 2 bins, got {self.n_bins}")
        if not self.half_range > 0:
            raise ContractError(f"half range must be positive, got {self.half_range}")

    @property
    def width(self) -> float:
        return 2.0 * self.half_range / self.n_bins


@dataclass
class TokenSequence:
    kind: str  # "discrete" | "continuous"
    discrete: np.ndarray | None = None  # int64 [T']
    continuous: np.ndarray | None = None  # float32 [T', d_token]
    d_token: int = 0

    def __post_init__(self):
        if self.kind == "discrete":
            assert self.discrete is not None and self.continuous is None
        elif self.kind == "continuous":
            assert self.continuous is not None and self.discrete is None
            assert self.continuous.ndim == 2 and self.continuous.shape[1] == self.d_token
        else:
            raise ContractError(f"unknown token kind {self.kind!r}")

    def __len__(self) -> int:
        arr = self.discrete if self.kind == "discrete" else self.continuous
        return arr.shape[0]


def normalize_window(x, eps: float = STD_EPS) -> tuple[np.ndarray, NormalizationStats]:
    """Divide by the window's population standard deviation (epsilon-guarded).

    No mean-centering: the output is x / max(std(x), eps).
    """
    x64 = np.asarray(x, dtype=np.float64)
    if x64.ndim != 1 or x64.size < 1:
        raise ContractError(f"expected a non-empty 1-d series, got shape {x64.shape}")
    std = float(np.sqrt(np.mean((x64 - x64.mean()) ** 2)))
    std = max(std, eps)
    return (x64 / std).astype(np.float32), NormalizationStats(std=std)


def tokenize_naive(x: np.ndarray) -> TokenSequence:
    """Each observation is its own 1-d token: T' = T."""
    vals = np.asarray(x, dtype=np.float32).reshape(-1, 1)
    return TokenSequence(kind="continuous", continuous=vals, d_token=1)


def tokenize_lag(x: np.ndarray, lags: LagSet) -> TokenSequence:
    """Token at time t is [x_t, x_{t-l_1}, ..., x_{t-l_p}]; T' = T - max lag."""
    vals = np.asarray(x, dtype=np.float32)
    t = vals.shape[0]
    m = lags.max_lag
    if t <= m:
        raise InsufficientHistoryError(f"series length {t} <= max lag {m}")
    cols = [vals[m:]] + [vals[m - l : t - l] for l in lags.lags]
    return TokenSequence(
        kind="continuous",
        continuous=np.stack(cols, axis=1),
        d_token=1 + len(lags.lags),
    )


def bin_indices(values, spec: BinSpec) -> np.ndarray:
    """clamp(floor((v + a) * B / (2a)), 0, B - 1), computed in float64."""
    v = np.asarray(values, dtype=np.float64)
    raw = np.floor((v + spec.half_range) * spec.n_bins / (2.0 * spec.half_range))
    return np.clip(raw, 0, spec.n_bins - 1).astype(np.int64)


def tokenize_bin(x: np.ndarray, spec: BinSpec) -> TokenSequence:
    """Quantize into B linearly spaced bins over [-a, a]; out-of-range clamps."""
    return TokenSequence(kind="discrete", discrete=bin_indices(x, spec), d_token=0)


def bin_centers(indices: np.ndarray, spec: BinSpec) -> np.ndarray:
    """Center of each bin in normalized units (float64)."""
    i = np.asarray(indices)
    if i.size and (i.min() < 0 or i.max() >= spec.n_bins):
        raise ContractError(f"bin index out of range [0, {spec.n_bins})")
    return -spec.half_range + (i + 0.5) * (2.0 * spec.half_range / spec.n_bins)


def detokenize_bin(indices, spec: BinSpec, stats: NormalizationStats) -> np.ndarray:
    """Map bin indices back to values: bin center times the stored std."""
    return (bin_centers(indices, spec) * stats.std).astype(np.float32)
