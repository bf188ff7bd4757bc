"""Deterministic synthetic data: time series, text corpus, CSV ingestion.

Each synthetic series is trend + a sum of random-period sinusoids + AR(1)
noise. Validation data is held out at the series level so training and
validation windows can never overlap.
"""

from __future__ import annotations

import csv
import logging
import string
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ContractError

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class SyntheticSpec:
    n_series: int = 64
    length: int = 640
    trend_range: tuple[float, float] = (-0.02, 0.02)
    n_sinusoids: int = 3
    period_range: tuple[float, float] = (8.0, 96.0)
    amplitude_range: tuple[float, float] = (0.5, 2.0)
    ar_coeff: float = 0.6
    noise_scale: float = 0.25
    seed: int = 0

    def __post_init__(self):
        if self.n_series < 1 or self.length < 2:
            raise ContractError("need at least one series of length >= 2")
        for lo, hi in (self.trend_range, self.period_range, self.amplitude_range):
            if hi < lo:
                raise ContractError(f"range ({lo}, {hi}) is reversed")
        if not 0 <= abs(self.ar_coeff) < 1:
            raise ContractError(f"AR(1) coefficient must satisfy |c| < 1, got {self.ar_coeff}")


def generate_series(spec: SyntheticSpec) -> list[np.ndarray]:
    """Deterministic in spec (including spec.seed); float32 output."""
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(spec.seed)))
    t = np.arange(spec.length, dtype=np.float64)
    out = []
    for _ in range(spec.n_series):
        x = rng.uniform(*spec.trend_range) * t
        for _ in range(spec.n_sinusoids):
            period = rng.uniform(*spec.period_range)
            amp = rng.uniform(*spec.amplitude_range)
            phase = rng.uniform(0.0, 2.0 * np.pi)
            x = x + amp * np.sin(2.0 * np.pi * t / period + phase)
        if spec.noise_scale > 0:
            eps = rng.normal(0.0, spec.noise_scale, size=spec.length)
            noise = np.empty(spec.length, dtype=np.float64)
            acc = 0.0
            for i in range(spec.length):
                acc = spec.ar_coeff * acc + eps[i]
                noise[i] = acc
            x = x + noise
        out.append(x.astype(np.float32))
    return out


def split_series(series: list[np.ndarray], val_fraction: float = 0.2) -> tuple[list, list]:
    """Hold out the trailing fraction of series (at least one) for validation."""
    if len(series) < 2:
        raise ContractError("need at least 2 series to split train/validation")
    n_val = max(1, int(round(len(series) * val_fraction)))
    n_val = min(n_val, len(series) - 1)
    return series[:-n_val], series[-n_val:]


# ---------------------------------------------------------------------------
# CSV schema: header "timestamp,value", one univariate series per file


def write_series_csv(series: np.ndarray, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["timestamp", "value"])
        for i, v in enumerate(np.asarray(series)):
            w.writerow([i, f"{float(v):.9g}"])


def load_csv(paths) -> tuple[list[np.ndarray], list[str]]:
    """Load series files; returns (series, warnings). Malformed rows raise."""
    series: list[np.ndarray] = []
    warnings: list[str] = []
    for path in paths:
        path = Path(path)
        values: list[float] = []
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if header is None or [h.strip() for h in header] != ["timestamp", "value"]:
                raise ContractError(f"{path}: expected header 'timestamp,value', got {header}")
            for lineno, row in enumerate(reader, start=2):
                if len(row) != 2:
                    raise ContractError(f"{path}: line {lineno}: expected 2 fields, got {len(row)}")
                try:
                    values.append(float(row[1]))
                except ValueError:
                    raise ContractError(
                        f"{path}: line {lineno}: non-numeric value {row[1]!r}"
                    ) from None
        if not values:
            msg = f"{path}: header-only file, loaded empty series"
            warnings.append(msg)
            log.warning(msg)
        series.append(np.asarray(values, dtype=np.float32))
    return series, warnings


# ---------------------------------------------------------------------------
# synthetic text corpus: pseudo-sentences from a seeded syllable grammar

_SYLLABLES = (
    "ba be bi bo bu da de di do du ka ke ki ko ku la le li lo lu "
    "ma me mi mo mu na ne ni no nu ra re ri ro ru sa se si so su "
    "ta te ti to tu va ve vi vo vu za ze zi zo zu"
).split()


def generate_corpus(size_bytes: int, seed: int = 0) -> str:
    """At least size_bytes of deterministic pseudo-text (ASCII)."""
    if size_bytes < 1:
        raise ContractError("corpus size must be positive")
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))
    chunks: list[str] = []
    total = 0
    sentences_in_par = 0
    while total < size_bytes:
        n_words = int(rng.integers(4, 13))
        words = []
        for w in range(n_words):
            n_syl = int(rng.integers(1, 5))
            word = "".join(_SYLLABLES[int(i)] for i in rng.integers(0, len(_SYLLABLES), n_syl))
            words.append(word)
        if rng.random() < 0.15:  # sprinkle numbers so digits are in-distribution
            words.insert(int(rng.integers(0, len(words))), str(int(rng.integers(0, 1000))))
        sentence = " ".join(words).capitalize()
        if rng.random() < 0.3:
            cut = int(rng.integers(1, max(2, len(words))))
            sentence = sentence.replace(" ", ", ", 1) if cut == 1 else sentence
        sentence += ". "
        sentences_in_par += 1
        if sentences_in_par >= int(rng.integers(4, 9)):
            sentence += "\n"
            sentences_in_par = 0
        chunks.append(sentence)
        total += len(sentence)
    return "".join(chunks)


# character inventory guaranteed to cover corpus and instruction tasks
BASE_CHARSET = string.ascii_letters + string.digits + string.punctuation + " \n"
