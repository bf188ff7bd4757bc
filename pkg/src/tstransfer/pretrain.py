"""Text pretraining stages that manufacture the initialization regimes.

Three checkpoints come out of one model config: random weights, language
weights (span-corruption pretraining on a character corpus), and
instruction-analog weights (a second supervised stage of templated
prompt->response tasks on top of the language weights). Only the
embedding adapter and output head ever change shape downstream.

Character sequences are chunked to a fixed length, so every corrupted
batch has uniform encoder/decoder lengths and needs no padding.
"""

from __future__ import annotations

import logging
import zlib
from dataclasses import dataclass, field

import numpy as np

from . import model as M
from . import tensor as T
from .data import BASE_CHARSET
from .errors import ContractError, DivergenceError
from .model import ModelConfig, ModelParams
from .optim import AdamW
from .tensor import Tensor
from .transfer import LossCurve

log = logging.getLogger(__name__)

PAD_ID = 0
EOS_ID = 1
UNK_ID = 2


@dataclass(frozen=True)
class CharVocab:
    """Byte-level character vocabulary, padded to a fixed total size.

    Layout: 0=pad, 1=eos, 2=unk, then the character inventory, unused
    filler ids, and sentinel ids at the top of the range.
    """

    char_to_id: dict[str, int]
    size: int
    n_sentinels: int

    @classmethod
    def standard(cls, size: int, n_sentinels: int = 32) -> "CharVocab":
        chars = sorted(set(BASE_CHARSET))
        needed = 3 + len(chars) + n_sentinels
        if size < needed:
            raise ContractError(f"vocab size {size} < required {needed}")
        mapping = {c: 3 + i for i, c in enumerate(chars)}
        return cls(char_to_id=mapping, size=size, n_sentinels=n_sentinels)

    @property
    def sentinel_ids(self) -> list[int]:
        return list(range(self.size - self.n_sentinels, self.size))

    def encode(self, text: str) -> np.ndarray:
        return np.asarray([self.char_to_id.get(c, UNK_ID) for c in text], dtype=np.int64)

    def decode(self, ids) -> str:
        rev = {v: k for k, v in self.char_to_id.items()}
        return "".join(rev.get(int(i), "?") for i in ids)


@dataclass(frozen=True)
class SpanCorruptionConfig:
    rate: float = 0.15
    mean_span: float = 3.0
    n_sentinels: int = 32

    def __post_init__(self):
        if not 0.0 < self.rate < 1.0:
            raise ContractError(f"corruption rate must be in (0, 1), got {self.rate}")
        if self.mean_span < 1.0:
            raise ContractError(f"mean span must be >= 1, got {self.mean_span}")


def span_corrupt(
    tokens: np.ndarray,
    config: SpanCorruptionConfig,
    seed,
    sentinel_ids,
    eos_id: int = EOS_ID,
) -> tuple[np.ndarray, np.ndarray]:
    """Mask contiguous spans; returns (encoder input, decoder target).

    Masked spans become sentinels in the encoder input; the decoder
    target lists each sentinel followed by the span it replaced, then
    EOS. Output lengths depend only on len(tokens), so batches of
    equal-length chunks stay rectangular.
    """
    tokens = np.asarray(tokens, dtype=np.int64)
    n = tokens.size
    if n < 2:
        raise ContractError(f"sequence too short to corrupt: {n}")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.Generator(
        np.random.PCG64(np.random.SeedSequence(seed))
    )

    num_noise = int(round(config.rate * n))
    if num_noise == 0:
        return tokens.copy(), np.asarray([eos_id], dtype=np.int64)
    num_spans = max(1, int(round(num_noise / config.mean_span)))
    num_spans = min(num_spans, len(sentinel_ids), num_noise)
    n_keep = n - num_noise
    while num_spans > 1 and n_keep < num_spans - 1:
        num_spans -= 1

    lengths = np.full(num_spans, num_noise // num_spans, dtype=np.int64)
    rem = num_noise - int(lengths.sum())
    if rem:
        lengths[rng.choice(num_spans, size=rem, replace=False)] += 1

    # gaps: first/last may be empty, interior gaps >= 1 so spans never merge
    free = n_keep - (num_spans - 1)
    cuts = np.sort(rng.integers(0, free + 1, size=num_spans))
    gaps = np.empty(num_spans + 1, dtype=np.int64)
    gaps[0] = cuts[0]
    gaps[1:-1] = np.diff(cuts) + 1
    gaps[-1] = free - cuts[-1]

    enc, dec = [], []
    pos = 0
    for s in range(num_spans):
        g = int(gaps[s])
        enc.extend(tokens[pos : pos + g])
        pos += g
        enc.append(sentinel_ids[s])
        dec.append(sentinel_ids[s])
        dec.extend(tokens[pos : pos + int(lengths[s])])
        pos += int(lengths[s])
    enc.extend(tokens[pos:])
    dec.append(eos_id)
    return np.asarray(enc, dtype=np.int64), np.asarray(dec, dtype=np.int64)


# ---------------------------------------------------------------------------
# training loops


@dataclass(frozen=True)
class PretrainConfig:
    lr: float = 5e-4
    batch_size: int = 16
    weight_decay: float = 0.0
    warmup_fraction: float = 0.01
    chunk_len: int = 128
    log_interval_steps: int = 50
    corruption: SpanCorruptionConfig = field(default_factory=SpanCorruptionConfig)


def _derive_rng(seed: int, tag: str) -> np.random.Generator:
    return np.random.Generator(
        np.random.PCG64(np.random.SeedSequence([seed, zlib.crc32(tag.encode())]))
    )


def _shift_right(targets: np.ndarray, start_id: int) -> np.ndarray:
    dec_in = np.empty_like(targets)
    dec_in[:, 0] = start_id
    dec_in[:, 1:] = targets[:, :-1]
    return dec_in


def _text_training_loop(
    params: ModelParams,
    config: ModelConfig,
    batch_fn,
    steps: int,
    pcfg: PretrainConfig,
    seed: int,
    run_id: str,
) -> LossCurve:
    """Shared seq2seq step loop: batch_fn(rng) -> (enc_ids, dec_targets)."""
    opt = AdamW(params, lr=pcfg.lr, weight_decay=pcfg.weight_decay)
    rng = _derive_rng(seed, "batches")
    warmup_steps = pcfg.warmup_fraction * steps
    points: list[tuple[int, float]] = []
    window: list[float] = []
    tokens_seen = 0

    for step in range(steps):
        enc_ids, dec_targets = batch_fn(rng)
        dec_in = _shift_right(dec_targets, PAD_ID)
        enc_embed = T.embedding(params["embed.tokens"], enc_ids)
        dec_embed = T.embedding(params["embed.tokens"], dec_in)
        hidden = M.forward(params, config, enc_embed, dec_embed)
        logits = T.matmul(hidden, T.transpose(params["head.w"], (1, 0)))
        b, u, v = logits.shape
        loss = T.cross_entropy(T.reshape(logits, (b * u, v)), dec_targets.reshape(b * u))
        loss_val = loss.item()
        if not np.isfinite(loss_val):
            raise DivergenceError(f"{run_id}: non-finite loss at step {step}")
        if step == 0:
            points.append((0, loss_val))
        window.append(loss_val)

        opt.zero_grad()
        T.backward(loss)
        lr = pcfg.lr if warmup_steps == 0 or step + 1 >= warmup_steps else pcfg.lr * (step + 1) / warmup_steps
        opt.step(lr=lr)
        tokens_seen += enc_ids.shape[0] * enc_ids.shape[1]

        if (step + 1) % pcfg.log_interval_steps == 0 or step + 1 == steps:
            points.append((tokens_seen, float(np.mean(window))))
            window = []

    tokens = np.asarray([p[0] for p in points], dtype=np.float64)
    losses = np.asarray([p[1] for p in points], dtype=np.float64)
    return LossCurve(tokens, losses, run_id=run_id, seed=seed)


def pretrain_language(
    config: ModelConfig,
    corpus: str,
    steps: int,
    pcfg: PretrainConfig,
    seed: int,
    run_id: str = "pretrain_language",
) -> tuple[ModelParams, LossCurve]:
    """Span-corruption pretraining from random init ("language weights")."""
    if not corpus:
        raise ContractError("corpus is empty")
    vocab = CharVocab.standard(config.vocab_size, pcfg.corruption.n_sentinels)
    ids = vocab.encode(corpus)
    if ids.size < pcfg.chunk_len + 1:
        raise ContractError(f"corpus shorter than one chunk ({pcfg.chunk_len})")
    params = M.init_random(config, seed)
    if steps == 0:
        return params, LossCurve(np.empty(0), np.empty(0), run_id=run_id, seed=seed)

    sentinels = vocab.sentinel_ids

    def batch_fn(rng: np.random.Generator):
        starts = rng.integers(0, ids.size - pcfg.chunk_len, size=pcfg.batch_size)
        enc_rows, dec_rows = [], []
        for s in starts:
            e, d = span_corrupt(ids[s : s + pcfg.chunk_len], pcfg.corruption, rng, sentinels)
            enc_rows.append(e)
            dec_rows.append(d)
        return np.stack(enc_rows), np.stack(dec_rows)

    curve = _text_training_loop(params, config, batch_fn, steps, pcfg, seed, run_id)
    return params, curve


# ---------------------------------------------------------------------------
# instruction-analog stage: templated char-level tasks

_TASKS = ("copy", "reverse", "sort", "max")
_LETTERS = "abcdefghijklmnopqrstuvwxyz"
_DIGITS = "0123456789"


def render_task(kind: str, rng: np.random.Generator, arg_len: int) -> tuple[str, str]:
    """One prompt->response pair; lengths depend only on (kind, arg_len)."""
    if kind in ("copy", "reverse"):
        s = "".join(_LETTERS[int(i)] for i in rng.integers(0, 26, arg_len))
        return f"{kind}: {s}", s if kind == "copy" else s[::-1]
    digits = [_DIGITS[int(i)] for i in rng.integers(0, 10, arg_len)]
    arg = " ".join(digits)
    if kind == "sort":
        return f"sort: {arg}", " ".join(sorted(digits))
    return f"max: {arg}", max(digits)


def tune_instruction_analog(
    language_params: ModelParams,
    config: ModelConfig,
    steps: int,
    pcfg: PretrainConfig,
    seed: int,
    run_id: str = "tune_instruct",
) -> tuple[ModelParams, LossCurve]:
    """Supervised prompt->response tuning on top of language weights."""
    M.validate_params(language_params, config)
    params = {k: Tensor(v.data.copy(), requires_grad=True) for k, v in language_params.items()}
    if steps == 0:
        return params, LossCurve(np.empty(0), np.empty(0), run_id=run_id, seed=seed)
    vocab = CharVocab.standard(config.vocab_size, pcfg.corruption.n_sentinels)

    def batch_fn(rng: np.random.Generator):
        kind = _TASKS[int(rng.integers(0, len(_TASKS)))]
        arg_len = int(rng.integers(4, 13))
        enc_rows, dec_rows = [], []
        for _ in range(pcfg.batch_size):
            prompt, response = render_task(kind, rng, arg_len)
            enc_rows.append(vocab.encode(prompt))
            dec_rows.append(np.concatenate([vocab.encode(response), [EOS_ID]]))
        return np.stack(enc_rows), np.stack(dec_rows)

    curve = _text_training_loop(params, config, batch_fn, steps, pcfg, seed, run_id)
    return params, curve
