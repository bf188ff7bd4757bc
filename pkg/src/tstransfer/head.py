"""Categorical output head over quantization bins, loss, and forecasting.

All tokenizers share this head: prediction targets are always the bin
index of the next value, so validation losses are comparable across
tokenization schemes.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import model as M
from . import tensor as T
from .embedding import EmbeddingAdapter, embed
from .errors import ContractError
from .model import ModelConfig, ModelParams, truncated_normal
from .tensor import Tensor, no_grad
from .tokenizers import (
    BinSpec,
    LagSet,
    bin_indices,
    detokenize_bin,
    normalize_window,
    tokenize_bin,
    tokenize_lag,
    tokenize_naive,
)

START_TOKEN_OFFSET = 0  # start-of-decoding id = n_bins + offset


@dataclass
class CategoricalHead:
    w: Tensor  # [n_bins, d_model]
    n_bins: int


def init_head_random(n_bins: int, d_model: int, seed: int = 0) -> CategoricalHead:
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))
    w = truncated_normal(rng, (n_bins, d_model), d_model**-0.5)
    return CategoricalHead(w=Tensor(w, requires_grad=True), n_bins=n_bins)


def head_logits(head: CategoricalHead, hidden: Tensor) -> Tensor:
    """Affine projection (no bias) of hidden states onto bin logits."""
    if hidden.shape[-1] != head.w.shape[1]:
        raise ContractError(
            f"hidden width {hidden.shape[-1]} != head width {head.w.shape[1]}"
        )
    return T.matmul(hidden, T.transpose(head.w, (1, 0)))


def nll_loss(logits: Tensor, targets: np.ndarray, mask: np.ndarray | None = None) -> Tensor:
    """Mean over unmasked positions of -log softmax(logits)[target].

    Accepts [U, B] or [batch, U, B] logits with matching target shape.
    """
    targets = np.asarray(targets)
    if logits.ndim == 3:
        n = logits.shape[0] * logits.shape[1]
        logits = T.reshape(logits, (n, logits.shape[2]))
        targets = targets.reshape(n)
        mask = None if mask is None else np.asarray(mask).reshape(n)
    return T.cross_entropy(logits, targets, mask)


@dataclass
class SeriesModel:
    """A backbone bound to its tokenizer, embedding adapters, and head."""

    config: ModelConfig
    backbone: ModelParams  # backbone tensors only (no embed.tokens / head.w)
    enc_adapter: EmbeddingAdapter
    dec_table: Tensor  # [n_bins + 1, d_model]; last row embeds the start token
    head: CategoricalHead
    tokenizer_kind: str
    bin_spec: BinSpec
    lags: LagSet | None = None

    @property
    def start_id(self) -> int:
        return self.bin_spec.n_bins + START_TOKEN_OFFSET

    def trainable(self) -> dict[str, Tensor]:
        named = dict(self.backbone)
        named["embed.bins"] = self.dec_table
        if self.enc_adapter.mode == "continuous":
            named["embed.we"] = self.enc_adapter.w_e
            named["embed.be"] = self.enc_adapter.b_e
        named["head.w"] = self.head.w
        return named

    def tokenize_context(self, window: np.ndarray):
        normalized, stats = normalize_window(window)
        if self.tokenizer_kind == "naive":
            return tokenize_naive(normalized), stats
        if self.tokenizer_kind == "lag":
            return tokenize_lag(normalized, self.lags), stats
        if self.tokenizer_kind == "bin":
            return tokenize_bin(normalized, self.bin_spec), stats
        raise ContractError(f"unknown tokenizer {self.tokenizer_kind!r}")


def forecast(
    smodel: SeriesModel,
    context: np.ndarray,
    horizon: int,
    mode: str = "argmax",
    seed: int | None = None,
) -> np.ndarray:
    """Autoregressive decode of ``horizon`` de-normalized values."""
    if horizon < 1:
        raise ContractError(f"horizon must be >= 1, got {horizon}")
    if mode not in ("argmax", "sample"):
        raise ContractError(f"unknown forecast mode {mode!r}")
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(0 if seed is None else seed)))

    tokens, stats = smodel.tokenize_context(np.asarray(context, dtype=np.float32))
    with no_grad():
        enc_in = embed(smodel.enc_adapter, tokens)
        enc_in = T.reshape(enc_in, (1,) + enc_in.shape)
        enc_out = M.encode(smodel.backbone, smodel.config, enc_in)

        ids = [smodel.start_id]
        out_bins: list[int] = []
        for _ in range(horizon):
            dec_in = T.embedding(smodel.dec_table, np.asarray([ids], dtype=np.int64))
            hidden = M.decode(smodel.backbone, smodel.config, enc_out, dec_in)
            logits = head_logits(smodel.head, hidden).data[0, -1]
            if mode == "argmax":
                nxt = int(np.argmax(logits))
            else:
                z = logits - logits.max()
                p = np.exp(z, dtype=np.float64)
                p /= p.sum()
                nxt = int(rng.choice(len(p), p=p))
            out_bins.append(nxt)
            ids.append(nxt)
    return detokenize_bin(np.asarray(out_bins), smodel.bin_spec, stats)


def target_bins(smodel: SeriesModel, target: np.ndarray, stats) -> np.ndarray:
    """Bin indices of target values under the context window's normalization."""
    scaled = np.asarray(target, dtype=np.float64) / stats.std
    return bin_indices(scaled, smodel.bin_spec)
