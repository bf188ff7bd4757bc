"""Token-to-model-space adapters and their pretrained-initialization rules.

Discrete tokens use a lookup table; continuous token vectors use an
affine map e = W_e s + b_e with W_e of shape [d_model, d_token].

When initializing from a pretrained vocabulary: the discrete table takes
the first B vocabulary rows verbatim (special tokens beyond B are drawn
fresh), and every column of W_e is set to the mean vocabulary vector
with b_e = 0, so the unit token initially maps straight onto the mean
pretrained embedding.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import ContractError, InsufficientVocabularyError
from .model import truncated_normal
from .tensor import Tensor
from .tokenizers import TokenSequence


@dataclass
class EmbeddingAdapter:
    mode: str  # "discrete" | "continuous"
    table: Tensor | None = None  # [rows, d_model]
    w_e: Tensor | None = None  # [d_model, d_token]
    b_e: Tensor | None = None  # [d_model]

    def __post_init__(self):
        if self.mode == "discrete":
            assert self.table is not None and self.w_e is None and self.b_e is None
        elif self.mode == "continuous":
            assert self.table is None and self.w_e is not None and self.b_e is not None
        else:
            raise ContractError(f"unknown adapter mode {self.mode!r}")

    @property
    def d_model(self) -> int:
        return self.table.shape[1] if self.mode == "discrete" else self.w_e.shape[0]


def embed_indices(adapter: EmbeddingAdapter, indices: np.ndarray) -> Tensor:
    if adapter.mode != "discrete":
        raise ContractError("discrete indices passed to a continuous adapter")
    return T.embedding(adapter.table, indices)


def embed_values(adapter: EmbeddingAdapter, values) -> Tensor:
    if adapter.mode != "continuous":
        raise ContractError("continuous token vectors passed to a discrete adapter")
    vals = values if isinstance(values, Tensor) else Tensor(np.asarray(values, dtype=np.float32))
    if vals.shape[-1] != adapter.w_e.shape[1]:
        raise ContractError(
            f"token dimension {vals.shape[-1]} != adapter d_token {adapter.w_e.shape[1]}"
        )
    out = T.matmul(vals, T.transpose(adapter.w_e, (1, 0)))
    return T.add(out, adapter.b_e)


def embed(adapter: EmbeddingAdapter, tokens: TokenSequence) -> Tensor:
    """Map one token sequence to [T', d_model]."""
    if tokens.kind == "discrete":
        return embed_indices(adapter, tokens.discrete)
    return embed_values(adapter, tokens.continuous)


def init_adapter_random(
    mode: str,
    d_model: int,
    *,
    rows: int | None = None,
    d_token: int | None = None,
    seed: int = 0,
) -> EmbeddingAdapter:
    """Same truncated-normal scheme as the backbone; b_e starts at zero."""
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))
    std = d_model**-0.5
    if mode == "discrete":
        if rows is None:
            raise ContractError("discrete adapter needs a row count")
        return EmbeddingAdapter(
            mode="discrete",
            table=Tensor(truncated_normal(rng, (rows, d_model), std), requires_grad=True),
        )
    if d_token is None:
        raise ContractError("continuous adapter needs d_token")
    return EmbeddingAdapter(
        mode="continuous",
        w_e=Tensor(truncated_normal(rng, (d_model, d_token), std), requires_grad=True),
        b_e=Tensor(np.zeros(d_model, dtype=np.float32), requires_grad=True),
    )


def init_adapter_from_pretrained(
    mode: str,
    pretrained_vocab: Tensor,
    n_bins: int,
    *,
    d_token: int | None = None,
    n_special: int = 0,
    seed: int = 0,
) -> EmbeddingAdapter:
    """Build an adapter from a pretrained vocabulary matrix [V, d_model]."""
    vocab = pretrained_vocab.data
    v, d_model = vocab.shape
    if mode == "discrete":
        if v < n_bins:
            raise InsufficientVocabularyError(
                f"pretrained vocabulary has {v} rows, need at least {n_bins}"
            )
        rows = [vocab[:n_bins].copy()]
        if n_special > 0:
            rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))
            rows.append(truncated_normal(rng, (n_special, d_model), d_model**-0.5))
        table = np.concatenate(rows, axis=0).astype(np.float32)
        return EmbeddingAdapter(mode="discrete", table=Tensor(table, requires_grad=True))
    if d_token is None:
        raise ContractError("continuous adapter needs d_token")
    mean_vec = vocab.astype(np.float64).mean(axis=0)  # 64-bit mean of V rows
    w_e = np.tile(mean_vec[:, None], (1, d_token)).astype(np.float32)
    return EmbeddingAdapter(
        mode="continuous",
        w_e=Tensor(w_e, requires_grad=True),
        b_e=Tensor(np.zeros(d_model, dtype=np.float32), requires_grad=True),
    )
