"""Encoder-decoder transformer backbone at desk-scale tiers.

The architecture follows the T5 family: pre-RMS-norm blocks, no biases in
linear projections, no absolute position embeddings, bucketed relative
position bias in self-attention (one table per stack, owned by layer 0 and
added in every layer), plain cross-attention without position bias.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import ContractError, ShapeError
from .tensor import Tensor

NORM_EPS = 1e-6

ModelParams = dict[str, Tensor]


@dataclass(frozen=True)
class ModelConfig:
    d_model: int = 64
    n_layers_enc: int = 2
    n_layers_dec: int = 2
    n_heads: int = 4
    d_ff: int = 256
    vocab_size: int = 4160
    rel_pos_buckets: int = 32
    rel_pos_max_distance: int = 128
    tier_name: str = "tiny"

    def __post_init__(self):
        if self.d_model % self.n_heads != 0:
            raise ContractError(
                f"d_model {self.d_model} not divisible by n_heads {self.n_heads}"
            )

    @property
    def d_head(self) -> int:
        return self.d_model // self.n_heads


# Desk-scale analogs of the 60M/220M/770M tiers: each step up keeps the
# roughly x3-4 parameter ratio between sizes.
TIERS = {
    "tiny": dict(d_model=64, n_layers_enc=2, n_layers_dec=2, n_heads=4, d_ff=256),
    "small-analog": dict(d_model=128, n_layers_enc=4, n_layers_dec=4, n_heads=4, d_ff=512),
    "base-analog": dict(d_model=256, n_layers_enc=6, n_layers_dec=6, n_heads=8, d_ff=1024),
}


def tier_config(tier: str, vocab_size: int = 4160) -> ModelConfig:
    if tier not in TIERS:
        raise ContractError(f"unknown tier {tier!r}; expected one of {sorted(TIERS)}")
    return ModelConfig(vocab_size=vocab_size, tier_name=tier, **TIERS[tier])


def param_shapes(config: ModelConfig) -> dict[str, tuple[int, ...]]:
    """Canonical name -> shape map; a pure function of the config."""
    d, ff = config.d_model, config.d_ff
    shapes: dict[str, tuple[int, ...]] = {}
    shapes["embed.tokens"] = (config.vocab_size, d)
    for i in range(config.n_layers_enc):
        p = f"encoder.block{i}"
        shapes[f"{p}.attn_norm.gain"] = (d,)
        for w in ("q", "k", "v", "o"):
            shapes[f"{p}.attn.{w}"] = (d, d)
        shapes[f"{p}.ff_norm.gain"] = (d,)
        shapes[f"{p}.ff.wi"] = (d, ff)
        shapes[f"{p}.ff.wo"] = (ff, d)
    if config.n_layers_enc > 0:
        shapes["encoder.rel_bias"] = (config.rel_pos_buckets, config.n_heads)
    shapes["encoder.final_norm.gain"] = (d,)
    for i in range(config.n_layers_dec):
        p = f"decoder.block{i}"
        shapes[f"{p}.attn_norm.gain"] = (d,)
        for w in ("q", "k", "v", "o"):
            shapes[f"{p}.attn.{w}"] = (d, d)
        shapes[f"{p}.cross_norm.gain"] = (d,)
        for w in ("q", "k", "v", "o"):
            shapes[f"{p}.cross.{w}"] = (d, d)
        shapes[f"{p}.ff_norm.gain"] = (d,)
        shapes[f"{p}.ff.wi"] = (d, ff)
        shapes[f"{p}.ff.wo"] = (ff, d)
    if config.n_layers_dec > 0:
        shapes["decoder.rel_bias"] = (config.rel_pos_buckets, config.n_heads)
    shapes["decoder.final_norm.gain"] = (d,)
    shapes["head.w"] = (config.vocab_size, d)
    return shapes


def param_count(config: ModelConfig) -> int:
    return sum(int(np.prod(s)) for s in param_shapes(config).values())


def truncated_normal(rng: np.random.Generator, shape: tuple[int, ...], std: float) -> np.ndarray:
    """N(0, std) resampled until every draw lies within +-2 std."""
    out = rng.standard_normal(size=shape)
    bad = np.abs(out) > 2.0
    while bad.any():
        out[bad] = rng.standard_normal(size=int(bad.sum()))
        bad = np.abs(out) > 2.0
    return (out * std).astype(np.float32)


def _init_std(name: str, shape: tuple[int, ...], d_model: int) -> float | None:
    """None means the tensor initializes to ones (norm gains)."""
    if name.endswith("norm.gain"):
        return None
    if name in ("embed.tokens", "head.w") or name.endswith("rel_bias"):
        return d_model**-0.5
    # projection matrices: fan-in scaled, W is [in, out]
    return shape[0] ** -0.5


def init_random(config: ModelConfig, seed: int) -> ModelParams:
    """Truncated-normal weights, deterministic in (config, seed)."""
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))
    params: ModelParams = {}
    for name, shape in param_shapes(config).items():
        std = _init_std(name, shape, config.d_model)
        if std is None:
            data = np.ones(shape, dtype=np.float32)
        else:
            data = truncated_normal(rng, shape, std)
        params[name] = Tensor(data, requires_grad=True)
    return params


def validate_params(params: ModelParams, config: ModelConfig) -> None:
    expected = param_shapes(config)
    for name in params:
        if name not in expected:
            raise ContractError(f"unknown tensor {name!r} for config {config.tier_name}")
    for name, shape in expected.items():
        if name not in params:
            raise ContractError(f"missing tensor {name!r} for config {config.tier_name}")
        if params[name].shape != shape:
            raise ContractError(
                f"tensor {name!r} has shape {params[name].shape}, expected {shape}"
            )


# ---------------------------------------------------------------------------
# relative position buckets (bidirectional for encoder, causal for decoder)


def relative_position_buckets(
    q_len: int,
    k_len: int,
    n_buckets: int,
    max_distance: int,
    bidirectional: bool,
) -> np.ndarray:
    """Bucket index matrix [q_len, k_len] for relative positions key - query.

    Half the buckets hold exact small offsets; the rest grow
    logarithmically out to max_distance, beyond which everything shares
    the last bucket.
    """
    rel = np.arange(k_len)[None, :] - np.arange(q_len)[:, None]
    if bidirectional:
        half = n_buckets // 2
        out = (rel > 0).astype(np.int64) * half
        rel = np.abs(rel)
        n = half
    else:
        out = np.zeros((q_len, k_len), dtype=np.int64)
        rel = -np.minimum(rel, 0)
        n = n_buckets
    max_exact = n // 2
    large = max_exact + (
        np.log(np.maximum(rel, 1) / max_exact)
        / math.log(max_distance / max_exact)
        * (n - max_exact)
    ).astype(np.int64)
    large = np.minimum(large, n - 1)
    out += np.where(rel < max_exact, rel, large)
    return out


def _rel_bias(table: Tensor, q_len: int, k_len: int, config: ModelConfig, bidirectional: bool) -> Tensor:
    buckets = relative_position_buckets(
        q_len, k_len, config.rel_pos_buckets, config.rel_pos_max_distance, bidirectional
    )
    bias = T.embedding(table, buckets)  # [q, k, heads]
    return T.transpose(bias, (2, 0, 1))  # [heads, q, k]


# ---------------------------------------------------------------------------
# forward


def _attention(q_in, kv_in, wq, wk, wv, wo, n_heads: int, bias=None, mask=None):
    b, tq, d = q_in.shape
    tk = kv_in.shape[1]
    dh = d // n_heads
    q = T.transpose(T.reshape(T.matmul(q_in, wq), (b, tq, n_heads, dh)), (0, 2, 1, 3))
    k = T.transpose(T.reshape(T.matmul(kv_in, wk), (b, tk, n_heads, dh)), (0, 2, 3, 1))
    v = T.transpose(T.reshape(T.matmul(kv_in, wv), (b, tk, n_heads, dh)), (0, 2, 1, 3))
    logits = T.scale(T.matmul(q, k), dh**-0.5)  # [b, h, tq, tk]
    if bias is not None:
        logits = T.add(logits, bias)
    if mask is not None:
        logits = T.add(logits, mask)
    att = T.softmax(logits)
    ctx = T.reshape(T.transpose(T.matmul(att, v), (0, 2, 1, 3)), (b, tq, d))
    return T.matmul(ctx, wo)


def _ff(x, wi, wo):
    return T.matmul(T.relu(T.matmul(x, wi)), wo)


def _norm(params, name, x):
    return T.rms_norm(x, params[f"{name}.gain"], NORM_EPS)


def encode(params: ModelParams, config: ModelConfig, enc_embed: Tensor) -> Tensor:
    _check_embed(config, enc_embed, "encoder")
    h = enc_embed
    t = enc_embed.shape[1]
    bias = None
    if config.n_layers_enc > 0:
        bias = _rel_bias(params["encoder.rel_bias"], t, t, config, bidirectional=True)
    for i in range(config.n_layers_enc):
        p = f"encoder.block{i}"
        x = _norm(params, f"{p}.attn_norm", h)
        a = _attention(
            x, x,
            params[f"{p}.attn.q"], params[f"{p}.attn.k"],
            params[f"{p}.attn.v"], params[f"{p}.attn.o"],
            config.n_heads, bias=bias,
        )
        h = T.add(h, a)
        f = _ff(_norm(params, f"{p}.ff_norm", h), params[f"{p}.ff.wi"], params[f"{p}.ff.wo"])
        h = T.add(h, f)
    return _norm(params, "encoder.final_norm", h)


def decode(params: ModelParams, config: ModelConfig, enc_out: Tensor, dec_embed: Tensor) -> Tensor:
    _check_embed(config, dec_embed, "decoder")
    if enc_out.shape[0] != dec_embed.shape[0]:
        raise ShapeError(
            f"batch mismatch: encoder {enc_out.shape} vs decoder {dec_embed.shape}"
        )
    h = dec_embed
    u = dec_embed.shape[1]
    causal = np.triu(np.full((u, u), -1e9, dtype=dec_embed.data.dtype), k=1)
    causal_t = Tensor(causal)
    bias = None
    if config.n_layers_dec > 0:
        bias = _rel_bias(params["decoder.rel_bias"], u, u, config, bidirectional=False)
    for i in range(config.n_layers_dec):
        p = f"decoder.block{i}"
        x = _norm(params, f"{p}.attn_norm", h)
        a = _attention(
            x, x,
            params[f"{p}.attn.q"], params[f"{p}.attn.k"],
            params[f"{p}.attn.v"], params[f"{p}.attn.o"],
            config.n_heads, bias=bias, mask=causal_t,
        )
        h = T.add(h, a)
        c = _attention(
            _norm(params, f"{p}.cross_norm", h),
            enc_out,
            params[f"{p}.cross.q"], params[f"{p}.cross.k"],
            params[f"{p}.cross.v"], params[f"{p}.cross.o"],
            config.n_heads,
        )
        h = T.add(h, c)
        f = _ff(_norm(params, f"{p}.ff_norm", h), params[f"{p}.ff.wi"], params[f"{p}.ff.wo"])
        h = T.add(h, f)
    return _norm(params, "decoder.final_norm", h)


def forward(params: ModelParams, config: ModelConfig, enc_embed: Tensor, dec_embed: Tensor) -> Tensor:
    """Full pass: embedded encoder/decoder inputs -> decoder hidden states."""
    return decode(params, config, encode(params, config, enc_embed), dec_embed)


def _check_embed(config: ModelConfig, x: Tensor, side: str) -> None:
    if x.ndim != 3 or x.shape[2] != config.d_model:
        raise ShapeError(
            f"{side} input must be [batch, seq, {config.d_model}], got {x.shape}"
        )
