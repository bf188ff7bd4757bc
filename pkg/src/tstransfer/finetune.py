"""Time-series fine-tuning: windowing, schedules, runs, and sweeps.

Validation windows are frozen per experiment (drawn from held-out series
with a data seed that is independent of the training seed), so every run
being compared reports losses on identical windows. Token accounting
uses tokenizer-output tokens: after k optimizer steps,
tokens_seen = k * batch_size * T'.
"""

from __future__ import annotations

import hashlib
import itertools
import json
import logging
import zlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import model as M
from . import tensor as T
from .checkpoint import load_checkpoint, save_checkpoint
from .embedding import (
    EmbeddingAdapter,
    init_adapter_from_pretrained,
    init_adapter_random,
)
from .errors import ContractError, DivergenceError
from .head import SeriesModel, head_logits, init_head_random, nll_loss
from .model import ModelConfig
from .optim import AdamW
from .tensor import Tensor, no_grad
from .tokenizers import BinSpec, LagSet, bin_indices, normalize_window, tokenize_lag, tokenize_naive
from .transfer import LossCurve, aggregate_seeds, write_aggregate_csv, write_curve_csv

log = logging.getLogger(__name__)

N_SPECIAL_TOKENS = 1  # decoder start


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 5e-4
    batch_size: int = 8
    weight_decay: float = 0.0
    warmup_fraction: float = 0.01
    max_tokens: int = 500_000
    eval_interval: int = 50_000
    seed: int = 0
    context_len: int = 512
    horizon: int = 64
    eval_windows: int = 512

    def __post_init__(self):
        if self.lr <= 0:
            raise ContractError(f"learning rate must be positive, got {self.lr}")
        if self.batch_size < 1:
            raise ContractError(f"batch size must be >= 1, got {self.batch_size}")
        if not 0.0 <= self.warmup_fraction <= 1.0:
            raise ContractError(f"warmup fraction must lie in [0, 1], got {self.warmup_fraction}")
        if self.max_tokens < 0:
            raise ContractError(f"max tokens must be >= 0, got {self.max_tokens}")
        if self.eval_interval < 1:
            raise ContractError(f"eval interval must be >= 1, got {self.eval_interval}")
        if self.horizon < 1 or self.context_len < 1:
            raise ContractError("context length and horizon must be >= 1")


def lr_at(tokens: float, config: TrainConfig) -> float:
    """Linear warmup from 0 over warmup_fraction * max_tokens, then constant."""
    warmup = config.warmup_fraction * config.max_tokens
    if warmup <= 0 or tokens >= warmup:
        return config.lr
    return config.lr * tokens / warmup


# ---------------------------------------------------------------------------
# windowing


def usable_series(series: list[np.ndarray], t: int, u: int) -> tuple[list[np.ndarray], int]:
    kept = [s for s in series if len(s) >= t + u]
    skipped = len(series) - len(kept)
    if skipped:
        log.warning("skipped %d series shorter than %d", skipped, t + u)
    return kept, skipped


def make_windows(series: list[np.ndarray], t: int, u: int, seed: int):
    """Endless stream of uniformly sampled (context[t], target[u]) pairs."""
    kept, _ = usable_series(series, t, u)
    if not kept:
        raise ContractError(f"no series long enough for context {t} + horizon {u}")
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))
    while True:
        s = kept[int(rng.integers(0, len(kept)))]
        off = int(rng.integers(0, len(s) - (t + u) + 1))
        yield s[off : off + t], s[off + t : off + t + u]


def sample_windows(series, t: int, u: int, n: int, seed: int) -> list[tuple[np.ndarray, np.ndarray]]:
    gen = make_windows(series, t, u, seed)
    return [next(gen) for _ in range(n)]


def windows_hash(windows) -> str:
    h = hashlib.sha256()
    for ctx, tgt in windows:
        h.update(np.asarray(ctx, dtype=np.float32).tobytes())
        h.update(np.asarray(tgt, dtype=np.float32).tobytes())
    return h.hexdigest()[:16]


# ---------------------------------------------------------------------------
# model assembly per initialization regime


def _derived_seed(seed: int, tag: str) -> int:
    return int(np.random.SeedSequence([seed, zlib.crc32(tag.encode())]).generate_state(1)[0])


def build_series_model(
    config: ModelConfig,
    tokenizer_kind: str,
    bin_spec: BinSpec,
    lags: LagSet | None,
    source: str | Path,
    seed: int,
) -> SeriesModel:
    """Assemble a fine-tunable model from 'random' or a checkpoint path.

    From a checkpoint, the backbone transfers as-is while the embedding
    adapter is rebuilt from the pretrained vocabulary (first-B rows for
    the discrete table, mean vocabulary vector for the continuous map)
    and the head is always drawn fresh.
    """
    if tokenizer_kind not in ("naive", "lag", "bin"):
        raise ContractError(f"unknown tokenizer {tokenizer_kind!r}")
    if tokenizer_kind == "lag" and lags is None:
        raise ContractError("lag tokenizer requires a lag set")
    d_token = 1 if tokenizer_kind == "naive" else (1 + len(lags.lags) if tokenizer_kind == "lag" else None)
    n_rows = bin_spec.n_bins + N_SPECIAL_TOKENS

    if source == "random":
        params = M.init_random(config, seed)
        backbone = {k: v for k, v in params.items() if k not in ("embed.tokens", "head.w")}
        dec_adapter = init_adapter_random(
            "discrete", config.d_model, rows=n_rows, seed=_derived_seed(seed, "dec_table")
        )
        if tokenizer_kind == "bin":
            enc_adapter = dec_adapter
        else:
            enc_adapter = init_adapter_random(
                "continuous", config.d_model, d_token=d_token, seed=_derived_seed(seed, "enc_adapter")
            )
    else:
        params = load_checkpoint(source)
        M.validate_params(params, config)
        backbone = {k: v for k, v in params.items() if k not in ("embed.tokens", "head.w")}
        vocab = params["embed.tokens"]
        dec_adapter = init_adapter_from_pretrained(
            "discrete",
            vocab,
            bin_spec.n_bins,
            n_special=N_SPECIAL_TOKENS,
            seed=_derived_seed(seed, "dec_table"),
        )
        if tokenizer_kind == "bin":
            enc_adapter = dec_adapter
        else:
            enc_adapter = init_adapter_from_pretrained(
                "continuous", vocab, bin_spec.n_bins, d_token=d_token
            )

    head = init_head_random(bin_spec.n_bins, config.d_model, seed=_derived_seed(seed, "head"))
    return SeriesModel(
        config=config,
        backbone=backbone,
        enc_adapter=enc_adapter,
        dec_table=dec_adapter.table,
        head=head,
        tokenizer_kind=tokenizer_kind,
        bin_spec=bin_spec,
        lags=lags,
    )


# ---------------------------------------------------------------------------
# batch preparation


def tokens_per_window(tokenizer_kind: str, context_len: int, lags: LagSet | None) -> int:
    if tokenizer_kind == "lag":
        return context_len - lags.max_lag
    return context_len


def _prepare_batch(smodel: SeriesModel, windows):
    """Tokenize a list of (context, target) windows into stacked arrays."""
    enc_rows, tgt_rows = [], []
    for ctx, tgt in windows:
        normalized, stats = normalize_window(ctx)
        if smodel.tokenizer_kind == "bin":
            enc_rows.append(bin_indices(normalized, smodel.bin_spec))
        elif smodel.tokenizer_kind == "naive":
            enc_rows.append(tokenize_naive(normalized).continuous)
        else:
            enc_rows.append(tokenize_lag(normalized, smodel.lags).continuous)
        scaled = np.asarray(tgt, dtype=np.float64) / stats.std
        tgt_rows.append(bin_indices(scaled, smodel.bin_spec))
    targets = np.stack(tgt_rows)
    dec_in = np.empty_like(targets)
    dec_in[:, 0] = smodel.start_id
    dec_in[:, 1:] = targets[:, :-1]
    return np.stack(enc_rows), dec_in, targets


def _batch_loss(smodel: SeriesModel, enc_batch, dec_in, targets) -> Tensor:
    if smodel.tokenizer_kind == "bin":
        enc_embed = T.embedding(smodel.enc_adapter.table, enc_batch)
    else:
        x = Tensor(enc_batch)
        e = T.matmul(x, T.transpose(smodel.enc_adapter.w_e, (1, 0)))
        enc_embed = T.add(e, smodel.enc_adapter.b_e)
    dec_embed = T.embedding(smodel.dec_table, dec_in)
    hidden = M.forward(smodel.backbone, smodel.config, enc_embed, dec_embed)
    return nll_loss(head_logits(smodel.head, hidden), targets)


def evaluate(smodel: SeriesModel, eval_batches) -> float:
    """Mean validation NLL over frozen, pre-tokenized batches."""
    total, count = 0.0, 0
    with no_grad():
        for enc_batch, dec_in, targets in eval_batches:
            loss = _batch_loss(smodel, enc_batch, dec_in, targets)
            n = targets.shape[0]
            total += loss.item() * n
            count += n
    return total / count


# ---------------------------------------------------------------------------
# a full fine-tuning run


def finetune_run(
    source: str | Path,
    config: ModelConfig,
    tokenizer_kind: str,
    bin_spec: BinSpec,
    lags: LagSet | None,
    train_cfg: TrainConfig,
    train_series: list[np.ndarray],
    val_series: list[np.ndarray],
    run_id: str,
    data_seed: int = 0,
    out_dir: Path | None = None,
    eval_batch_size: int = 64,
) -> tuple[LossCurve, SeriesModel]:
    """Train from 'random' or a checkpoint; returns the loss curve and model.

    Writes <run_id>.losscurve.csv, <run_id>.meta.json and <run_id>.ckpt
    into out_dir when given. The curve always contains the zero-shot
    point at tokens_seen = 0.
    """
    smodel = build_series_model(config, tokenizer_kind, bin_spec, lags, source, train_cfg.seed)
    t, u = train_cfg.context_len, train_cfg.horizon

    val_windows = sample_windows(val_series, t, u, train_cfg.eval_windows, data_seed)
    val_hash = windows_hash(val_windows)
    eval_batches = [
        _prepare_batch(smodel, val_windows[i : i + eval_batch_size])
        for i in range(0, len(val_windows), eval_batch_size)
    ]

    meta = {
        "run_id": run_id,
        "seed": train_cfg.seed,
        "tier": config.tier_name,
        "tokenizer": tokenizer_kind,
        "source": str(source),
        "val_set_hash": val_hash,
        "max_tokens": train_cfg.max_tokens,
        "context_len": t,
        "horizon": u,
    }

    opt = AdamW(smodel.trainable(), lr=train_cfg.lr, weight_decay=train_cfg.weight_decay)
    step_tokens = train_cfg.batch_size * tokens_per_window(tokenizer_kind, t, lags)
    stream = make_windows(train_series, t, u, train_cfg.seed)

    points: list[tuple[int, float]] = [(0, evaluate(smodel, eval_batches))]
    tokens_seen = 0
    next_eval = train_cfg.eval_interval

    def finish(curve_points) -> LossCurve:
        curve = LossCurve(
            np.asarray([p[0] for p in curve_points], dtype=np.float64),
            np.asarray([p[1] for p in curve_points], dtype=np.float64),
            run_id=run_id,
            seed=train_cfg.seed,
            meta={"val_set_hash": val_hash},
        )
        if out_dir is not None:
            d = Path(out_dir)
            write_curve_csv(curve, d / f"{run_id}.losscurve.csv")
            with open(d / f"{run_id}.meta.json", "w") as fh:
                json.dump(meta, fh, indent=2, sort_keys=True)
                fh.write("\n")
        return curve

    while tokens_seen < train_cfg.max_tokens:
        batch = [next(stream) for _ in range(train_cfg.batch_size)]
        enc_batch, dec_in, targets = _prepare_batch(smodel, batch)
        loss = _batch_loss(smodel, enc_batch, dec_in, targets)
        if not np.isfinite(loss.item()):
            finish(points)
            raise DivergenceError(f"{run_id}: non-finite training loss at {tokens_seen} tokens")
        opt.zero_grad()
        T.backward(loss)
        tokens_seen += step_tokens
        opt.step(lr=lr_at(tokens_seen, train_cfg))
        if tokens_seen >= next_eval or tokens_seen >= train_cfg.max_tokens:
            val = evaluate(smodel, eval_batches)
            if not np.isfinite(val):
                finish(points)
                raise DivergenceError(f"{run_id}: non-finite validation loss at {tokens_seen} tokens")
            points.append((tokens_seen, val))
            while next_eval <= tokens_seen:
                next_eval += train_cfg.eval_interval

    curve = finish(points)
    if out_dir is not None:
        save_checkpoint(smodel.trainable(), Path(out_dir) / f"{run_id}.ckpt")
    return curve, smodel


# ---------------------------------------------------------------------------
# hyperparameter sweep


@dataclass(frozen=True)
class SweepGrid:
    lrs: tuple[float, ...] = (1e-4, 5e-4, 1e-3)
    batch_sizes: tuple[int, ...] = (64, 128)
    weight_decays: tuple[float, ...] = (0.0, 0.01, 0.1)
    warmup_fractions: tuple[float, ...] = (0.0, 0.005, 0.01, 0.02)

    def combos(self) -> list[dict]:
        out = [
            {"lr": lr, "batch_size": bs, "weight_decay": wd, "warmup_fraction": wu}
            for lr, bs, wd, wu in itertools.product(
                self.lrs, self.batch_sizes, self.weight_decays, self.warmup_fractions
            )
        ]
        if not out:
            raise ContractError("sweep grid is empty")
        return out


def combo_run_id(prefix: str, combo: dict) -> str:
    return (
        f"{prefix}-lr{combo['lr']:g}-bs{combo['batch_size']}"
        f"-wd{combo['weight_decay']:g}-wu{combo['warmup_fraction']:g}"
    )


@dataclass
class SweepResult:
    curves: dict[str, LossCurve]
    skipped: list[str]
    failed: dict[str, str]


def sweep(grid: SweepGrid, runner, out_dir: Path, prefix: str = "sweep") -> SweepResult:
    """Run the full grid; resumable (existing curve files are skipped).

    ``runner(combo, run_id)`` performs one fine-tuning run and must leave
    <run_id>.losscurve.csv in out_dir. Individual failures are recorded
    and the sweep continues. Writes <prefix>-aggregate.csv (mean +- std).
    """
    from .transfer import read_curve_csv  # local import to keep module load light

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    curves: dict[str, LossCurve] = {}
    skipped: list[str] = []
    failed: dict[str, str] = {}
    for combo in grid.combos():
        run_id = combo_run_id(prefix, combo)
        csv_path = out_dir / f"{run_id}.losscurve.csv"
        if csv_path.exists():
            curves[run_id] = read_curve_csv(csv_path)
            skipped.append(run_id)
            continue
        try:
            curves[run_id] = runner(combo, run_id)
        except Exception as exc:  # record and continue: one bad config must not kill the sweep
            log.error("sweep run %s failed: %s", run_id, exc)
            failed[run_id] = str(exc)
    if curves:
        agg = aggregate_seeds(list(curves.values()), mode="mean_std")
        write_aggregate_csv(agg, out_dir / f"{prefix}-aggregate.csv")
    return SweepResult(curves=curves, skipped=skipped, failed=failed)
