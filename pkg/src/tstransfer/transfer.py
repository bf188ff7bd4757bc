"""Loss-curve analysis: envelopes, inverse queries, effective data transfer.

Raw validation curves are noisy, so inversion works on the running
minimum (monotone envelope). Between grid points, token counts
interpolate linearly in (log tokens, loss) space, matching how the
curves are read on log-token axes. A loss level below a curve's minimum
has no inverse: that is the convergence-asymptote case, represented as
None rather than infinity.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ContractError

log = logging.getLogger(__name__)

CURVE_HEADER = ["run_id", "seed", "tokens_seen", "val_loss"]
REPORT_HEADER = ["loss_level", "d_random", "d_pretrained", "effective_transfer", "asymptote"]


@dataclass
class LossCurve:
    tokens: np.ndarray  # float64, strictly increasing
    losses: np.ndarray  # float64, finite
    run_id: str = ""
    seed: int | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.tokens = np.asarray(self.tokens, dtype=np.float64)
        self.losses = np.asarray(self.losses, dtype=np.float64)
        if self.tokens.shape != self.losses.shape or self.tokens.ndim != 1:
            raise ContractError("tokens and losses must be 1-d and the same length")
        if self.tokens.size and not np.all(np.diff(self.tokens) > 0):
            raise ContractError("tokens_seen must be strictly increasing")
        if not np.all(np.isfinite(self.losses)):
            raise ContractError("losses must be finite")

    def __len__(self) -> int:
        return int(self.tokens.size)


def write_curve_csv(curve: LossCurve, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CURVE_HEADER)
        seed = 0 if curve.seed is None else curve.seed
        for d, loss in zip(curve.tokens, curve.losses):
            w.writerow([curve.run_id, seed, int(d), f"{loss:.8g}"])


def read_curve_csv(path) -> LossCurve:
    path = Path(path)
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != CURVE_HEADER:
            raise ContractError(f"{path}: expected header {CURVE_HEADER}, got {header}")
        run_id, seed = "", None
        tokens, losses = [], []
        for row in reader:
            run_id, seed = row[0], int(row[1])
            tokens.append(float(row[2]))
            losses.append(float(row[3]))
    return LossCurve(np.asarray(tokens), np.asarray(losses), run_id=run_id, seed=seed)


# ---------------------------------------------------------------------------
# envelope and inversion


def monotone_envelope(curve: LossCurve) -> LossCurve:
    """Running minimum; idempotent."""
    return LossCurve(
        curve.tokens.copy(),
        np.minimum.accumulate(curve.losses),
        run_id=curve.run_id,
        seed=curve.seed,
        meta=dict(curve.meta),
    )


def _is_monotone(curve: LossCurve) -> bool:
    return bool(np.all(np.diff(curve.losses) <= 0))


def inverse_query(curve: LossCurve, level: float) -> float | None:
    """Smallest token count at which the curve reaches ``level``.

    None when the level is below the curve's minimum (asymptote).
    Segments interpolate in (log tokens, loss); a segment that starts at
    zero tokens falls back to linear interpolation in tokens.
    """
    if len(curve) < 2:
        raise ContractError("inverse query needs a curve with at least 2 points")
    if not _is_monotone(curve):
        raise ContractError("inverse_query requires an envelope (non-increasing) curve")
    losses, tokens = curve.losses, curve.tokens
    if level < losses[-1]:
        return None
    if level >= losses[0]:
        return float(tokens[0])
    i = int(np.argmax(losses <= level))  # first index at or below the level
    if losses[i] == level:
        return float(tokens[i])
    d0, d1 = tokens[i - 1], tokens[i]
    l0, l1 = losses[i - 1], losses[i]
    frac = (l0 - level) / (l0 - l1)
    if d0 <= 0.0:
        return float(d0 + frac * (d1 - d0))
    return float(math.exp(math.log(d0) + frac * (math.log(d1) - math.log(d0))))


def curve_value(curve: LossCurve, d: float) -> float:
    """Loss at token count ``d`` (log-linear between points, clamped ends)."""
    tokens, losses = curve.tokens, curve.losses
    if d <= tokens[0]:
        return float(losses[0])
    if d >= tokens[-1]:
        return float(losses[-1])
    i = int(np.searchsorted(tokens, d, side="right"))
    d0, d1 = tokens[i - 1], tokens[i]
    l0, l1 = losses[i - 1], losses[i]
    if d == d0:
        return float(l0)
    if d0 <= 0.0:
        frac = (d - d0) / (d1 - d0)
    else:
        frac = (math.log(d) - math.log(d0)) / (math.log(d1) - math.log(d0))
    return float(l0 + frac * (l1 - l0))


# ---------------------------------------------------------------------------
# effective transfer


@dataclass
class TransferRow:
    level: float
    d_random: float | None
    d_pretrained: float | None
    effective_transfer: float | None
    asymptote: bool


@dataclass
class TransferReport:
    rows: list[TransferRow]
    meta: dict = field(default_factory=dict)
    diagnostic: str = ""


def default_levels(curve_r: LossCurve, curve_p: LossCurve, n: int = 64) -> np.ndarray:
    """Log-spaced levels from both curves' reachable band, high to low."""
    lo = max(float(curve_r.losses.min()), float(curve_p.losses.min()))
    hi = min(float(curve_r.losses[0]), float(curve_p.losses[0]))
    if not (lo < hi) or lo <= 0:
        return np.empty(0)
    return np.geomspace(hi, lo, n)


def effective_transfer(
    curve_r: LossCurve,
    curve_p: LossCurve,
    levels=None,
) -> TransferReport:
    """D_T(level) = tokens the random init needs minus tokens the pretrained needs.

    Positive values mean the pretrained initialization saved that much data.
    """
    hash_r = curve_r.meta.get("val_set_hash")
    hash_p = curve_p.meta.get("val_set_hash")
    if hash_r is not None and hash_p is not None and hash_r != hash_p:
        raise ContractError(
            f"curves were evaluated on different validation sets: {hash_r} != {hash_p}"
        )
    env_r = monotone_envelope(curve_r)
    env_p = monotone_envelope(curve_p)
    meta = {
        "run_random": curve_r.run_id,
        "run_pretrained": curve_p.run_id,
    }
    if levels is None:
        levels = default_levels(env_r, env_p)
        if levels.size == 0:
            return TransferReport(
                rows=[],
                meta=meta,
                diagnostic="loss ranges do not overlap; no transfer levels to evaluate",
            )
    rows = []
    for level in np.asarray(levels, dtype=np.float64):
        d_r = inverse_query(env_r, float(level))
        d_p = inverse_query(env_p, float(level))
        dt = d_r - d_p if (d_r is not None and d_p is not None) else None
        rows.append(
            TransferRow(
                level=float(level),
                d_random=d_r,
                d_pretrained=d_p,
                effective_transfer=dt,
                asymptote=(d_r is None and d_p is not None),
            )
        )
    return TransferReport(rows=rows, meta=meta)


def write_transfer_csv(report: TransferReport, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)

    def cell(v):
        return "" if v is None else f"{v:.8g}"

    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(REPORT_HEADER)
        for r in report.rows:
            w.writerow(
                [
                    f"{r.level:.8g}",
                    cell(r.d_random),
                    cell(r.d_pretrained),
                    cell(r.effective_transfer),
                    "true" if r.asymptote else "false",
                ]
            )


def read_transfer_csv(path) -> TransferReport:
    rows = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header != REPORT_HEADER:
            raise ContractError(f"{path}: expected header {REPORT_HEADER}, got {header}")

        def opt(s):
            return None if s == "" else float(s)

        for raw in reader:
            rows.append(
                TransferRow(
                    level=float(raw[0]),
                    d_random=opt(raw[1]),
                    d_pretrained=opt(raw[2]),
                    effective_transfer=opt(raw[3]),
                    asymptote=raw[4] == "true",
                )
            )
    return TransferReport(rows=rows)


# ---------------------------------------------------------------------------
# loss differences and seed aggregation


def loss_difference(curve_a: LossCurve, curve_b: LossCurve) -> tuple[np.ndarray, np.ndarray]:
    """(tokens, loss_a - loss_b) on curve_a's grid restricted to the overlap."""
    lo = max(curve_a.tokens[0], curve_b.tokens[0])
    hi = min(curve_a.tokens[-1], curve_b.tokens[-1])
    keep = (curve_a.tokens >= lo) & (curve_a.tokens <= hi)
    if not keep.any():
        log.warning(
            "loss_difference: token ranges of %s and %s do not overlap",
            curve_a.run_id or "curve_a",
            curve_b.run_id or "curve_b",
        )
        return np.empty(0), np.empty(0)
    grid = curve_a.tokens[keep]
    diffs = np.asarray(
        [la - curve_value(curve_b, float(d)) for d, la in zip(grid, curve_a.losses[keep])]
    )
    return grid, diffs


def write_difference_csv(tokens: np.ndarray, diffs: np.ndarray, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["tokens_seen", "loss_difference"])
        for d, v in zip(tokens, diffs):
            w.writerow([int(d), f"{v:.8g}"])


def read_difference_csv(path) -> tuple[np.ndarray, np.ndarray]:
    tokens, diffs = [], []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header != ["tokens_seen", "loss_difference"]:
            raise ContractError(f"{path}: unexpected header {header}")
        for row in reader:
            tokens.append(float(row[0]))
            diffs.append(float(row[1]))
    return np.asarray(tokens), np.asarray(diffs)


def aggregate_seeds(curves: list[LossCurve], mode: str = "mean") -> dict[str, np.ndarray]:
    """Union-grid mean (and population std) over curves in their common range."""
    if not curves:
        raise ContractError("nothing to aggregate")
    if mode not in ("mean", "mean_std"):
        raise ContractError(f"unknown aggregation mode {mode!r}")
    lo = max(float(c.tokens[0]) for c in curves)
    hi = min(float(c.tokens[-1]) for c in curves)
    if not lo <= hi:
        raise ContractError("curves have disjoint token ranges")
    grid = np.unique(np.concatenate([c.tokens for c in curves]))
    grid = grid[(grid >= lo) & (grid <= hi)]
    values = np.asarray([[curve_value(c, float(d)) for d in grid] for c in curves])
    out = {"tokens": grid, "mean": values.mean(axis=0)}
    if mode == "mean_std":
        out["std"] = values.std(axis=0)
    return out


def mean_curve(curves: list[LossCurve], run_id: str = "aggregate") -> LossCurve:
    agg = aggregate_seeds(curves, mode="mean")
    meta = {}
    hashes = {c.meta.get("val_set_hash") for c in curves}
    if len(hashes) == 1 and None not in hashes:
        meta["val_set_hash"] = hashes.pop()
    return LossCurve(agg["tokens"], agg["mean"], run_id=run_id, meta=meta)


def write_aggregate_csv(agg: dict[str, np.ndarray], path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        if "std" in agg:
            w.writerow(["tokens_seen", "mean_val_loss", "std_val_loss"])
            for d, m, s in zip(agg["tokens"], agg["mean"], agg["std"]):
                w.writerow([int(d), f"{m:.8g}", f"{s:.8g}"])
        else:
            w.writerow(["tokens_seen", "mean_val_loss"])
            for d, m in zip(agg["tokens"], agg["mean"]):
                w.writerow([int(d), f"{m:.8g}"])
