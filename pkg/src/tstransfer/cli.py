"""Command-line entry point.

Commands: gen-corpus, gen-data, pretrain, tune-instruct, finetune,
sweep, analyze, plot. Exit codes: 0 success, 2 configuration error,
3 runtime failure. Flags override config-file values which override
defaults; --dry-run prints the resolved config and touches nothing.
"""

from __future__ import annotations

import argparse
import dataclasses
import glob as globmod
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import finetune as FT
from . import pretrain as PT
from .checkpoint import load_checkpoint, save_checkpoint
from .config import (
    ExperimentConfig,
    config_digest,
    load_config,
    resolved_dict,
)
from .data import generate_corpus, generate_series, load_csv, split_series, write_series_csv
from .errors import (
    CheckpointFormatError,
    ConfigError,
    ContractError,
    DivergenceError,
)
from .plotting import plot_curves, plot_difference, plot_transfer
from .transfer import (
    LossCurve,
    effective_transfer,
    loss_difference,
    mean_curve,
    read_curve_csv,
    read_difference_csv,
    read_transfer_csv,
    write_curve_csv,
    write_difference_csv,
    write_transfer_csv,
)

log = logging.getLogger("tstransfer")


def _resolve_config(args) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    if args.seed is not None:
        cfg = dataclasses.replace(cfg, train=dataclasses.replace(cfg.train, seed=args.seed))
    if args.out is not None:
        cfg = dataclasses.replace(cfg, out_dir=args.out)
    return cfg


def _dry_run(cfg: ExperimentConfig) -> int:
    print(json.dumps(resolved_dict(cfg), indent=2, sort_keys=True))
    return 0


def _corpus_text(cfg: ExperimentConfig) -> str:
    if cfg.corpus.path and Path(cfg.corpus.path).exists():
        return Path(cfg.corpus.path).read_text()
    return generate_corpus(cfg.corpus.size_bytes, cfg.corpus.seed)


def _load_series(cfg: ExperimentConfig) -> tuple[list[np.ndarray], list[np.ndarray]]:
    if cfg.data.csv_paths:
        series, _ = load_csv(cfg.data.csv_paths)
        series = [s for s in series if s.size]
    else:
        series = generate_series(cfg.data.synthetic)
    return split_series(series, cfg.data.val_fraction)


# ---------------------------------------------------------------------------
# commands


def cmd_gen_corpus(args) -> int:
    cfg = _resolve_config(args)
    if args.dry_run:
        return _dry_run(cfg)
    target = Path(cfg.corpus.path) if cfg.corpus.path else Path(cfg.out_dir) / "corpus.txt"
    text = generate_corpus(cfg.corpus.size_bytes, cfg.corpus.seed)
    target.parent.mkdir(parents=True, exist_ok=True)
    target.write_text(text)
    print(f"wrote {len(text)} bytes to {target}")
    return 0


def cmd_gen_data(args) -> int:
    cfg = _resolve_config(args)
    if args.dry_run:
        return _dry_run(cfg)
    out = Path(cfg.out_dir) / "data"
    series = generate_series(cfg.data.synthetic)
    for i, s in enumerate(series):
        write_series_csv(s, out / f"series_{i:04d}.csv")
    print(f"wrote {len(series)} series to {out}")
    return 0


def cmd_pretrain(args) -> int:
    cfg = _resolve_config(args)
    if args.dry_run:
        return _dry_run(cfg)
    out = Path(cfg.out_dir)
    run_id = f"pretrain-language-s{cfg.train.seed}"
    params, curve = PT.pretrain_language(
        cfg.model_config(),
        _corpus_text(cfg),
        cfg.pretrain.steps,
        cfg.pretrain.pretrain_config(),
        cfg.train.seed,
        run_id=run_id,
    )
    save_checkpoint(params, out / "language.ckpt")
    if len(curve):
        write_curve_csv(curve, out / f"{run_id}.losscurve.csv")
        print(f"{run_id}: loss {curve.losses[0]:.4f} -> {curve.losses[-1]:.4f}")
    print(f"checkpoint: {out / 'language.ckpt'}")
    return 0


def cmd_tune_instruct(args) -> int:
    cfg = _resolve_config(args)
    if args.dry_run:
        return _dry_run(cfg)
    out = Path(cfg.out_dir)
    source = Path(cfg.checkpoint) if cfg.checkpoint else out / "language.ckpt"
    if not source.exists():
        raise ConfigError(f"language checkpoint not found: {source}")
    run_id = f"tune-instruct-s{cfg.train.seed}"
    params, curve = PT.tune_instruction_analog(
        load_checkpoint(source),
        cfg.model_config(),
        cfg.pretrain.instruct_steps,
        cfg.pretrain.pretrain_config(),
        cfg.train.seed,
        run_id=run_id,
    )
    save_checkpoint(params, out / "instruct.ckpt")
    if len(curve):
        write_curve_csv(curve, out / f"{run_id}.losscurve.csv")
        print(f"{run_id}: loss {curve.losses[0]:.4f} -> {curve.losses[-1]:.4f}")
    print(f"checkpoint: {out / 'instruct.ckpt'}")
    return 0


def _finetune_source(cfg: ExperimentConfig) -> str | Path:
    if cfg.regime == "random":
        if cfg.checkpoint:
            log.warning("regime=random ignores checkpoint path %s", cfg.checkpoint)
        return "random"
    if not cfg.checkpoint:
        raise ConfigError(f"regime={cfg.regime} requires a checkpoint path")
    path = Path(cfg.checkpoint)
    if not path.exists():
        raise ConfigError(f"checkpoint not found: {path}")
    return path


def cmd_finetune(args) -> int:
    cfg = _resolve_config(args)
    if args.dry_run:
        return _dry_run(cfg)
    source = _finetune_source(cfg)
    train_series, val_series = _load_series(cfg)
    curve, _ = FT.finetune_run(
        source,
        cfg.model_config(),
        cfg.tokenizer.kind,
        cfg.tokenizer.bin_spec(),
        cfg.tokenizer.lag_set(),
        cfg.train,
        train_series,
        val_series,
        run_id=cfg.run_id(),
        data_seed=cfg.data.data_seed,
        out_dir=Path(cfg.out_dir),
    )
    print(f"{cfg.run_id()}: zero-shot {curve.losses[0]:.4f}, final {curve.losses[-1]:.4f}")
    return 0


def cmd_sweep(args) -> int:
    cfg = _resolve_config(args)
    if args.dry_run:
        return _dry_run(cfg)
    source = _finetune_source(cfg)
    train_series, val_series = _load_series(cfg)
    grid = FT.SweepGrid(
        lrs=cfg.sweep.lrs,
        batch_sizes=cfg.sweep.batch_sizes,
        weight_decays=cfg.sweep.weight_decays,
        warmup_fractions=cfg.sweep.warmup_fractions,
    )
    out = Path(cfg.out_dir)

    def runner(combo: dict, run_id: str) -> LossCurve:
        train_cfg = dataclasses.replace(cfg.train, **combo)
        curve, _ = FT.finetune_run(
            source,
            cfg.model_config(),
            cfg.tokenizer.kind,
            cfg.tokenizer.bin_spec(),
            cfg.tokenizer.lag_set(),
            train_cfg,
            train_series,
            val_series,
            run_id=run_id,
            data_seed=cfg.data.data_seed,
            out_dir=out,
        )
        return curve

    result = FT.sweep(grid, runner, out, prefix=cfg.run_id())
    print(
        f"sweep: {len(result.curves)} curves "
        f"({len(result.skipped)} resumed, {len(result.failed)} failed)"
    )
    return 0 if not result.failed else 3


def _read_side(patterns: list[str], side: str) -> list[LossCurve]:
    files: list[str] = []
    for pat in patterns:
        files.extend(globmod.glob(pat))
    files = sorted(set(files))
    if not files:
        raise ConfigError(f"no {side} curve files match {patterns}")
    curves = []
    for f in files:
        curve = read_curve_csv(f)
        meta_path = Path(str(f).removesuffix(".losscurve.csv") + ".meta.json")
        if meta_path.exists():
            meta = json.loads(meta_path.read_text())
            curve.meta["val_set_hash"] = meta.get("val_set_hash")
        curves.append(curve)
    hashes = {c.meta.get("val_set_hash") for c in curves} - {None}
    if len(hashes) > 1:
        raise ConfigError(
            f"{side} curves were evaluated on different validation sets: {sorted(hashes)}"
        )
    return curves


def cmd_analyze(args) -> int:
    cfg = _resolve_config(args)
    if args.dry_run:
        return _dry_run(cfg)
    random_curves = _read_side(args.random, "random")
    pretrained_curves = _read_side(args.pretrained, "pretrained")
    mean_r = mean_curve(random_curves, run_id="random-mean")
    mean_p = mean_curve(pretrained_curves, run_id="pretrained-mean")
    levels = None
    if args.levels:
        levels = np.asarray([float(v) for v in args.levels.split(",")])
    try:
        report = effective_transfer(mean_r, mean_p, levels=levels)
    except ContractError as exc:
        raise ConfigError(str(exc)) from None
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_curve_csv(mean_r, out / "random-mean.losscurve.csv")
    write_curve_csv(mean_p, out / "pretrained-mean.losscurve.csv")
    write_transfer_csv(report, out / "transfer_report.csv")
    tokens, diffs = loss_difference(mean_r, mean_p)
    write_difference_csv(tokens, diffs, out / "loss_difference.csv")
    n_asym = sum(r.asymptote for r in report.rows)
    defined = [r.effective_transfer for r in report.rows if r.effective_transfer is not None]
    msg = f"transfer report: {len(report.rows)} levels, {n_asym} asymptotic"
    if defined:
        msg += f", D_T range [{min(defined):.4g}, {max(defined):.4g}]"
    if report.diagnostic:
        msg += f" ({report.diagnostic})"
    print(msg)
    print(f"wrote {out / 'transfer_report.csv'}")
    return 0


def cmd_plot(args) -> int:
    cfg = _resolve_config(args)
    if args.dry_run:
        return _dry_run(cfg)
    if not args.inputs:
        raise ConfigError("plot: no input files given")
    for f in args.inputs:
        if not Path(f).exists():
            raise ConfigError(f"plot input not found: {f}")
    out_file = Path(args.out_file) if args.out_file else Path(cfg.out_dir) / f"{args.kind}.svg"
    stamp = not args.no_timestamp
    if args.kind == "curves":
        plot_curves([read_curve_csv(f) for f in args.inputs], out_file, timestamp=stamp)
    elif args.kind == "difference":
        tokens, diffs = read_difference_csv(args.inputs[0])
        plot_difference(tokens, diffs, out_file, timestamp=stamp)
    else:
        plot_transfer(read_transfer_csv(args.inputs[0]), out_file, timestamp=stamp)
    print(f"wrote {out_file}")
    return 0


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tstransfer",
        description="Language-to-time-series transfer experiments at desk scale.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="JSON experiment config")
        p.add_argument("--seed", type=int, default=None, help="override train.seed")
        p.add_argument("--out", default=None, help="override output directory")
        p.add_argument("--dry-run", action="store_true", help="print resolved config and exit")
        p.add_argument("--no-timestamp", action="store_true", help="omit timestamps in SVG output")

    for name, fn, descr in (
        ("gen-corpus", cmd_gen_corpus, "write the deterministic synthetic text corpus"),
        ("gen-data", cmd_gen_data, "write synthetic series as CSV files"),
        ("pretrain", cmd_pretrain, "span-corruption pretraining -> language checkpoint"),
        ("tune-instruct", cmd_tune_instruct, "instruction-analog tuning on language weights"),
        ("finetune", cmd_finetune, "fine-tune on time series per the configured regime"),
        ("sweep", cmd_sweep, "run the hyperparameter sweep grid (resumable)"),
        ("analyze", cmd_analyze, "effective-transfer report from loss curves"),
        ("plot", cmd_plot, "render curves/difference/transfer SVG plots"),
    ):
        p = sub.add_parser(name, help=descr)
        common(p)
        p.set_defaults(func=fn)
        if name == "analyze":
            p.add_argument("--random", nargs="+", required=True, help="random-init curve globs")
            p.add_argument("--pretrained", nargs="+", required=True, help="pretrained curve globs")
            p.add_argument("--levels", default=None, help="comma-separated loss levels")
        if name == "plot":
            p.add_argument("--kind", choices=("curves", "difference", "transfer"), required=True)
            p.add_argument("--out-file", default=None)
            p.add_argument("inputs", nargs="*", help="input CSV files")
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (ContractError, CheckpointFormatError, DivergenceError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
