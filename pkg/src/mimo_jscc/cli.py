"""Command-line entry points for the experiment pipeline.

Every subcommand takes a config file and a working directory; stages write
their artifacts there and later stages pick them up.  Exit code 0 means the
run completed with all embedded invariant checks passing.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import experiments
from .config import ConfigError, build_config, config_hash, default_config_values, load_config
from .metrics import read_metrics_csv


def _add_common(parser):
    parser.add_argument("--config", type=Path, default=None,
                        help="config file (defaults to the built-in desk-scale setup)")
    parser.add_argument("--out-dir", type=Path, default=Path("runs/desk"),
                        help="artifact and output directory")
    parser.add_argument("--seeds", type=int, nargs="+", default=None,
                        help="override the config's seed list")
    parser.add_argument("--force", action="store_true",
                        help="recompute artifacts even if present")


def _load(args):
    if args.config is None:
        values = default_config_values()
        cfg = build_config(values)
    else:
        cfg, values = load_config(args.config)
    if args.seeds:
        values["seeds"] = tuple(args.seeds)
        cfg = build_config(values)
    return cfg, values


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="mimo-jscc",
                                     description="Learned image transmission over MIMO "
                                                 "with adaptive CSI feedback")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in (
        ("fit-quantizer", "fit Lloyd-Max codebooks for the feedback channel"),
        ("train-codec", "train codecs for the configured channels"),
        ("label", "label train/test sets with true per-image PSNR"),
        ("train-evaluator", "train the quality evaluator on train labels"),
        ("calibrate", "calibrate the per-bit-depth degradation table"),
        ("sweep", "run a figure sweep and write its CSV"),
        ("report", "summarize sweep CSVs in the output directory"),
    ):
        p = sub.add_parser(name, help=help_text)
        _add_common(p)
        if name == "sweep":
            p.add_argument("--figure", choices=("4", "5", "6"), required=True)

    args = parser.parse_args(argv)
    try:
        cfg, values = _load(args)
    except (ConfigError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2

    try:
        return _dispatch(args, cfg, values)
    except experiments.InvariantViolation as exc:
        print(f"invariant violation: {exc}", file=sys.stderr)
        return 1


def _dispatch(args, cfg, values) -> int:
    out_dir = args.out_dir
    out_dir.mkdir(parents=True, exist_ok=True)
    chash = config_hash(values)

    if args.command == "fit-quantizer":
        books = experiments.stage_fit_quantizers(cfg, out_dir, force=args.force)
        for b, book in sorted(books.items()):
            print(f"codebook b={b}: {book.num_levels} levels ({book.fitted_on})")
        return 0

    if args.command == "train-codec":
        train_images, _ = experiments.build_datasets(cfg)
        channels = [experiments.antenna_channel(cfg, n) for n in cfg.fig4_antennas]
        channels.append(cfg.feedback_channel)
        for channel in channels:
            experiments.stage_train_codec(cfg, out_dir, channel, train_images,
                                          force=args.force)
            print(f"codec ready for {channel.num_rx}x{channel.num_tx}")
        return 0

    if args.command == "label":
        train_images, test_images = experiments.build_datasets(cfg)
        codec = experiments.stage_train_codec(cfg, out_dir, cfg.feedback_channel,
                                              train_images, force=False)
        for name, images in (("train", train_images), ("test", test_images)):
            labeled = experiments.stage_label(cfg, out_dir, codec, images, name,
                                              force=args.force)
            values_arr = np.array([item.true_psnr_db for item in labeled])
            print(f"labels_{name}: {len(labeled)} images, "
                  f"PSNR {values_arr.min():.1f}..{values_arr.max():.1f} dB")
        return 0

    if args.command == "train-evaluator":
        train_images, _ = experiments.build_datasets(cfg)
        codec = experiments.stage_train_codec(cfg, out_dir, cfg.feedback_channel,
                                              train_images, force=False)
        labeled = experiments.stage_label(cfg, out_dir, codec, train_images, "train")
        experiments.stage_train_evaluator(cfg, out_dir, labeled, force=args.force)
        print("evaluator ready")
        return 0

    if args.command == "calibrate":
        train_images, _ = experiments.build_datasets(cfg)
        codec = experiments.stage_train_codec(cfg, out_dir, cfg.feedback_channel,
                                              train_images, force=False)
        books = experiments.stage_fit_quantizers(cfg, out_dir)
        table = experiments.stage_calibrate(cfg, out_dir, codec, train_images, books,
                                            force=args.force)
        for b in sorted(table, reverse=True):
            print(f"penalty({b} bits) = {table[b]:.4f} dB")
        return 0

    if args.command == "sweep":
        which = f"fig{args.figure}"
        records = experiments.run_figure_sweep(cfg, values, which, out_dir,
                                               force=args.force)
        print(f"{which}: {len(records)} rows -> {out_dir / (which + '.csv')} "
              f"(config {chash})")
        return 0

    if args.command == "report":
        found = False
        for fig in ("fig4", "fig5", "fig6"):
            path = out_dir / f"{fig}.csv"
            if not path.exists():
                continue
            found = True
            records = read_metrics_csv(path)
            print(f"== {fig} ({len(records)} rows, config {records[0].config_hash})")
            _summarize(fig, records)
        if not found:
            print(f"no sweep CSVs under {out_dir}", file=sys.stderr)
            return 2
        return 0

    raise AssertionError(args.command)


def _summarize(fig: str, records) -> None:
    if fig == "fig4":
        keys = sorted({(r.policy, r.snr_db) for r in records})
        for policy, snr in keys:
            vals = [r.mean_psnr_db for r in records if (r.policy, r.snr_db) == (policy, snr)]
            print(f"  {policy:>18} snr {snr:+6.1f} dB: PSNR {np.mean(vals):6.2f} dB")
    elif fig == "fig5":
        thresholds = sorted({r.threshold_db for r in records})
        policies = sorted({r.policy for r in records})
        for policy in policies:
            ratios = []
            for t in thresholds:
                vals = [r.success_ratio for r in records
                        if r.policy == policy and r.threshold_db == t]
                ratios.append(np.mean(vals))
            joined = " ".join(f"{v:.3f}" for v in ratios)
            print(f"  {policy:>18}: {joined}")
    else:
        keys = sorted({(r.threshold_db, r.option_bits) for r in records})
        for t, opts in keys:
            vals = [(r.total_bits, r.success_ratio) for r in records
                    if (r.threshold_db, r.option_bits) == (t, opts)]
            total = np.mean([v[0] for v in vals])
            ratio = np.mean([v[1] for v in vals])
            print(f"  threshold {t:5.2f} options {list(opts)!s:>10}: "
                  f"total bits {total:9.0f}, success {ratio:.3f}")


if __name__ == "__main__":
    sys.exit(main())
