"""Command-line entry point: ``dcmsim {generate,train,run,eval,plot,report}``.

Exit codes: 0 success, 1 configuration error, 2 some pairs failed.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .experiment import (
    EVAL_COLUMNS,
    ConfigError,
    ExperimentConfig,
    atomic_write_text,
    csv_text,
    dump_config,
    load_config,
    parse_language,
    prepare_pair,
    read_csv,
    reevaluate,
    run_experiment,
    run_pair,
)
from .language import PRESETS, write_corpus, write_lexicon
from .plotting import SchemaError, plot_preferences
from .report import format_table, summary_table

EXIT_OK, EXIT_CONFIG, EXIT_PARTIAL = 0, 1, 2


def _config_from_args(args) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    over = {}
    if getattr(args, "preset", None):
        over["language"] = parse_language(args.preset)
    if getattr(args, "seed", None) is not None:
        over["base_seed"] = args.seed
    if getattr(args, "pairs", None) is not None:
        over["n_pairs"] = args.pairs
    if getattr(args, "jobs", None) is not None:
        over["jobs"] = args.jobs
    if getattr(args, "out", None):
        over["out"] = args.out
    return cfg.replace(**over) if over else cfg


def _common(p: argparse.ArgumentParser, out_required=False):
    p.add_argument("--config", type=Path, help="YAML config file")
    p.add_argument("--seed", type=int, help="base seed")
    p.add_argument("--pairs", type=int, help="number of agent pairs")
    p.add_argument("--preset", choices=sorted(PRESETS), help="language preset")
    p.add_argument("--jobs", type=int, help="worker processes")
    p.add_argument("--out", type=str, required=out_required, help="output directory")


def cmd_generate(args) -> int:
    cfg = _config_from_args(args)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    write_lexicon(out / "lexicon.tsv", cfg.inventory)
    for pid in range(cfg.n_pairs):
        data = prepare_pair(cfg, pid)
        for k in range(2):
            write_corpus(out / f"pair{pid:03d}_agent{k}_sl.tsv", data.sl_corpora[k])
            write_corpus(out / f"pair{pid:03d}_agent{k}_test.tsv", data.test_corpora[k])
    print(f"wrote corpora for {cfg.n_pairs} pair(s) to {out}")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _config_from_args(args)
    atomic_write_text(Path(cfg.out) / "config.yaml", dump_config(cfg))
    status = run_pair(cfg, args.pair_id)
    print(f"pair {args.pair_id}: {status['status']} in {status['wall_clock_s']}s -> {cfg.out}")
    return EXIT_OK


def cmd_run(args) -> int:
    cfg = _config_from_args(args)
    manifest = run_experiment(cfg, resume=not args.no_resume)
    print(f"{len(manifest.completed)}/{cfg.n_pairs} pairs completed in {manifest.wall_clock_s}s -> {cfg.out}")
    if manifest.failed:
        print(f"failed pairs: {manifest.failed}", file=sys.stderr)
        return EXIT_PARTIAL
    return EXIT_OK


def cmd_eval(args) -> int:
    rows = reevaluate(args.run_dir)
    target = Path(args.output or Path(args.run_dir) / "eval_recomputed.csv")
    atomic_write_text(target, csv_text(EVAL_COLUMNS, rows))
    print(f"wrote {len(rows)} rows to {target}")
    return EXIT_OK


def cmd_plot(args) -> int:
    run_dir = Path(args.run_dir)
    rows = read_csv(args.eval_csv or run_dir / "eval.csv")
    acc_path = Path(args.accuracy_csv or run_dir / "accuracy.csv")
    acc = read_csv(acc_path) if acc_path.exists() else None
    spec = None
    cfg_path = run_dir / "config.yaml"
    if cfg_path.exists():
        spec = load_config(cfg_path).language
    for p in plot_preferences(rows, Path(args.out or run_dir / "plots"), spec, acc):
        print(p)
    return EXIT_OK


def cmd_report(args) -> int:
    rows = []
    for d in args.run_dirs:
        rows += read_csv(Path(d) / "eval.csv")
    summary = summary_table(rows)
    text = format_table(summary)
    print(text)
    if args.out:
        out = Path(args.out)
        cols = list(summary[0].keys()) if summary else []
        atomic_write_text(out / "report.csv", csv_text(cols, summary))
        atomic_write_text(out / "report.txt", text + "\n")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="dcmsim", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="write lexicon and per-agent corpora")
    _common(p)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("train", help="SL + RL for one pair")
    _common(p)
    p.add_argument("--pair-id", type=int, default=0)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("run", help="full sweep over all pairs")
    _common(p)
    p.add_argument("--no-resume", action="store_true", help="recompute completed pairs")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("eval", help="re-evaluate saved checkpoints of a run")
    p.add_argument("run_dir")
    p.add_argument("--output", help="CSV path (default: RUN/eval_recomputed.csv)")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("plot", help="SVG figures from a run's CSVs")
    p.add_argument("run_dir")
    p.add_argument("--eval-csv")
    p.add_argument("--accuracy-csv")
    p.add_argument("--out")
    p.set_defaults(func=cmd_plot)

    p = sub.add_parser("report", help="aggregate statistics table")
    p.add_argument("run_dirs", nargs="+")
    p.add_argument("--out")
    p.set_defaults(func=cmd_report)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(levelname)s %(message)s")
    try:
        return args.func(args)
    except (ConfigError, SchemaError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
