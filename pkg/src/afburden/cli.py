"""Command-line entry point: ``afburden <subcommand> ...``.

Exit codes: 0 success, 1 validation or usage error, 2 I/O or parse error.
Log verbosity comes from the ``AFBURDEN_LOG_LEVEL`` environment variable.
"""
from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

from . import pipeline
from .config import RunConfig
from .errors import ParseError, ValidationError
from .ingest import mit_to_record, parse_mit_annotations, write_canonical
from .synth import DEFAULT_AUX, SynthConfig, generate_corpus, write_corpus

logger = logging.getLogger("afburden")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits with status 2 on bad usage; we reserve 2 for I/O failures
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _sizes(text: str) -> list[int]:
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="afburden", description="AF burden estimation from RR intervals.")
    p.add_argument("--config", type=Path, help="JSON file overriding the run configuration")
    p.add_argument("--seed", type=int, help="override the configured seed")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("synth", help="generate a synthetic corpus")
    s.add_argument("--n", type=int, required=True, help="number of records")
    s.add_argument("--out", type=Path, default=Path("corpus"))
    s.add_argument("--duration", type=float, default=SynthConfig().duration,
                   help="record length in seconds")
    s.add_argument("--no-aux", action="store_true", help="omit the second beat stream")

    s = sub.add_parser("convert", help="MIT annotation file to canonical CSV")
    s.add_argument("annotations", type=Path)
    s.add_argument("--fs", type=float, required=True, help="sampling frequency in Hz")
    s.add_argument("--out", type=Path, required=True)
    s.add_argument("--patient-id")
    s.add_argument("--reviewed", action="store_true")

    s = sub.add_parser("qc", help="window, gate and split a directory of records")
    s.add_argument("records", type=Path)
    s.add_argument("--workdir", type=Path, default=Path("work"))

    s = sub.add_parser("features", help="engineered features for every kept window")
    s.add_argument("--workdir", type=Path, default=Path("work"))

    s = sub.add_parser("train", help="fit a model on the training split")
    s.add_argument("--model", choices=pipeline.MODEL_KINDS, required=True)
    s.add_argument("--workdir", type=Path, default=Path("work"))
    s.add_argument("--out", type=Path, help="model directory (default workdir/models/<model>)")

    s = sub.add_parser("predict", help="per-window AF probabilities")
    s.add_argument("--model", choices=pipeline.MODEL_KINDS, required=True)
    s.add_argument("--workdir", type=Path, default=Path("work"))
    s.add_argument("--model-dir", type=Path)
    s.add_argument("--split", choices=("test", "train", "all"), default="test")
    s.add_argument("--out", type=Path)

    s = sub.add_parser("burden", help="per-patient burden from predictions")
    s.add_argument("predictions", type=Path)
    s.add_argument("--out", type=Path, required=True)

    s = sub.add_parser("eval", help="window metrics, |E_AF| summaries and FP table")
    s.add_argument("predictions", type=Path)
    s.add_argument("--burden", type=Path, help="burden CSV (computed if omitted)")
    s.add_argument("--out", type=Path, required=True, help="output directory")

    s = sub.add_parser("learning-curve", help="test F1 against training-set size")
    s.add_argument("--model", choices=pipeline.MODEL_KINDS[:4], required=True)
    s.add_argument("--workdir", type=Path, default=Path("work"))
    s.add_argument("--sizes", type=_sizes, required=True, help="e.g. 10,20,40")
    s.add_argument("--out", type=Path, required=True)
    return p


def load_config(args) -> RunConfig:
    cfg = RunConfig.load(args.config) if args.config else RunConfig()
    if args.seed is not None:
        cfg = RunConfig.from_dict({**cfg.to_dict(), "seed": args.seed})
    return cfg


def _predictions_path(args) -> Path:
    return args.out or args.workdir / f"predictions_{args.model}_{args.split}.csv"


def cmd_synth(args, cfg):
    base = SynthConfig(duration=args.duration)
    corpus = generate_corpus(args.n, cfg.seed, base, aux=None if args.no_aux else DEFAULT_AUX)
    write_corpus(corpus, args.out)
    logger.info("wrote %d records to %s", args.n, args.out)


def cmd_convert(args, cfg):
    events = parse_mit_annotations(args.annotations, args.fs)
    pid = args.patient_id or args.annotations.stem
    write_canonical(mit_to_record(events, args.fs, pid, reviewed=args.reviewed), args.out)


def cmd_qc(args, cfg):
    result = pipeline.run_qc(pipeline.load_records(args.records), cfg)
    pipeline.write_qc(result, args.workdir)


def cmd_features(args, cfg):
    windows = pipeline.read_windows(args.workdir / pipeline.WINDOWS_FILE)
    pipeline.write_features(windows, args.workdir / pipeline.FEATURES_FILE)


def cmd_train(args, cfg):
    out = pipeline.train_model(args.model, args.workdir, cfg, args.out)
    logger.info("model written to %s", out)


def cmd_predict(args, cfg):
    train, test, _ = pipeline.read_split(args.workdir)
    patients = {"train": train, "test": test, "all": train + test}[args.split]
    model_dir = args.model_dir or args.workdir / "models" / args.model
    windows = pipeline.read_windows(args.workdir / pipeline.WINDOWS_FILE)
    rows = pipeline.predict_rows(pipeline.Predictor(model_dir), windows, patients)
    pipeline.write_rows(rows, pipeline.PRED_HEADER, _predictions_path(args))


def cmd_burden(args, cfg):
    rows = pipeline.read_predictions(args.predictions)
    pipeline.write_burden(pipeline.burden_rows(rows, cfg), args.out)


def cmd_eval(args, cfg):
    rows = pipeline.read_predictions(args.predictions)
    if args.burden:
        burden = pipeline.read_burden(args.burden)
    else:
        path = args.out / "burden.csv"
        pipeline.write_burden(pipeline.burden_rows(rows, cfg), path)
        burden = pipeline.read_burden(path)
    report = pipeline.evaluate(rows, burden)
    pipeline.dump_json(report["window_metrics"], args.out / "metrics.json")
    pipeline.dump_json(report["abs_e_af"], args.out / "abs_e_af.json")
    pipeline.dump_json(report["fp_by_rhythm"], args.out / "fp_by_rhythm.json")
    pipeline.dump_json(report["patient_binary"], args.out / "patient_metrics.json")
    pipeline.write_rows(pipeline.roc_rows(rows), ["fpr", "tpr", "threshold"],
                        args.out / "roc.csv")


def cmd_learning_curve(args, cfg):
    train, test, groups = pipeline.read_split(args.workdir)
    table = pipeline.read_features(args.workdir / pipeline.FEATURES_FILE)
    curve = pipeline.run_learning_curve(args.model, table, train, test, groups, args.sizes, cfg)
    pipeline.write_rows([[n, f1] for n, f1 in curve], ["n_patients", "f1"], args.out)


COMMANDS = {
    "synth": cmd_synth, "convert": cmd_convert, "qc": cmd_qc, "features": cmd_features,
    "train": cmd_train, "predict": cmd_predict, "burden": cmd_burden, "eval": cmd_eval,
    "learning-curve": cmd_learning_curve,
}


def run(argv=None) -> int:
    level = os.environ.get("AFBURDEN_LOG_LEVEL", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args = build_parser().parse_args(argv)
        cfg = load_config(args)
        logger.info("config %s seed %d", cfg.digest(), cfg.seed)
        COMMANDS[args.command](args, cfg)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    except (ParseError, OSError) as exc:
        print(f"afburden: {exc}", file=sys.stderr)
        return 2
    except (ValidationError, ValueError) as exc:
        print(f"afburden: {exc}", file=sys.stderr)
        return 1
    return 0


def main() -> None:
    sys.exit(run())
