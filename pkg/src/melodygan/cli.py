"""Command-line pipeline: synthesize a corpus, train, generate, evaluate.

Each run writes a manifest (resolved arguments, input digests, seed, package
version) before any computation starts, and every output file is promoted
atomically so partial results never appear under a final name. Exit codes:
0 success, 2 usage, 3 validation or configuration problem, 4 numeric failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import os
import sys
from pathlib import Path

from . import __version__, data, metrics, training
from .errors import ConfigurationError, DataValidationError, NumericError

OUT_ENV_VAR = "MELODYGAN_OUT"

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_VALIDATION = 3
EXIT_NUMERIC = 4


class _UsageError(Exception):
    pass


# ---------------------------------------------------------------------------
# argument types


def _records_type(text: str) -> int:
    value = int(text)
    if value < 10:
        raise argparse.ArgumentTypeError("must be at least 10")
    return value


def _correlation_type(text: str) -> float:
    value = float(text)
    if not 0.0 <= value <= 1.0:
        raise argparse.ArgumentTypeError("must lie in [0, 1]")
    return value


def _positive_int_type(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError("must be a positive integer")
    return value


def _bandwidth_type(text: str):
    # argparse runs string defaults through this converter, so the canonical
    # spelling must round-trip alongside the short command-line form
    if text in ("median", "median_heuristic"):
        return "median_heuristic"
    try:
        value = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError("must be 'median' or a positive number") from None
    if value <= 0:
        raise argparse.ArgumentTypeError("must be 'median' or a positive number")
    return value


# ---------------------------------------------------------------------------
# manifests and output resolution


def _sha256_file(path: Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as handle:
        for chunk in iter(lambda: handle.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def _write_manifest(manifest_path: Path, command: str, arguments: dict, inputs) -> None:
    manifest = {
        "artifact_version": __version__,
        "command": command,
        "arguments": arguments,
        "inputs": [{"path": str(p), "sha256": _sha256_file(Path(p))} for p in inputs],
    }
    data.atomic_write_text(manifest_path, json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def _resolve_out(arg_value, default_name: str) -> Path:
    if arg_value is not None:
        return Path(arg_value)
    env = os.environ.get(OUT_ENV_VAR)
    if env:
        return Path(env) / default_name
    raise _UsageError(f"--out is required (or set {OUT_ENV_VAR})")


# ---------------------------------------------------------------------------
# subcommands


def cmd_synth_data(args) -> int:
    out = _resolve_out(args.out, "corpus.jsonl")
    _write_manifest(out.with_name(out.name + ".manifest.json"), "synth-data", {
        "records": args.records,
        "correlation": args.correlation,
        "seed": args.seed,
        "out": str(out),
    }, inputs=[])
    records, tables, embedding_table = data.synthesize_dataset(
        args.records, args.correlation, args.seed)
    data.save_dataset(out, records, tables, embedding_table)
    print(f"wrote {len(records)} records to {out}")
    print(f"embeddings sidecar: {data.embedding_sidecar_path(out)}")
    return EXIT_OK


def _build_train_config(args) -> training.TrainConfig:
    overrides = {}
    if args.config:
        config_path = Path(args.config)
        if not config_path.exists():
            raise FileNotFoundError(f"config file not found: {config_path}")
        with open(config_path, "r", encoding="utf-8") as handle:
            loaded = json.load(handle)
        if not isinstance(loaded, dict):
            raise ConfigurationError("config file must hold a JSON object of TrainConfig fields")
        overrides.update(loaded)
    if args.seed is not None:
        overrides["seed"] = args.seed
    try:
        if args.small:
            return training.small_train_config(**overrides)
        return training.TrainConfig(**overrides)
    except TypeError as exc:
        raise ConfigurationError(f"bad config field: {exc}") from exc


def cmd_train(args) -> int:
    config = _build_train_config(args)
    out_dir = _resolve_out(args.out, "train")
    out_dir.mkdir(parents=True, exist_ok=True)
    inputs = [args.data] + ([args.resume] if args.resume else [])
    for path in inputs:
        if not Path(path).exists():
            raise FileNotFoundError(f"input not found: {path}")
    _write_manifest(out_dir / "manifest.json", "train", {
        "config": dataclasses.asdict(config),
        "config_digest": training.config_digest(config),
        "data": str(args.data),
        "resume": str(args.resume) if args.resume else None,
        "out": str(out_dir),
    }, inputs=inputs)
    result = training.train(config, args.data, out_dir, resume=args.resume)
    print(f"completed {result.epochs_completed}/{config.total_epochs} epochs")
    print(f"metrics log: {result.metrics_log}")
    if result.final_checkpoint is not None:
        print(f"final checkpoint: {result.final_checkpoint}")
    return EXIT_OK


def cmd_generate(args) -> int:
    payload = training.load_checkpoint(args.checkpoint)
    config, generator, _ = training.models_from_checkpoint(payload)
    records, tables, embedding_table = data.load_dataset(args.data)
    split = data.split_dataset(records, config.seed)
    subset = getattr(split, args.split)
    out = _resolve_out(args.out, "generated.jsonl")
    _write_manifest(out.with_name(out.name + ".manifest.json"), "generate", {
        "checkpoint": str(args.checkpoint),
        "checkpoint_epoch": payload["epoch"],
        "checkpoint_phase": payload["phase"],
        "data": str(args.data),
        "split": args.split,
        "mode": args.mode,
        "seed": args.seed,
        "out": str(out),
    }, inputs=[args.checkpoint, args.data])
    tensors = training.corpus_tensors(subset, embedding_table)
    triplet = generator.generate_index(tensors.syllables, mode=args.mode, seed=args.seed)
    generated = training.records_from_indices(triplet, subset)
    data.save_dataset(out, generated, tables)
    print(f"decoded {len(generated)} melodies from the {args.split} split to {out}")
    return EXIT_OK


def _write_transition_csv(path: Path, generated, reference) -> None:
    lines = ["interval,generated,reference"]
    offset = metrics.TRANSITION_CLAMP
    for i in range(len(generated)):
        lines.append(f"{i - offset},{generated[i]!r},{reference[i]!r}")
    data.atomic_write_text(path, "\n".join(lines) + "\n")


def _write_baseline_csv(path: Path, baselines) -> None:
    lines = ["rs,rn,rns"]
    rs, rn, rns = baselines.samples["rs"], baselines.samples["rn"], baselines.samples["rns"]
    for i in range(rs.size):
        lines.append(f"{rs[i]!r},{rn[i]!r},{rns[i]!r}")
    data.atomic_write_text(path, "\n".join(lines) + "\n")


def _copy_metrics_log(source: Path, target: Path) -> None:
    text = Path(source).read_text(encoding="utf-8")
    lines = text.splitlines()
    expected = ",".join(training.METRICS_LOG_COLUMNS)
    if not lines or lines[0] != expected:
        raise ConfigurationError(
            f"{source} does not look like a metrics log (expected header {expected!r})")
    data.atomic_write_text(target, text)


def cmd_evaluate(args) -> int:
    generated, gen_tables, _ = data.load_dataset(args.generated)
    reference, ref_tables, _ = data.load_dataset(args.reference)
    if gen_tables != ref_tables:
        raise ConfigurationError("generated and reference corpora use different value tables")
    out_dir = _resolve_out(args.out, "evaluation")
    out_dir.mkdir(parents=True, exist_ok=True)
    inputs = [args.generated, args.reference] + ([args.metrics_log] if args.metrics_log else [])
    _write_manifest(out_dir / "manifest.json", "evaluate", {
        "generated": str(args.generated),
        "reference": str(args.reference),
        "baseline_samples": args.baseline_samples,
        "bandwidth": args.bandwidth if isinstance(args.bandwidth, str) else float(args.bandwidth),
        "seed": args.seed,
        "metrics_log": str(args.metrics_log) if args.metrics_log else None,
        "out": str(out_dir),
    }, inputs=inputs)

    kernel = metrics.KernelSpec(bandwidth=args.bandwidth)
    report = metrics.compute_metric_report(generated, reference, ref_tables, kernel=kernel,
                                           baseline_samples=args.baseline_samples, seed=args.seed)
    data.atomic_write_text(out_dir / "report.json", report.to_json())
    _write_transition_csv(out_dir / "transition_histogram.csv",
                          report.transition_histogram, report.reference_transition_histogram)
    for attribute, baselines in report.conditioning.items():
        _write_baseline_csv(out_dir / f"conditioning_{attribute}.csv", baselines)
    if args.metrics_log:
        _copy_metrics_log(Path(args.metrics_log), out_dir / "curves.csv")

    print(f"report: {out_dir / 'report.json'}")
    print(f"self_bleu={report.self_bleu!r} mmd_overall={report.mmd_overall!r}")
    for attribute, baselines in report.conditioning.items():
        print(f"conditioning[{attribute}]: d={baselines.distance!r} "
              f"quantile_rns={baselines.quantiles['rns']!r}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser and entry point


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="melodygan",
        description="Train and evaluate a lyrics-conditioned melody generator.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    synth = sub.add_parser("synth-data", help="write a synthetic corpus with planted structure")
    synth.add_argument("--records", type=_records_type, required=True,
                       help="number of songs (at least 10)")
    synth.add_argument("--correlation", type=_correlation_type, default=0.5,
                       help="syllable/attribute correlation strength in [0, 1]")
    synth.add_argument("--seed", type=int, default=0)
    synth.add_argument("--out", default=None, help="corpus file to write")
    synth.set_defaults(handler=cmd_synth_data)

    train = sub.add_parser("train", help="run the two-phase training pipeline")
    train.add_argument("--data", required=True, help="corpus file")
    train.add_argument("--out", default=None, help="output directory")
    train.add_argument("--config", default=None, help="JSON file of TrainConfig overrides")
    train.add_argument("--small", action="store_true", help="use the desk-scale profile")
    train.add_argument("--seed", type=int, default=None, help="override the config seed")
    train.add_argument("--resume", default=None, help="checkpoint to continue from")
    train.set_defaults(handler=cmd_train)

    generate = sub.add_parser("generate", help="decode melodies from a checkpoint")
    generate.add_argument("--checkpoint", required=True)
    generate.add_argument("--data", required=True, help="corpus file used for training")
    generate.add_argument("--split", choices=("train", "validation", "test"), default="test")
    generate.add_argument("--mode", choices=("argmax", "sample"), default="argmax")
    generate.add_argument("--seed", type=int, default=0)
    generate.add_argument("--out", default=None, help="corpus file to write")
    generate.set_defaults(handler=cmd_generate)

    evaluate = sub.add_parser("evaluate", help="score a generated corpus against its reference")
    evaluate.add_argument("--generated", required=True)
    evaluate.add_argument("--reference", required=True)
    evaluate.add_argument("--out", default=None, help="output directory")
    evaluate.add_argument("--baseline-samples", type=_positive_int_type,
                          default=metrics.DEFAULT_BASELINE_SAMPLES)
    evaluate.add_argument("--bandwidth", type=_bandwidth_type, default="median_heuristic",
                          help="'median' or a positive kernel bandwidth")
    evaluate.add_argument("--seed", type=int, default=0)
    evaluate.add_argument("--metrics-log", default=None,
                          help="training metrics log to re-emit as curves.csv")
    evaluate.set_defaults(handler=cmd_evaluate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.handler(args)
    except _UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataValidationError, ConfigurationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (FileNotFoundError, IsADirectoryError, NotADirectoryError, PermissionError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    raise SystemExit(main())
