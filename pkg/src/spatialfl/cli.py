"""Command-line entry points.

Subcommands: ``run`` (full experiment), ``validate-config``,
``gen-synthetic`` (write a benchmark as CSV), and ``evaluate-model``
(score a serialized model file against a CSV). Exit codes: 0 success,
2 config error, 3 data error, 4 runtime error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from ._version import __version__
from .data import CsvSchema, export_csv, generate_synthetic, ingest_csv, partition_clients, preprocess
from .errors import (
    ConfigError,
    EmptyClientError,
    EmptyCorpusError,
    EmptyDatasetError,
    InconsistentHierarchyError,
    MissingClientError,
    RowError,
    SchemaError,
    SpatialFLError,
    SplitError,
    ThinClientError,
    UnitUnusableError,
    UnknownRegionError,
)
from .federation import deserialize_model
from .harness import (
    CsvSource,
    emit_report,
    evaluate,
    load_config,
    run_experiment,
    synthetic_spec_from_dict,
    write_models,
)
from .spatial import build_vocabulary

_DATA_ERRORS = (
    SchemaError, RowError, UnitUnusableError, ThinClientError, SplitError,
    EmptyCorpusError, InconsistentHierarchyError, EmptyDatasetError,
    MissingClientError, UnknownRegionError, EmptyClientError,
)


def _stage_suffix(exc: Exception) -> str:
    stage = getattr(exc, "stage", None)
    return f" [stage={stage}]" if stage else ""


def cmd_run(args: argparse.Namespace) -> int:
    config = load_config(args.config)
    if args.seed is not None:
        config.seed = args.seed
    if args.out is not None:
        config.output_dir = args.out
    result = run_experiment(config)
    written = emit_report(result.report, config.output_dir)
    written += write_models(result.node_models, config.output_dir)
    for method, accuracy in result.report.global_accuracy.items():
        print(f"{method}: global accuracy {accuracy:.4f}")
    print(f"wrote {len(written)} files under {config.output_dir}")
    return 0


def cmd_validate_config(args: argparse.Namespace) -> int:
    load_config(args.config)
    print("config OK")
    return 0


def cmd_gen_synthetic(args: argparse.Namespace) -> int:
    spec_path = Path(args.spec)
    if not spec_path.exists():
        raise ConfigError([f"spec file does not exist: {spec_path}"])
    try:
        raw = json.loads(spec_path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError([f"spec is not valid JSON: {exc}"]) from exc
    spec = synthetic_spec_from_dict(raw)
    datasets, _, oracle = generate_synthetic(spec)
    export_csv(datasets, args.out)
    rows = sum(ds.n_rows for ds in datasets.values())
    print(f"wrote {rows} rows for {len(datasets)} clients to {args.out} "
          f"(best achievable accuracy {oracle:.3f})")
    return 0


def cmd_evaluate_model(args: argparse.Namespace) -> int:
    config = load_config(args.config)
    model_path = Path(args.model)
    if not model_path.exists():
        print(f"error: model file does not exist: {model_path}", file=sys.stderr)
        return 4
    data_path = Path(args.data)
    if not data_path.exists():
        print(f"data error: data file does not exist: {data_path}", file=sys.stderr)
        return 3
    model = deserialize_model(model_path.read_bytes())
    schema = config.data.schema if isinstance(config.data, CsvSource) else CsvSchema()
    records = preprocess(ingest_csv(data_path, schema), config.preprocess)
    datasets, _ = partition_clients(
        records, config.n_classes, config.min_rows, config.include_date_feature)
    vocab = None
    if config.encoding.enabled:
        vocab = build_vocabulary(
            [datasets[cid].spatial for cid in sorted(datasets)],
            include_coordinates=config.encoding.use_coordinates,
            include_hierarchy=config.encoding.use_hierarchy,
        )
    accuracy = evaluate(model, datasets.values(), vocab, split=None)
    print(f"accuracy={accuracy:.6f}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="spatialfl",
        description="Tiered federated averaging over spatially encoded clients",
    )
    parser.add_argument("--version", action="version", version=f"spatialfl {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run an experiment from a JSON config")
    run.add_argument("--config", required=True)
    run.add_argument("--out", default=None, help="override the config's output directory")
    run.add_argument("--seed", type=int, default=None, help="override the master seed")
    run.set_defaults(func=cmd_run)

    validate = sub.add_parser("validate-config", help="check a config without running it")
    validate.add_argument("--config", required=True)
    validate.set_defaults(func=cmd_validate_config)

    gen = sub.add_parser("gen-synthetic", help="write a synthetic benchmark as CSV")
    gen.add_argument("--spec", required=True, help="JSON file with the synthetic spec fields")
    gen.add_argument("--out", required=True, help="output CSV path")
    gen.set_defaults(func=cmd_gen_synthetic)

    ev = sub.add_parser("evaluate-model", help="score a serialized model against a CSV")
    ev.add_argument("--model", required=True, help="model file written by run")
    ev.add_argument("--data", required=True, help="CSV in the configured schema")
    ev.add_argument("--config", required=True, help="config supplying schema and encoding settings")
    ev.set_defaults(func=cmd_evaluate_model)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        for message in exc.errors:
            print(f"config error: {message}", file=sys.stderr)
        return 2
    except _DATA_ERRORS as exc:
        print(f"data error{_stage_suffix(exc)}: {exc}", file=sys.stderr)
        return 3
    except (SpatialFLError, OSError) as exc:
        print(f"error{_stage_suffix(exc)}: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    raise SystemExit(main())
