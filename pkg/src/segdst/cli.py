"""Command-line entry point: ``segdst run|score|render|convert|cache stats``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Any, Sequence

from .core import LabelSchema, SchemaError, load_schema
from .data import DEFAULT_SEPARATOR, FORMATS, DatasetBundle, DatasetError, load_dataset, split_dev_test, write_jsonl
from .llm import (BackendError, GenerationParams, HttpBackend, MockBackend, ReplayBackend, cache_stats)
from .metrics import MetricReport
from .prompt import PromptVariant, build_prompt
from .runner import METRIC_NAMES, RunConfig, gold_response, run_predictions, score_predictions

log = logging.getLogger("segdst")

PREDICTIONS_FILE = "predictions.jsonl"
REPORT_FILE = "report.json"


class UsageError(Exception):
    pass


def default_schema_name(fmt: str, variant: PromptVariant) -> str:
    if variant is PromptVariant.S3DST_MWOZ or fmt.startswith("mwoz"):
        return "mwoz"
    if fmt == "dialseg711":
        return "segment"
    return "open_domain"


def _schema(args: argparse.Namespace, variant: PromptVariant) -> LabelSchema:
    return load_schema(args.schema or default_schema_name(args.format, variant))


def _bundle(args: argparse.Namespace, schema: LabelSchema) -> DatasetBundle:
    bundle = load_dataset(args.dataset, args.format, schema if schema.slots else None, args.separator)
    split = getattr(args, "split", "all")
    if split != "all":
        dev, test = split_dev_test(bundle, args.n_dev, args.seed)
        bundle = dev if split == "dev" else test
    limit = getattr(args, "limit", None)
    if limit is not None:
        bundle = bundle.subset([c.id for c in bundle.conversations[:limit]])
    return bundle


def _mock_backend(args: argparse.Namespace, bundle: DatasetBundle, variant: PromptVariant,
                  schema: LabelSchema) -> MockBackend:
    """Mock keyed by prompt text, so results do not depend on call order."""
    if args.mock_responses:
        responses: dict[str, str] = {}
        for line in Path(args.mock_responses).read_text(encoding="utf-8").splitlines():
            if line.strip():
                item = json.loads(line)
                responses[item["id"]] = item["response"]
    else:
        missing = [c.id for c in bundle.conversations if c.id not in bundle.gold]
        if missing:
            raise UsageError(f"mock backend without --mock-responses needs gold for every conversation: {missing[:3]}")
        responses = {c.id: gold_response(c, bundle.gold[c.id], variant, schema) for c in bundle.conversations}
    by_prompt = {}
    for conv in bundle.conversations:
        if conv.id in responses:
            by_prompt[build_prompt(variant, conv, schema).text] = responses[conv.id]
    return MockBackend(by_prompt)


def _backend(args: argparse.Namespace, bundle: DatasetBundle, variant: PromptVariant, schema: LabelSchema):
    if args.backend == "http":
        if not args.endpoint:
            raise UsageError("--backend http needs --endpoint")
        return HttpBackend(args.endpoint)
    if args.backend == "mock":
        return _mock_backend(args, bundle, variant, schema)
    if not args.cache_dir:
        raise UsageError(f"--backend {args.backend} needs --cache-dir")
    if args.backend == "replay":
        return ReplayBackend(args.cache_dir)
    inner = HttpBackend(args.endpoint) if args.endpoint else _mock_backend(args, bundle, variant, schema)
    return ReplayBackend(args.cache_dir, inner)


def _write_json(path: Path, data: Any) -> None:
    path.write_text(json.dumps(data, indent=2, ensure_ascii=False, sort_keys=False) + "\n", encoding="utf-8")


def _print_report(report: MetricReport) -> None:
    print(json.dumps(report.to_dict(), indent=2))


def cmd_run(args: argparse.Namespace) -> int:
    variant = PromptVariant(args.variant)
    schema = _schema(args, variant)
    bundle = _bundle(args, schema)
    params = GenerationParams(args.model, args.temperature, args.max_output_tokens)
    config = RunConfig(variant, schema, params, args.concurrency, args.window_size)
    backend = _backend(args, bundle, variant, schema)
    predictions = run_predictions(bundle, config, backend)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / PREDICTIONS_FILE, "w", encoding="utf-8", newline="\n") as fh:
        for record in predictions:
            fh.write(json.dumps(record, ensure_ascii=False) + "\n")
    report = score_predictions(predictions, bundle, variant, schema, args.window_size)
    _write_json(out / REPORT_FILE, report.to_dict())
    _print_report(report)
    return 0


def read_predictions(path: str | Path) -> list[dict[str, Any]]:
    return [json.loads(line) for line in Path(path).read_text(encoding="utf-8").splitlines() if line.strip()]


def cmd_score(args: argparse.Namespace) -> int:
    predictions = read_predictions(args.predictions)
    variants = {p["variant"] for p in predictions}
    if args.variant:
        variant = PromptVariant(args.variant)
    elif len(variants) == 1:
        variant = PromptVariant(variants.pop())
    else:
        raise UsageError("cannot infer the prompt variant from predictions; pass --variant")
    schema = _schema(args, variant)
    bundle = _bundle(args, schema)
    metrics = [m.strip() for m in args.metrics.split(",")] if args.metrics else None
    if metrics and set(metrics) - set(METRIC_NAMES):
        raise UsageError(f"unknown metrics {sorted(set(metrics) - set(METRIC_NAMES))}; choose from {METRIC_NAMES}")
    report = score_predictions(predictions, bundle, variant, schema, args.window_size, metrics)
    if args.out:
        _write_json(Path(args.out), report.to_dict())
    _print_report(report)
    return 0


def cmd_render(args: argparse.Namespace) -> int:
    variant = PromptVariant(args.variant)
    schema = _schema(args, variant)
    bundle = _bundle(args, schema)
    try:
        conv = bundle.get(args.id)
    except KeyError:
        raise UsageError(f"no conversation with id {args.id!r}") from None
    sys.stdout.write(build_prompt(variant, conv, schema).text)
    return 0


def cmd_convert(args: argparse.Namespace) -> int:
    schema = load_schema(args.schema or default_schema_name(args.format, PromptVariant.S3DST_JOINT))
    bundle = load_dataset(args.dataset, args.format, schema if schema.slots else None, args.separator)
    write_jsonl(bundle, args.out)
    print(f"wrote {len(bundle)} conversations ({bundle.turn_count} turns) to {args.out}")
    return 0


def cmd_cache_stats(args: argparse.Namespace) -> int:
    stats = cache_stats(args.cache_dir)
    print(json.dumps({"records": stats.records, "bytes": stats.bytes, "models": stats.models,
                      "corrupt": stats.corrupt}, indent=2))
    return 0


def _dataset_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--dataset", required=True, help="dataset file or directory")
    p.add_argument("--format", required=True, choices=FORMATS)
    p.add_argument("--schema", help="schema JSON path or one of: open_domain, mwoz, segment")
    p.add_argument("--separator", default=DEFAULT_SEPARATOR, help="DialSeg711 separator line regex")
    p.add_argument("--split", choices=("all", "dev", "test"), default="all")
    p.add_argument("--n-dev", type=int, default=150)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--limit", type=int, help="only the first N conversations (after splitting)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="segdst", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    variants = [v.value for v in PromptVariant]

    run = sub.add_parser("run", help="prompt, parse and score a dataset")
    _dataset_args(run)
    run.add_argument("--variant", required=True, choices=variants)
    run.add_argument("--backend", choices=("http", "replay", "record", "mock"), default="mock")
    run.add_argument("--endpoint")
    run.add_argument("--model", default="gpt-4")
    run.add_argument("--temperature", type=float, default=0.0)
    run.add_argument("--max-output-tokens", type=int, default=1500)
    run.add_argument("--concurrency", type=int, default=1)
    run.add_argument("--window-size", type=int)
    run.add_argument("--cache-dir")
    run.add_argument("--mock-responses", help="JSONL of {id, response} for the mock backend")
    run.add_argument("--out", required=True, help="output directory")
    run.set_defaults(func=cmd_run)

    score = sub.add_parser("score", help="rescore stored predictions")
    _dataset_args(score)
    score.add_argument("--predictions", required=True)
    score.add_argument("--variant", choices=variants)
    score.add_argument("--metrics", help=f"comma-separated subset of {','.join(METRIC_NAMES)}")
    score.add_argument("--window-size", type=int)
    score.add_argument("--out", help="write the report JSON here")
    score.set_defaults(func=cmd_score)

    render = sub.add_parser("render", help="print the prompt for one conversation")
    _dataset_args(render)
    render.add_argument("--variant", required=True, choices=variants)
    render.add_argument("--id", required=True)
    render.set_defaults(func=cmd_render)

    convert = sub.add_parser("convert", help="convert a dataset to canonical JSONL")
    convert.add_argument("--dataset", required=True)
    convert.add_argument("--format", required=True, choices=FORMATS)
    convert.add_argument("--schema")
    convert.add_argument("--separator", default=DEFAULT_SEPARATOR)
    convert.add_argument("--out", required=True)
    convert.set_defaults(func=cmd_convert)

    cache = sub.add_parser("cache", help="inspect a generation cache")
    cache_sub = cache.add_subparsers(dest="cache_command", required=True)
    stats = cache_sub.add_parser("stats")
    stats.add_argument("cache_dir")
    stats.set_defaults(func=cmd_cache_stats)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"segdst: error: {exc}", file=sys.stderr)
        return 2
    except (SchemaError, DatasetError, BackendError, OSError, ValueError) as exc:
        print(f"segdst: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
