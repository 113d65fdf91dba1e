"""Command-line interface.

Four subcommands: ``infer`` runs the execution-in-the-loop pipeline over a
JSONL dataset, ``eval`` scores saved traces, ``sql`` runs one query against
a table file, and ``build-dataset`` produces filtered training pairs from a
teacher backend.  Machine-readable output goes to files or stdout;
diagnostics go to stderr.  Exit status is 0 on success, 1 when individual
items failed, 2 on usage errors.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from typing import List, Optional, Sequence

from . import dataset as dataset_mod
from .backends import (
    Backend,
    BackendUnavailable,
    HttpBackend,
    HttpConfig,
    IoFailure,
    ReplayBackend,
    ScriptExhausted,
    ScriptMismatch,
)
from .evaluation import JudgeVerdict, build_report, judge_verdict, render_report
from .orchestrator import (
    Outcome,
    RunConfig,
    load_run_config,
    load_traces,
    run_batch,
    write_outcomes,
    write_traces,
)
from .sql import SqlError, format_result, run_statement
from .tables import EmptyInput, load_instances, table_from_dict

logger = logging.getLogger(__name__)

_BACKEND_FAILURES = (BackendUnavailable, ScriptExhausted, ScriptMismatch)


def _add_backend_flags(parser: argparse.ArgumentParser, flag: str) -> None:
    parser.add_argument(
        flag,
        required=True,
        help="backend spec: 'replay:SCRIPT.jsonl' or 'http'",
    )
    parser.add_argument("--base-url", help="API root for the http backend")
    parser.add_argument("--model", help="model name for the http backend")
    parser.add_argument(
        "--api-key-env",
        default="OPENAI_API_KEY",
        help="environment variable holding the API key (default %(default)s)",
    )


def _make_backend(spec: str, args: argparse.Namespace, parser: argparse.ArgumentParser) -> Backend:
    if spec.startswith("replay:"):
        return ReplayBackend.from_script(spec[len("replay:") :])
    if spec == "http":
        if not args.base_url or not args.model:
            parser.error("http backend requires --base-url and --model")
        return HttpBackend(
            HttpConfig(
                base_url=args.base_url,
                model=args.model,
                api_key_env=args.api_key_env,
            )
        )
    parser.error("unknown backend spec %r" % spec)
    raise AssertionError("unreachable")


def _load_config(path: Optional[str]) -> RunConfig:
    if path is None:
        return RunConfig()
    return load_run_config(path)


def _cmd_sql(args: argparse.Namespace) -> int:
    with open(args.table, "r", encoding="utf-8") as fh:
        payload = json.load(fh)
    table = table_from_dict(payload.get("table", payload))
    try:
        result = run_statement(args.query, table)
    except SqlError as exc:
        print("error: %s" % exc, file=sys.stderr)
        return 1
    print(format_result(result))
    return 0


def _cmd_infer(args: argparse.Namespace, parser: argparse.ArgumentParser) -> int:
    instances = load_instances(args.data)
    backend = _make_backend(args.backend, args, parser)
    config = _load_config(args.config)
    results = run_batch(instances, backend, config=config, parallelism=args.parallelism)
    write_traces(results, args.out)
    if args.outcomes:
        write_outcomes(results, args.outcomes)
    failures = [o for o, _ in results if o.status != "ok"]
    for outcome in failures:
        print("instance %s failed: %s" % (outcome.instance_id, outcome.error), file=sys.stderr)
    print(
        "ran %d instances, %d failed, traces written to %s"
        % (len(results), len(failures), args.out),
        file=sys.stderr,
    )
    return 1 if failures else 0


def _cmd_eval(args: argparse.Namespace, parser: argparse.ArgumentParser) -> int:
    instances = load_instances(args.data)
    traces = load_traces(args.traces)
    outcomes = [
        Outcome(
            instance_id=t.instance_id,
            final_answer=t.final_answer,
            api_calls=t.api_calls,
        )
        for t in traces
    ]
    metrics = args.metrics.split(",") if args.metrics else None
    verdicts = None
    if args.judge_backend:
        judge = _make_backend(args.judge_backend, args, parser)
        verdicts = {}
        by_id = {i.id: i for i in instances}
        for outcome in outcomes:
            instance = by_id[outcome.instance_id]
            answer = outcome.final_answer
            predicted = answer.label or answer.text or ", ".join(answer.answers)
            gold = instance.gold.label or list(instance.gold.answers or ())
            verdicts[outcome.instance_id] = judge_verdict(
                instance.query, gold, predicted or "(no answer)", judge
            )
    report = build_report(outcomes, traces, instances, metrics=metrics, judge_verdicts=verdicts)
    if args.json:
        with open(args.json, "w", encoding="utf-8") as fh:
            fh.write(report.to_json())
            fh.write("\n")
    print(render_report(report))
    return 0


def _cmd_build_dataset(args: argparse.Namespace, parser: argparse.ArgumentParser) -> int:
    instances = load_instances(args.data)
    if args.sample is not None:
        instances = dataset_mod.sample_instances(instances, args.sample, seed=args.seed)
    backend = _make_backend(args.teacher, args, parser)
    config = _load_config(args.config)
    candidates, errors = dataset_mod.generate_candidates(
        instances, backend, config=config, parallelism=args.parallelism
    )
    kept, dropped = dataset_mod.consistency_filter(candidates, instances)
    if args.candidates:
        dataset_mod.write_candidates(candidates, args.candidates)
    for err in errors:
        print("instance %s failed: %s" % (err.instance_id, err.error), file=sys.stderr)
    for drop in dropped:
        print(
            "dropped %s: %s" % (drop.candidate.instance_id, drop.reason),
            file=sys.stderr,
        )
    if not kept:
        print("no candidates survived the consistency filter", file=sys.stderr)
        return 1
    written = dataset_mod.export_jsonl(
        kept, instances, args.out, segment=args.segment, config=config
    )
    print(
        "kept %d of %d candidates (%d errors), wrote %d pairs to %s"
        % (len(kept), len(candidates), len(errors), written, args.out),
        file=sys.stderr,
    )
    return 1 if errors else 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tabreason",
        description="Plan-then-execute table reasoning over LLM backends.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_infer = sub.add_parser("infer", help="run inference over a JSONL dataset")
    p_infer.add_argument("--data", required=True, help="instances JSONL file")
    p_infer.add_argument("--out", required=True, help="trace JSONL output path")
    p_infer.add_argument("--outcomes", help="optional outcome JSONL output path")
    p_infer.add_argument("--config", help="key=value run config file")
    p_infer.add_argument("--parallelism", type=int, default=1)
    _add_backend_flags(p_infer, "--backend")

    p_eval = sub.add_parser("eval", help="score saved traces against gold answers")
    p_eval.add_argument("--traces", required=True, help="trace JSONL file from infer")
    p_eval.add_argument("--data", required=True, help="instances JSONL file")
    p_eval.add_argument("--metrics", help="comma-separated metric names")
    p_eval.add_argument("--json", help="also write the report as JSON to this path")
    p_eval.add_argument("--judge-backend", help="optional judge backend spec")
    p_eval.add_argument("--base-url", help="API root for the http backend")
    p_eval.add_argument("--model", help="model name for the http backend")
    p_eval.add_argument("--api-key-env", default="OPENAI_API_KEY")

    p_sql = sub.add_parser("sql", help="run one query against a table JSON file")
    p_sql.add_argument("--table", required=True, help="table JSON file")
    p_sql.add_argument("--query", required=True, help="query text")

    p_build = sub.add_parser("build-dataset", help="build filtered training pairs")
    p_build.add_argument("--data", required=True, help="instances JSONL file")
    p_build.add_argument("--out", required=True, help="training-pair JSONL output path")
    p_build.add_argument("--segment", default="full", choices=dataset_mod.SEGMENT_CHOICES)
    p_build.add_argument("--sample", type=int, help="sample this many instances")
    p_build.add_argument("--seed", type=int, default=0, help="sampling seed")
    p_build.add_argument("--candidates", help="optional path to save raw candidates")
    p_build.add_argument("--config", help="key=value run config file")
    p_build.add_argument("--parallelism", type=int, default=1)
    _add_backend_flags(p_build, "--teacher")

    return parser


def dispatch(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "sql":
            return _cmd_sql(args)
        if args.command == "infer":
            return _cmd_infer(args, parser)
        if args.command == "eval":
            return _cmd_eval(args, parser)
        if args.command == "build-dataset":
            return _cmd_build_dataset(args, parser)
    except (OSError, IoFailure) as exc:
        print("error: %s" % exc, file=sys.stderr)
        return 1
    except _BACKEND_FAILURES as exc:
        print("backend error: %s" % exc, file=sys.stderr)
        return 1
    except (EmptyInput, ValueError) as exc:
        print("error: %s" % exc, file=sys.stderr)
        return 1
    raise AssertionError("unreachable command %r" % args.command)


def main() -> None:
    logging.basicConfig(stream=sys.stderr, level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    sys.exit(dispatch())


if __name__ == "__main__":
    main()
