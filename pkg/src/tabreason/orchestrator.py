"""Drives generation with SQL execution spliced into the model's output.

One instance runs as a loop: prompt the model, look for the first SQL block
that has not been handled yet, execute it against the instance table, cut
the response right after the block's result marker, append the real
execution output, and ask the model to continue from there.  When the SQL
cannot be parsed or executed, the model's own claimed result is kept
instead (the fallback), so the run still proceeds.  The loop stops when a
continuation brings no new SQL or the injection budget is spent.

Every round is recorded in a :class:`Trace`; a batch writes traces as JSONL
in input order so runs are comparable byte for byte across parallelism
settings.
"""

from __future__ import annotations

import json
import logging
import statistics
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Sequence, Tuple

from .backends import (
    Backend,
    BackendUnavailable,
    GenerationRequest,
    ScriptExhausted,
    ScriptMismatch,
)
from .prompts import PromptTemplates, build_task_prompt, task_kind_for
from .responses import (
    DEFAULT_RESULT_MARKERS,
    FinalAnswer,
    extract_final_answer,
    resume_prefix,
    segment_response,
)
from .sql import SqlError, format_result, run_statement
from .tables import Instance, Table, truncate_to_budget

logger = logging.getLogger(__name__)

OUTCOME_OK = "ok"
OUTCOME_SQL_ERROR = "sql_error"
OUTCOME_NO_SQL = "no_sql"


@dataclass(frozen=True)
class RunConfig:
    """Knobs for a run; defaults follow the reference setup."""

    max_new_tokens: int = 1024
    temperature: float = 0.0
    table_token_budget: int = 3000
    max_injection_rounds: int = 4
    include_demo: bool = True
    fallback_on_sql_error: bool = True
    result_markers: Tuple[str, ...] = DEFAULT_RESULT_MARKERS

    def to_pairs(self) -> List[Tuple[str, str]]:
        return [
            ("max_new_tokens", str(self.max_new_tokens)),
            ("temperature", repr(self.temperature)),
            ("table_token_budget", str(self.table_token_budget)),
            ("max_injection_rounds", str(self.max_injection_rounds)),
            ("include_demo", str(self.include_demo).lower()),
            ("fallback_on_sql_error", str(self.fallback_on_sql_error).lower()),
            ("result_markers", "|".join(self.result_markers)),
        ]


def save_run_config(config: RunConfig, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for key, value in config.to_pairs():
            fh.write("%s=%s\n" % (key, value))


def load_run_config(path: str) -> RunConfig:
    """Parse a key=value config file; unknown keys fail loudly."""
    values: Dict[str, str] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            stripped = line.strip()
            if not stripped or stripped.startswith("#"):
                continue
            if "=" not in stripped:
                raise ValueError("%s:%d: expected key=value" % (path, lineno))
            key, value = stripped.split("=", 1)
            values[key.strip()] = value.strip()
    return run_config_from_pairs(values)


def run_config_from_pairs(values: Dict[str, str]) -> RunConfig:
    config = RunConfig()
    known = {k for k, _ in config.to_pairs()}
    unknown = set(values) - known
    if unknown:
        raise ValueError("unknown config keys: %s" % ", ".join(sorted(unknown)))
    def _bool(text: str) -> bool:
        if text.lower() in ("true", "1", "yes"):
            return True
        if text.lower() in ("false", "0", "no"):
            return False
        raise ValueError("bad boolean %r" % text)
    kwargs: Dict[str, object] = {}
    if "max_new_tokens" in values:
        kwargs["max_new_tokens"] = int(values["max_new_tokens"])
    if "temperature" in values:
        kwargs["temperature"] = float(values["temperature"])
    if "table_token_budget" in values:
        kwargs["table_token_budget"] = int(values["table_token_budget"])
    if "max_injection_rounds" in values:
        kwargs["max_injection_rounds"] = int(values["max_injection_rounds"])
    if "include_demo" in values:
        kwargs["include_demo"] = _bool(values["include_demo"])
    if "fallback_on_sql_error" in values:
        kwargs["fallback_on_sql_error"] = _bool(values["fallback_on_sql_error"])
    if "result_markers" in values:
        kwargs["result_markers"] = tuple(
            m for m in values["result_markers"].split("|") if m
        )
    return replace(config, **kwargs)


@dataclass(frozen=True)
class RoundRecord:
    """What happened in one round: a generation and the block handled on it.

    ``generation`` is None for rounds that only skipped over a failed block
    without asking the model to continue (fallback disabled).
    """

    generation: Optional[str]
    detected_sql: Optional[str]
    execution_outcome: str
    injected_text: Optional[str] = None
    fallback_used: bool = False
    error_detail: Optional[str] = None

    def to_dict(self) -> dict:
        return {
            "generation": self.generation,
            "detected_sql": self.detected_sql,
            "execution_outcome": self.execution_outcome,
            "injected_text": self.injected_text,
            "fallback_used": self.fallback_used,
            "error_detail": self.error_detail,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "RoundRecord":
        return cls(
            generation=data.get("generation"),
            detected_sql=data.get("detected_sql"),
            execution_outcome=data["execution_outcome"],
            injected_text=data.get("injected_text"),
            fallback_used=bool(data.get("fallback_used", False)),
            error_detail=data.get("error_detail"),
        )


@dataclass(frozen=True)
class Trace:
    instance_id: str
    prompt: str
    rounds: Tuple[RoundRecord, ...]
    final_generation: str
    final_answer: FinalAnswer
    api_calls: int
    stopped_on_cap: bool = False

    def to_dict(self) -> dict:
        return {
            "instance_id": self.instance_id,
            "prompt": self.prompt,
            "rounds": [r.to_dict() for r in self.rounds],
            "final_generation": self.final_generation,
            "final_answer": self.final_answer.to_dict(),
            "api_calls": self.api_calls,
            "stopped_on_cap": self.stopped_on_cap,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "Trace":
        return cls(
            instance_id=data["instance_id"],
            prompt=data["prompt"],
            rounds=tuple(RoundRecord.from_dict(r) for r in data.get("rounds", [])),
            final_generation=data["final_generation"],
            final_answer=FinalAnswer.from_dict(data["final_answer"]),
            api_calls=int(data["api_calls"]),
            stopped_on_cap=bool(data.get("stopped_on_cap", False)),
        )


@dataclass(frozen=True)
class Outcome:
    instance_id: str
    final_answer: FinalAnswer
    api_calls: int
    status: str = "ok"  # "ok" | "backend_error"
    error: Optional[str] = None

    def to_dict(self) -> dict:
        return {
            "instance_id": self.instance_id,
            "final_answer": self.final_answer.to_dict(),
            "api_calls": self.api_calls,
            "status": self.status,
            "error": self.error,
        }


_BACKEND_ERRORS = (BackendUnavailable, ScriptExhausted, ScriptMismatch)


def run_instance(
    instance: Instance,
    backend: Backend,
    config: RunConfig = RunConfig(),
    templates: Optional[PromptTemplates] = None,
) -> Tuple[Outcome, Trace]:
    """Run the plan/SQL/reason loop for one instance.

    Returns an outcome plus a full trace.  Backend failures surface as an
    outcome with status ``backend_error`` and a partial trace; programming
    errors propagate.
    """
    table = instance.table
    if config.table_token_budget:
        table = truncate_to_budget(table, config.table_token_budget)
    work = replace(instance, table=table) if table is not instance.table else instance
    prompt = build_task_prompt(work, include_demo=config.include_demo, templates=templates)
    kind = task_kind_for(work)

    rounds: List[RoundRecord] = []
    assembled = ""
    resolved = 0
    injections = 0
    stopped_on_cap = False
    error: Optional[str] = None

    def _call(content: str) -> str:
        request = GenerationRequest.single_user(
            content,
            max_new_tokens=config.max_new_tokens,
            temperature=config.temperature,
        )
        return backend.generate(request, tag=instance.id).text

    try:
        pending: Optional[str] = _call(prompt)
        assembled = pending
        while True:
            blocks = segment_response(assembled, config.result_markers).sql_blocks
            if resolved >= len(blocks):
                if pending is not None:
                    rounds.append(
                        RoundRecord(
                            generation=pending,
                            detected_sql=None,
                            execution_outcome=OUTCOME_NO_SQL,
                        )
                    )
                break
            if injections >= config.max_injection_rounds:
                stopped_on_cap = True
                if pending is not None:
                    rounds.append(
                        RoundRecord(
                            generation=pending,
                            detected_sql=None,
                            execution_outcome=OUTCOME_NO_SQL,
                        )
                    )
                break
            block = blocks[resolved]
            detail: Optional[str] = None
            try:
                result = run_statement(block.sql_text, table)
                outcome = OUTCOME_OK
                injected: Optional[str] = format_result(result)
            except SqlError as exc:
                outcome = OUTCOME_SQL_ERROR
                detail = str(exc)
                injected = None
            if outcome == OUTCOME_SQL_ERROR and not config.fallback_on_sql_error:
                rounds.append(
                    RoundRecord(
                        generation=pending,
                        detected_sql=block.sql_text,
                        execution_outcome=outcome,
                        error_detail=detail,
                    )
                )
                pending = None
                resolved += 1
                continue
            fallback = outcome == OUTCOME_SQL_ERROR
            if fallback:
                injected = block.claimed_result
            rounds.append(
                RoundRecord(
                    generation=pending,
                    detected_sql=block.sql_text,
                    execution_outcome=outcome,
                    injected_text=injected,
                    fallback_used=fallback,
                    error_detail=detail,
                )
            )
            partial = resume_prefix(assembled, resolved, config.result_markers)
            if injected is not None:
                partial = partial + "\n" + injected
            resolved += 1
            injections += 1
            pending = _call(prompt + partial)
            assembled = partial + pending
    except _BACKEND_ERRORS as exc:
        error = str(exc)
        logger.warning("instance %s: backend error: %s", instance.id, error)

    answer = extract_final_answer(assembled, work.task, kind.labels) if assembled else FinalAnswer.missing()
    api_calls = sum(1 for r in rounds if r.generation is not None)
    trace = Trace(
        instance_id=instance.id,
        prompt=prompt,
        rounds=tuple(rounds),
        final_generation=assembled,
        final_answer=answer,
        api_calls=api_calls,
        stopped_on_cap=stopped_on_cap,
    )
    outcome_rec = Outcome(
        instance_id=instance.id,
        final_answer=answer,
        api_calls=api_calls,
        status="ok" if error is None else "backend_error",
        error=error,
    )
    return outcome_rec, trace


def run_batch(
    instances: Sequence[Instance],
    backend: Backend,
    config: RunConfig = RunConfig(),
    parallelism: int = 1,
    templates: Optional[PromptTemplates] = None,
) -> List[Tuple[Outcome, Trace]]:
    """Run many instances, preserving input order in the results.

    Each instance is isolated: a failure there yields a ``backend_error``
    outcome without affecting its neighbours.
    """
    if parallelism < 1:
        raise ValueError("parallelism must be at least 1")

    def _one(instance: Instance) -> Tuple[Outcome, Trace]:
        try:
            return run_instance(instance, backend, config, templates)
        except Exception as exc:  # keep the batch alive whatever happened
            logger.exception("instance %s failed", instance.id)
            answer = FinalAnswer.missing()
            return (
                Outcome(
                    instance_id=instance.id,
                    final_answer=answer,
                    api_calls=0,
                    status="backend_error",
                    error=str(exc),
                ),
                Trace(
                    instance_id=instance.id,
                    prompt="",
                    rounds=(),
                    final_generation="",
                    final_answer=answer,
                    api_calls=0,
                ),
            )

    if parallelism == 1 or len(instances) <= 1:
        return [_one(inst) for inst in instances]
    with ThreadPoolExecutor(max_workers=parallelism) as pool:
        return list(pool.map(_one, instances))


def mean_api_calls(outcomes: Sequence[Outcome]) -> float:
    if not outcomes:
        return 0.0
    return statistics.fmean(o.api_calls for o in outcomes)


def write_traces(results: Sequence[Tuple[Outcome, Trace]], path: str) -> None:
    """Write traces as JSONL, one line per instance, in the given order."""
    with open(path, "w", encoding="utf-8") as fh:
        for _, trace in results:
            fh.write(json.dumps(trace.to_dict(), ensure_ascii=False))
            fh.write("\n")


def write_outcomes(results: Sequence[Tuple[Outcome, Trace]], path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for outcome, _ in results:
            fh.write(json.dumps(outcome.to_dict(), ensure_ascii=False))
            fh.write("\n")


def load_traces(path: str) -> List[Trace]:
    traces: List[Trace] = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                traces.append(Trace.from_dict(json.loads(line)))
    return traces
