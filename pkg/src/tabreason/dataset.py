"""Builds instruction-tuning pairs from teacher generations.

A teacher model runs through the same execution-in-the-loop pipeline used
for inference, so the SQL in every kept response was actually executed.
Candidates whose final answer disagrees with the gold annotation are
dropped, and automatically detectable defects (unexecutable SQL, claimed
execution results that contradict the real ones) are tagged so exports can
exclude or study them.
"""

from __future__ import annotations

import json
import logging
import random
import re
from dataclasses import dataclass, replace
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

from .backends import Backend, IoFailure
from .evaluation import normalize_answer, score_outcome
from .orchestrator import Outcome, RunConfig, run_batch
from .prompts import PromptTemplates, build_task_prompt
from .responses import FinalAnswer, segment_response
from .sql import SqlError, format_result, run_statement
from .tables import Instance, _split_pipe_line, truncate_to_budget

logger = logging.getLogger(__name__)

TAG_SQL_ERROR = "sql_error"
TAG_EXECUTION_MISMATCH = "execution_mismatch"

SEGMENT_CHOICES = ("full", "reasoning-only", "planning-only", "answer-only")


class IdMismatch(ValueError):
    """Candidate ids and instance ids do not line up."""


@dataclass(frozen=True)
class Candidate:
    instance_id: str
    teacher_response: str
    extracted_answer: FinalAnswer
    consistent: bool
    error_tags: Tuple[str, ...] = ()

    def to_dict(self) -> dict:
        return {
            "instance_id": self.instance_id,
            "teacher_response": self.teacher_response,
            "extracted_answer": self.extracted_answer.to_dict(),
            "consistent": self.consistent,
            "error_tags": list(self.error_tags),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "Candidate":
        return cls(
            instance_id=data["instance_id"],
            teacher_response=data["teacher_response"],
            extracted_answer=FinalAnswer.from_dict(data["extracted_answer"]),
            consistent=bool(data["consistent"]),
            error_tags=tuple(data.get("error_tags", [])),
        )


@dataclass(frozen=True)
class GenerationError:
    instance_id: str
    error: str


@dataclass(frozen=True)
class Dropped:
    candidate: Candidate
    reason: str


def sample_instances(
    instances: Sequence[Instance], count: int, seed: int
) -> List[Instance]:
    """Uniformly sample ``count`` instances, keeping the original order."""
    if count >= len(instances):
        return list(instances)
    picked = random.Random(seed).sample(range(len(instances)), count)
    return [instances[i] for i in sorted(picked)]


def generate_candidates(
    instances: Sequence[Instance],
    backend: Backend,
    config: RunConfig = RunConfig(),
    parallelism: int = 1,
    templates: Optional[PromptTemplates] = None,
) -> Tuple[List[Candidate], List[GenerationError]]:
    """Run the teacher over instances and collect responses as candidates.

    Instances whose run failed at the backend are returned as error records
    instead of candidates; one input yields exactly one of the two.
    """
    results = run_batch(
        instances, backend, config=config, parallelism=parallelism, templates=templates
    )
    candidates: List[Candidate] = []
    errors: List[GenerationError] = []
    for instance, (outcome, trace) in zip(instances, results):
        if outcome.status != "ok":
            errors.append(
                GenerationError(instance_id=instance.id, error=outcome.error or "unknown")
            )
            continue
        candidate = Candidate(
            instance_id=instance.id,
            teacher_response=trace.final_generation,
            extracted_answer=outcome.final_answer,
            consistent=score_outcome(outcome, instance),
            error_tags=tag_response_errors(trace.final_generation, instance),
        )
        candidates.append(candidate)
    return candidates, errors


def tag_response_errors(response: str, instance: Instance) -> Tuple[str, ...]:
    """Detect machine-checkable defects in a teacher response.

    ``sql_error`` marks responses with at least one block that cannot be
    parsed or executed against the instance table.  ``execution_mismatch``
    marks blocks whose claimed result table disagrees with the real
    execution output (compared cell-by-cell after answer normalization,
    ignoring row order and an optional header line).
    """
    tags = set()
    for block in segment_response(response).sql_blocks:
        try:
            result = run_statement(block.sql_text, instance.table)
        except SqlError:
            tags.add(TAG_SQL_ERROR)
            continue
        if block.claimed_result is None:
            continue
        if not _claims_match(block.claimed_result, format_result(result)):
            tags.add(TAG_EXECUTION_MISMATCH)
    return tuple(sorted(tags))


def _grid(text: str) -> List[Tuple[str, ...]]:
    rows: List[Tuple[str, ...]] = []
    for line in text.splitlines():
        if not line.strip():
            continue
        rows.append(tuple(normalize_answer(cell) for cell in _split_pipe_line(line)))
    return rows


def _claims_match(claimed: str, actual: str) -> bool:
    actual_grid = _grid(actual)
    claimed_grid = _grid(claimed)
    if not actual_grid:
        return not claimed_grid
    header, body = actual_grid[0], actual_grid[1:]
    if claimed_grid and claimed_grid[0] == header:
        claimed_grid = claimed_grid[1:]
    return sorted(claimed_grid) == sorted(body)


def consistency_filter(
    candidates: Sequence[Candidate], instances: Sequence[Instance]
) -> Tuple[List[Candidate], List[Dropped]]:
    """Partition candidates into gold-consistent and dropped-with-reason."""
    by_id: Dict[str, Instance] = {}
    for instance in instances:
        if instance.id in by_id:
            raise IdMismatch("duplicate instance id %r" % instance.id)
        by_id[instance.id] = instance
    kept: List[Candidate] = []
    dropped: List[Dropped] = []
    for candidate in candidates:
        instance = by_id.get(candidate.instance_id)
        if instance is None:
            raise IdMismatch("candidate %r has no instance" % candidate.instance_id)
        if candidate.consistent:
            kept.append(candidate)
            continue
        answer = candidate.extracted_answer
        if answer.kind == "missing":
            reason = "no final answer found"
        else:
            predicted = answer.label or answer.text or ", ".join(answer.answers)
            gold = instance.gold.label or "; ".join(instance.gold.answers or ())
            reason = "answer %r does not match gold %r" % (predicted, gold)
        dropped.append(Dropped(candidate=candidate, reason=reason))
    return kept, dropped


_SECTION_RE = re.compile(r"^\s*(?:\*\*)?\s*([123])\s*[.)]")


def _section_starts(text: str) -> Dict[str, int]:
    """Offsets of the first ``1.``/``2.``/``3.`` headings, in order."""
    starts: Dict[str, int] = {}
    offset = 0
    expected = "1"
    for line in text.splitlines(keepends=True):
        match = _SECTION_RE.match(line)
        if match and match.group(1) == expected:
            starts[expected] = offset
            if expected == "3":
                break
            expected = chr(ord(expected) + 1)
        offset += len(line)
    return starts


def _conclusion(text: str) -> str:
    lines = [line for line in text.splitlines() if line.strip()]
    return lines[-1] if lines else ""


def select_segment(response: str, segment: str) -> str:
    """Cut a response down to the requested training shape.

    ``full`` keeps everything; ``reasoning-only`` removes the plan section;
    ``planning-only`` removes the final reasoning body but keeps the
    concluding answer sentence; ``answer-only`` keeps just that sentence.
    Responses without recognizable numbered sections are left whole (except
    for ``answer-only``, which always reduces to the last non-empty line).
    """
    if segment not in SEGMENT_CHOICES:
        raise ValueError("unknown segment %r" % segment)
    if segment == "full":
        return response
    if segment == "answer-only":
        return _conclusion(response)
    starts = _section_starts(response)
    if segment == "reasoning-only":
        if "1" not in starts or "2" not in starts:
            return response
        return response[: starts["1"]] + response[starts["2"] :]
    # planning-only
    if "3" not in starts:
        return response
    head = response[: starts["3"]].rstrip()
    conclusion = _conclusion(response)
    return head + "\n\n" + conclusion if conclusion else head


def export_jsonl(
    candidates: Sequence[Candidate],
    instances: Sequence[Instance],
    path: str,
    segment: str = "full",
    config: RunConfig = RunConfig(),
    templates: Optional[PromptTemplates] = None,
) -> int:
    """Write training pairs as JSONL; returns the number of lines written.

    The prompt is rebuilt exactly as the orchestrator built it (including
    table truncation), so exports are reproducible from the candidate file
    and the instance data alone.
    """
    if not candidates:
        raise ValueError("no candidates to export")
    by_id = {instance.id: instance for instance in instances}
    records = []
    for candidate in candidates:
        instance = by_id.get(candidate.instance_id)
        if instance is None:
            raise IdMismatch("candidate %r has no instance" % candidate.instance_id)
        table = instance.table
        if config.table_token_budget:
            table = truncate_to_budget(table, config.table_token_budget)
        work = replace(instance, table=table) if table is not instance.table else instance
        prompt = build_task_prompt(
            work, include_demo=config.include_demo, templates=templates
        )
        records.append(
            {
                "id": candidate.instance_id,
                "prompt": prompt,
                "response": select_segment(candidate.teacher_response, segment),
                "tags": list(candidate.error_tags),
            }
        )
    try:
        with open(path, "w", encoding="utf-8") as fh:
            for record in records:
                fh.write(json.dumps(record, ensure_ascii=False))
                fh.write("\n")
    except OSError as exc:
        raise IoFailure(str(exc)) from exc
    return len(records)


def write_candidates(candidates: Iterable[Candidate], path: str) -> None:
    try:
        with open(path, "w", encoding="utf-8") as fh:
            for candidate in candidates:
                fh.write(json.dumps(candidate.to_dict(), ensure_ascii=False))
                fh.write("\n")
    except OSError as exc:
        raise IoFailure(str(exc)) from exc


def load_candidates(path: str) -> List[Candidate]:
    candidates: List[Candidate] = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                candidates.append(Candidate.from_dict(json.loads(line)))
    return candidates
