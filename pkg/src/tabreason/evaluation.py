"""Scoring of predicted answers against gold annotations.

Matching is intentionally forgiving about surface form: answers are
lowercased, emphasis and quoting are stripped, whitespace and comma spacing
are normalized, and strings that are entirely numeric are canonicalized
through the same coercion the SQL engine uses (so "2,000" equals "2000" and
"48%" equals "0.48").  Verification tasks score by label; QA tasks score by
denotation (multiset equality of normalized answers).  An LLM judge is
available as a separate opt-in metric.
"""

from __future__ import annotations

import json
import re
from collections import Counter
from dataclasses import dataclass, field
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

from .backends import Backend, GenerationRequest
from .orchestrator import Outcome, Trace, mean_api_calls
from .prompts import PromptTemplates, build_judge_prompt, task_kind_for
from .responses import (
    LABELS_THREEWAY,
    _strip_decorations,
    _strip_emphasis,
)
from .tables import TASK_FACT_VERIFICATION, Instance, cell_as_number, format_number

__all__ = [
    "LengthMismatch",
    "IdMismatch",
    "JudgeVerdict",
    "MacroF1",
    "TagGroup",
    "EvalReport",
    "normalize_answer",
    "denotation_match",
    "three_class_f1",
    "judge_verdict",
    "score_outcome",
    "build_report",
    "render_report",
]


class LengthMismatch(ValueError):
    """Prediction and gold sequences have different lengths."""


class IdMismatch(ValueError):
    """Outcome, trace and instance ids do not line up."""


_COMMA_RE = re.compile(r"\s*,\s*")
_WS_RE = re.compile(r"\s+")


def normalize_answer(text: str) -> str:
    """Reduce an answer string to a canonical comparison form."""
    text = _strip_emphasis(text)
    text = _strip_decorations(text.strip())
    number = cell_as_number(text)
    if number is not None:
        return format_number(number)
    text = text.lower()
    text = _WS_RE.sub(" ", text)
    text = _COMMA_RE.sub(", ", text)
    return text.strip()


def denotation_match(predicted: Sequence[str], gold: Sequence[str]) -> bool:
    """True iff the two answer lists are equal as normalized multisets."""
    if not gold:
        raise ValueError("gold answer list must not be empty")
    return Counter(map(normalize_answer, predicted)) == Counter(
        map(normalize_answer, gold)
    )


@dataclass(frozen=True)
class MacroF1:
    value: float
    per_class: Mapping[str, float]
    absent_classes: Tuple[str, ...] = ()


def three_class_f1(
    predictions: Sequence[str],
    golds: Sequence[str],
    labels: Sequence[str] = LABELS_THREEWAY,
) -> MacroF1:
    """Macro-averaged F1 over a fixed label set.

    Classes that occur in neither sequence contribute an F1 of 0 and are
    listed in ``absent_classes`` so reports can flag them.
    """
    if len(predictions) != len(golds):
        raise LengthMismatch(
            "got %d predictions for %d golds" % (len(predictions), len(golds))
        )
    if not golds:
        raise ValueError("cannot score empty label sequences")
    canon = {label.casefold(): label for label in labels}

    def _canon(raw: str) -> str:
        return canon.get(raw.casefold(), raw)

    pred = [_canon(p) for p in predictions]
    gold = [_canon(g) for g in golds]
    per_class: Dict[str, float] = {}
    absent: List[str] = []
    for label in labels:
        tp = sum(1 for p, g in zip(pred, gold) if p == label and g == label)
        fp = sum(1 for p, g in zip(pred, gold) if p == label and g != label)
        fn = sum(1 for p, g in zip(pred, gold) if p != label and g == label)
        if tp == fp == fn == 0:
            per_class[label] = 0.0
            absent.append(label)
            continue
        precision = tp / (tp + fp) if tp + fp else 0.0
        recall = tp / (tp + fn) if tp + fn else 0.0
        if precision + recall == 0:
            per_class[label] = 0.0
        else:
            per_class[label] = 2 * precision * recall / (precision + recall)
    value = sum(per_class.values()) / len(labels)
    return MacroF1(value=value, per_class=per_class, absent_classes=tuple(absent))


@dataclass(frozen=True)
class JudgeVerdict:
    verdict: str  # "yes" | "no" | "unparseable"
    raw: str


_VERDICT_RE = re.compile(r"^\W*(yes|no)\b", re.IGNORECASE)


def judge_verdict(
    question: str,
    gold,
    predicted: str,
    backend: Backend,
    templates: Optional[PromptTemplates] = None,
    max_new_tokens: int = 16,
) -> JudgeVerdict:
    """Ask the backend whether ``predicted`` answers the question correctly."""
    prompt = build_judge_prompt(question, gold, predicted, templates=templates)
    request = GenerationRequest.single_user(
        prompt, max_new_tokens=max_new_tokens, temperature=0.0
    )
    raw = backend.generate(request, tag="judge").text
    match = _VERDICT_RE.match(raw.strip())
    if match is None:
        return JudgeVerdict(verdict="unparseable", raw=raw)
    return JudgeVerdict(verdict=match.group(1).lower(), raw=raw)


def score_outcome(outcome: Outcome, instance: Instance) -> bool:
    """Binary correctness of one outcome; missing answers are wrong."""
    answer = outcome.final_answer
    if answer.kind == "missing":
        return False
    if instance.task == TASK_FACT_VERIFICATION:
        if answer.label is None or instance.gold.label is None:
            return False
        return answer.label.casefold() == instance.gold.label.casefold()
    gold = instance.gold.answers or ()
    if not gold:
        return False
    if answer.kind == "short":
        return denotation_match(answer.answers, gold)
    predicted = answer.text if answer.text is not None else " ".join(answer.answers)
    if predicted is None:
        return False
    target = normalize_answer(predicted)
    return any(normalize_answer(g) == target for g in gold)


@dataclass(frozen=True)
class TagGroup:
    count: int
    correct: int

    @property
    def accuracy(self) -> float:
        return self.correct / self.count if self.count else 0.0


@dataclass(frozen=True)
class EvalReport:
    scores: Mapping[str, float]
    breakdowns: Mapping[str, Mapping[str, TagGroup]]
    mean_api_calls: float
    evaluated: int
    missing_answer: int
    macro_f1: Optional[MacroF1] = None
    judge_counts: Mapping[str, int] = field(default_factory=dict)

    def to_dict(self) -> dict:
        data = {
            "scores": dict(self.scores),
            "breakdowns": {
                key: {
                    value: {"count": g.count, "correct": g.correct, "accuracy": g.accuracy}
                    for value, g in groups.items()
                }
                for key, groups in self.breakdowns.items()
            },
            "mean_api_calls": self.mean_api_calls,
            "evaluated": self.evaluated,
            "missing_answer": self.missing_answer,
        }
        if self.macro_f1 is not None:
            data["macro_f1"] = {
                "value": self.macro_f1.value,
                "per_class": dict(self.macro_f1.per_class),
                "absent_classes": list(self.macro_f1.absent_classes),
            }
        if self.judge_counts:
            data["judge_counts"] = dict(self.judge_counts)
        return data

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


_UNTAGGED = "(untagged)"


def build_report(
    outcomes: Sequence[Outcome],
    traces: Optional[Sequence[Trace]],
    instances: Sequence[Instance],
    metrics: Optional[Sequence[str]] = None,
    judge_verdicts: Optional[Mapping[str, JudgeVerdict]] = None,
) -> EvalReport:
    """Score a run against its instances and group results by tags.

    ``metrics`` may name any of ``accuracy``, ``three_class_f1``; by default
    accuracy is always computed and the macro F1 is added when threeway
    verification instances are present.  Judge verdicts, if supplied, are
    tallied separately and never folded into accuracy.
    """
    if [o.instance_id for o in outcomes] != [i.id for i in instances]:
        raise IdMismatch("outcome ids do not match instance ids")
    if traces is not None and [t.instance_id for t in traces] != [i.id for i in instances]:
        raise IdMismatch("trace ids do not match instance ids")

    wanted = set(metrics) if metrics is not None else None
    unknown = (wanted or set()) - {"accuracy", "three_class_f1"}
    if unknown:
        raise ValueError("unknown metrics: %s" % ", ".join(sorted(unknown)))

    flags = [score_outcome(o, i) for o, i in zip(outcomes, instances)]
    evaluated = len(outcomes)
    missing = sum(1 for o in outcomes if o.final_answer.kind == "missing")
    scores: Dict[str, float] = {}
    if wanted is None or "accuracy" in wanted:
        scores["accuracy"] = (sum(flags) / evaluated) if evaluated else 0.0

    macro: Optional[MacroF1] = None
    threeway_pairs = [
        (o.final_answer.label or "", i.gold.label or "")
        for o, i in zip(outcomes, instances)
        if i.task == TASK_FACT_VERIFICATION
        and task_kind_for(i).labels is not None
        and set(l.casefold() for l in task_kind_for(i).labels or ())
        == set(l.casefold() for l in LABELS_THREEWAY)
    ]
    if (wanted is None and threeway_pairs) or (wanted and "three_class_f1" in wanted):
        if not threeway_pairs:
            raise ValueError("three_class_f1 requested but no threeway instances")
        macro = three_class_f1(
            [p for p, _ in threeway_pairs], [g for _, g in threeway_pairs]
        )
        scores["three_class_f1"] = macro.value

    keys = sorted({key for inst in instances for key in (inst.tags or {})})
    breakdowns: Dict[str, Dict[str, TagGroup]] = {}
    for key in keys:
        groups: Dict[str, List[bool]] = {}
        for inst, flag in zip(instances, flags):
            tags = inst.tags or {}
            value = str(tags[key]) if key in tags else _UNTAGGED
            groups.setdefault(value, []).append(flag)
        breakdowns[key] = {
            value: TagGroup(count=len(hits), correct=sum(hits))
            for value, hits in sorted(groups.items())
        }

    judge_counts: Dict[str, int] = {}
    if judge_verdicts:
        tally = Counter(v.verdict for v in judge_verdicts.values())
        judge_counts = {k: tally.get(k, 0) for k in ("yes", "no", "unparseable")}

    return EvalReport(
        scores=scores,
        breakdowns=breakdowns,
        mean_api_calls=mean_api_calls(outcomes),
        evaluated=evaluated,
        missing_answer=missing,
        macro_f1=macro,
        judge_counts=judge_counts,
    )


def render_report(report: EvalReport) -> str:
    """Format a report as a fixed-width text table."""
    lines: List[str] = []
    width = 28
    lines.append("%-*s %10s" % (width, "metric", "value"))
    lines.append("-" * (width + 11))
    for name in sorted(report.scores):
        lines.append("%-*s %10.4f" % (width, name, report.scores[name]))
    lines.append("%-*s %10.4f" % (width, "mean_api_calls", report.mean_api_calls))
    lines.append("%-*s %10d" % (width, "evaluated", report.evaluated))
    lines.append("%-*s %10d" % (width, "missing_answer", report.missing_answer))
    if report.macro_f1 is not None:
        for label, value in report.macro_f1.per_class.items():
            lines.append("%-*s %10.4f" % (width, "f1[%s]" % label, value))
        if report.macro_f1.absent_classes:
            lines.append(
                "%-*s %10s"
                % (width, "absent_classes", ",".join(report.macro_f1.absent_classes))
            )
    if report.judge_counts:
        for verdict in ("yes", "no", "unparseable"):
            lines.append(
                "%-*s %10d" % (width, "judge[%s]" % verdict, report.judge_counts.get(verdict, 0))
            )
    for key, groups in report.breakdowns.items():
        lines.append("")
        lines.append("%-*s %6s %8s %10s" % (width, "tag:" + key, "count", "correct", "accuracy"))
        lines.append("-" * (width + 27))
        for value, group in groups.items():
            lines.append(
                "%-*s %6d %8d %10.4f"
                % (width, value, group.count, group.correct, group.accuracy)
            )
    return "\n".join(lines)
