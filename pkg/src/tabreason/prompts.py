"""Prompt assembly for the three task families.

Prompts are built from plain-text pieces shipped under ``tabreason/data``:
a one-shot demonstration per task family and a task instruction that tells
the model to plan, write SQL with an expected result, and then reason to a
final answer.  Sections appear in a fixed order ending with ``## Answer`` so
the generation starts exactly where the answer belongs.  All pieces can be
overridden by pointing :meth:`PromptTemplates.from_dir` at a directory with
files of the same names.
"""

from __future__ import annotations

from dataclasses import dataclass
from importlib import resources
from typing import Optional, Sequence, Tuple, Union

from .tables import (
    Instance,
    TASK_FACT_VERIFICATION,
    TASK_FREE_QA,
    TASK_SHORT_QA,
    serialize_for_prompt,
)
from .responses import LABELS_BINARY, LABELS_THREEWAY


class UnsupportedTask(ValueError):
    """Raised for a task name outside the supported set."""


@dataclass(frozen=True)
class TaskKind:
    name: str
    labels: Optional[Tuple[str, ...]] = None


SHORT_QA = TaskKind(TASK_SHORT_QA)
FREE_QA = TaskKind(TASK_FREE_QA)
FACT_BINARY = TaskKind(TASK_FACT_VERIFICATION, LABELS_BINARY)
FACT_THREEWAY = TaskKind(TASK_FACT_VERIFICATION, LABELS_THREEWAY)


def task_kind_for(instance: Instance) -> TaskKind:
    """Resolve the task family and, for verification, its label set.

    Explicit ``instance.labels`` win; otherwise a true/false gold label
    selects the binary set and anything else the three-way set.
    """
    if instance.task == TASK_SHORT_QA:
        return SHORT_QA
    if instance.task == TASK_FREE_QA:
        return FREE_QA
    if instance.task == TASK_FACT_VERIFICATION:
        if instance.labels:
            return TaskKind(TASK_FACT_VERIFICATION, tuple(instance.labels))
        if instance.gold is not None and instance.gold.label is not None:
            if instance.gold.label.strip().lower() in ("true", "false"):
                return FACT_BINARY
        return FACT_THREEWAY
    raise UnsupportedTask("no prompt template for task %r" % (instance.task,))


_PIECES = (
    "instruction_short_qa",
    "instruction_fact_binary",
    "instruction_fact_threeway",
    "instruction_free_qa",
    "demo_short_qa",
    "demo_fact_binary",
    "demo_fact_threeway",
    "judge_prompt",
)


class PromptTemplates:
    """The named text pieces prompts are assembled from."""

    def __init__(self, pieces: dict) -> None:
        missing = [name for name in _PIECES if name not in pieces]
        if missing:
            raise ValueError("missing template pieces: %s" % ", ".join(missing))
        self.pieces = dict(pieces)

    @classmethod
    def default(cls) -> "PromptTemplates":
        global _DEFAULT
        if _DEFAULT is None:
            data = resources.files("tabreason").joinpath("data")
            _DEFAULT = cls(
                {
                    name: data.joinpath(name + ".txt").read_text("utf-8").rstrip("\n")
                    for name in _PIECES
                }
            )
        return _DEFAULT

    @classmethod
    def from_dir(cls, path: str) -> "PromptTemplates":
        """Load overrides from a directory, falling back to the defaults."""
        import os

        base = dict(cls.default().pieces)
        for name in _PIECES:
            candidate = os.path.join(path, name + ".txt")
            if os.path.exists(candidate):
                with open(candidate, "r", encoding="utf-8") as fh:
                    base[name] = fh.read().rstrip("\n")
        return cls(base)

    def instruction_for(self, kind: TaskKind) -> str:
        if kind.name == TASK_SHORT_QA:
            return self.pieces["instruction_short_qa"]
        if kind.name == TASK_FREE_QA:
            return self.pieces["instruction_free_qa"]
        if kind.name == TASK_FACT_VERIFICATION:
            if kind.labels and set(l.lower() for l in kind.labels) == {"true", "false"}:
                return self.pieces["instruction_fact_binary"]
            return self.pieces["instruction_fact_threeway"]
        raise UnsupportedTask("no instruction for task %r" % (kind.name,))

    def demo_for(self, kind: TaskKind) -> Optional[str]:
        if kind.name == TASK_SHORT_QA:
            return self.pieces["demo_short_qa"]
        if kind.name == TASK_FACT_VERIFICATION:
            if kind.labels and set(l.lower() for l in kind.labels) == {"true", "false"}:
                return self.pieces["demo_fact_binary"]
            return self.pieces["demo_fact_threeway"]
        return None


_DEFAULT: Optional[PromptTemplates] = None


def build_task_prompt(
    instance: Instance,
    include_demo: bool = True,
    templates: Optional[PromptTemplates] = None,
) -> str:
    """Assemble the full prompt for one instance.

    Section order: optional demonstration, the question or claim, the table
    context, sentence context when present, the task instruction, and a
    trailing ``## Answer`` header.
    """
    kind = task_kind_for(instance)
    t = templates or PromptTemplates.default()
    parts = []
    if include_demo:
        demo = t.demo_for(kind)
        if demo:
            parts.append(demo)
    heading = "## Claim" if kind.name == TASK_FACT_VERIFICATION else "## Question"
    parts.append("%s\n%s" % (heading, instance.query))
    parts.append("## Table Context\n%s" % serialize_for_prompt(instance.table))
    if instance.sentences:
        lines = [
            "%s: %s" % (s.title, s.text) if s.title else s.text
            for s in instance.sentences
        ]
        parts.append("## Sentence Context\n%s" % "\n".join(lines))
    parts.append("## Task\n%s" % t.instruction_for(kind))
    parts.append("## Answer")
    return "\n\n".join(parts)


def build_judge_prompt(
    question: str,
    gold: Union[str, Sequence[str]],
    predicted: str,
    templates: Optional[PromptTemplates] = None,
) -> str:
    """Fill the yes/no answer-checking prompt."""
    t = templates or PromptTemplates.default()
    if not isinstance(gold, str):
        gold = "; ".join(gold)
    return t.pieces["judge_prompt"].format(
        question=question, gold=gold, predicted=predicted
    )
