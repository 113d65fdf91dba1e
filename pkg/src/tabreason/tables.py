"""Pipe-delimited table model and helpers.

Tables move through the pipeline as plain text grids: one line per row,
cells separated by ``|``, with optional ``Page Title:`` / ``Section title:`` /
``Caption:`` metadata lines above the header.  This module owns parsing and
serialization of that format, the token-budget truncation used before
prompting, and the numeric coercion rule shared by the SQL engine and the
answer evaluator.

A literal pipe inside a cell is escaped as ``\\|`` in serialized form and
unescaped on parse, so parse/serialize round-trips are exact.  The strings
``""`` and ``"-"`` both mean "empty cell"; the dash is preserved verbatim
when re-serializing.
"""

from __future__ import annotations

import json
import logging
import math
import re
from dataclasses import dataclass, field, replace
from typing import Dict, Iterable, List, Optional, Sequence, Tuple, Union

logger = logging.getLogger(__name__)

EMPTY_MARKERS = ("", "-")

TASK_SHORT_QA = "short_qa"
TASK_FACT_VERIFICATION = "fact_verification"
TASK_FREE_QA = "free_qa"
KNOWN_TASKS = (TASK_SHORT_QA, TASK_FACT_VERIFICATION, TASK_FREE_QA)


class EmptyInput(ValueError):
    """Raised when a table text contains no header line."""


class BudgetTooSmall(ValueError):
    """Raised when even the metadata and header exceed the token budget."""


@dataclass(frozen=True)
class Cell:
    """A single table cell holding trimmed text."""

    raw: str

    def __post_init__(self) -> None:
        trimmed = self.raw.strip()
        if trimmed != self.raw:
            object.__setattr__(self, "raw", trimmed)

    @property
    def is_empty(self) -> bool:
        return self.raw in EMPTY_MARKERS

    def __str__(self) -> str:  # pragma: no cover - debug convenience
        return self.raw


@dataclass(frozen=True)
class SentenceContext:
    """A supporting sentence, optionally titled."""

    text: str
    title: Optional[str] = None


@dataclass(frozen=True)
class GoldAnswer:
    """Reference answer: a list of strings for QA, or a label for verification."""

    answers: Optional[Tuple[str, ...]] = None
    label: Optional[str] = None

    def __post_init__(self) -> None:
        if (self.answers is None) == (self.label is None):
            raise ValueError("gold must carry exactly one of answers or label")
        if self.answers is not None:
            object.__setattr__(self, "answers", tuple(self.answers))


@dataclass(frozen=True)
class Table:
    """An immutable rectangular grid with optional metadata."""

    headers: Tuple[str, ...]
    rows: Tuple[Tuple[Cell, ...], ...]
    page_title: Optional[str] = None
    section_title: Optional[str] = None
    caption: Optional[str] = None
    warnings: Tuple[str, ...] = field(default=(), compare=False)

    def __post_init__(self) -> None:
        if not self.headers:
            raise ValueError("table needs at least one column")
        object.__setattr__(self, "headers", tuple(h.strip() for h in self.headers))
        width = len(self.headers)
        norm_rows = []
        for i, row in enumerate(self.rows):
            if len(row) != width:
                raise ValueError(
                    "row %d has %d cells, expected %d" % (i, len(row), width)
                )
            norm_rows.append(tuple(c if isinstance(c, Cell) else Cell(str(c)) for c in row))
        object.__setattr__(self, "rows", tuple(norm_rows))

    @classmethod
    def from_lists(
        cls,
        headers: Sequence[str],
        rows: Sequence[Sequence[str]],
        page_title: Optional[str] = None,
        section_title: Optional[str] = None,
        caption: Optional[str] = None,
    ) -> "Table":
        return cls(
            headers=tuple(headers),
            rows=tuple(tuple(Cell(str(v)) for v in row) for row in rows),
            page_title=page_title,
            section_title=section_title,
            caption=caption,
        )

    @property
    def n_rows(self) -> int:
        return len(self.rows)

    @property
    def n_cols(self) -> int:
        return len(self.headers)

    def column_values(self, index: int) -> List[str]:
        return [row[index].raw for row in self.rows]


@dataclass(frozen=True)
class Instance:
    """One task item: a question or claim grounded in a table."""

    id: str
    task: str
    query: str
    table: Table
    sentences: Tuple[SentenceContext, ...] = ()
    gold: Optional[GoldAnswer] = None
    tags: Dict[str, object] = field(default_factory=dict)
    labels: Optional[Tuple[str, ...]] = None

    def __post_init__(self) -> None:
        if self.task not in KNOWN_TASKS:
            raise ValueError("unknown task %r" % (self.task,))
        object.__setattr__(self, "sentences", tuple(self.sentences))
        if self.labels is not None:
            object.__setattr__(self, "labels", tuple(self.labels))


# ---------------------------------------------------------------------------
# cell escaping


def _escape_cell(text: str) -> str:
    return text.replace("|", "\\|")


def _split_pipe_line(line: str) -> List[str]:
    """Split a grid line on unescaped pipes, honouring ``\\|`` escapes."""
    cells: List[str] = []
    buf: List[str] = []
    i = 0
    n = len(line)
    while i < n:
        ch = line[i]
        if ch == "\\" and i + 1 < n and line[i + 1] == "|":
            buf.append("|")
            i += 2
            continue
        if ch == "|":
            cells.append("".join(buf))
            buf = []
            i += 1
            continue
        buf.append(ch)
        i += 1
    cells.append("".join(buf))
    # Leading/trailing pipes produce empty boundary fields; drop them so that
    # "| a | b |" and "a | b" both yield two cells.
    if len(cells) > 1 and line.lstrip().startswith("|") and cells[0].strip() == "":
        cells = cells[1:]
    if len(cells) > 1 and _ends_with_unescaped_pipe(line) and cells[-1].strip() == "":
        cells = cells[:-1]
    return [c.strip() for c in cells]


def _ends_with_unescaped_pipe(line: str) -> bool:
    stripped = line.rstrip()
    if not stripped.endswith("|"):
        return False
    backslashes = 0
    for ch in reversed(stripped[:-1]):
        if ch == "\\":
            backslashes += 1
        else:
            break
    return backslashes % 2 == 0


_META_PREFIXES = (
    ("page title", "page_title"),
    ("paper title", "page_title"),
    ("section title", "section_title"),
    ("table caption", "caption"),
    ("caption", "caption"),
)


def _match_metadata(line: str) -> Optional[Tuple[str, str]]:
    if line.lstrip().startswith("|"):
        return None
    lowered = line.lower()
    for prefix, attr in _META_PREFIXES:
        if lowered.startswith(prefix):
            rest = line[len(prefix):].lstrip()
            if rest.startswith(":"):
                return attr, rest[1:].strip()
    return None


# ---------------------------------------------------------------------------
# parse / serialize


def parse_pipe_table(text: str, meta: Optional[Iterable[str]] = None) -> Table:
    """Parse a pipe-delimited grid into a :class:`Table`.

    The first non-metadata, non-blank line is the header.  Ragged data rows
    are padded with empty cells or truncated to the header width, and each
    adjustment is recorded in ``table.warnings``.  Raises :class:`EmptyInput`
    when no header line is present.
    """
    metadata: Dict[str, Optional[str]] = {
        "page_title": None,
        "section_title": None,
        "caption": None,
    }
    if meta is not None:
        for line in meta:
            hit = _match_metadata(line)
            if hit:
                metadata[hit[0]] = hit[1]

    headers: Optional[List[str]] = None
    rows: List[Tuple[Cell, ...]] = []
    warnings: List[str] = []

    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        if headers is None:
            hit = _match_metadata(line)
            if hit:
                metadata[hit[0]] = hit[1]
                continue
            headers = _split_pipe_line(line)
            continue
        fields = _split_pipe_line(line)
        width = len(headers)
        if len(fields) < width:
            warnings.append(
                "line %d: padded row from %d to %d cells" % (lineno, len(fields), width)
            )
            fields = fields + [""] * (width - len(fields))
        elif len(fields) > width:
            warnings.append(
                "line %d: truncated row from %d to %d cells" % (lineno, len(fields), width)
            )
            fields = fields[:width]
        rows.append(tuple(Cell(f) for f in fields))

    if headers is None:
        raise EmptyInput("no header line found")
    for w in warnings:
        logger.debug("parse_pipe_table: %s", w)
    return Table(
        headers=tuple(headers),
        rows=tuple(rows),
        page_title=metadata["page_title"],
        section_title=metadata["section_title"],
        caption=metadata["caption"],
        warnings=tuple(warnings),
    )


def serialize_for_prompt(table: Table) -> str:
    """Render a table in the canonical prompt format.

    Metadata lines come first when present, then the header row, then data
    rows, all pipe-separated with single-space padding.
    """
    lines: List[str] = []
    if table.page_title:
        lines.append("Page Title: %s" % table.page_title)
    if table.section_title:
        lines.append("Section title: %s" % table.section_title)
    if table.caption:
        lines.append("Caption: %s" % table.caption)
    lines.append(_format_grid_line(table.headers))
    for row in table.rows:
        lines.append(_format_grid_line([c.raw for c in row]))
    return "\n".join(lines)


def _format_grid_line(values: Sequence[str]) -> str:
    return "| " + " | ".join(_escape_cell(v) for v in values) + " |"


# ---------------------------------------------------------------------------
# token budgeting


def estimate_tokens(text: str) -> int:
    """Cheap token-count proxy: one token per four characters, rounded up."""
    return (len(text) + 3) // 4


def truncate_to_budget(table: Table, budget: int) -> Table:
    """Drop trailing rows until the serialized table fits the token budget.

    Header and metadata are never dropped; if they alone do not fit under
    ``budget``, :class:`BudgetTooSmall` is raised.  The kept rows are always
    a prefix of the original rows.
    """
    base = serialize_for_prompt(replace(table, rows=(), warnings=()))
    if estimate_tokens(base) >= budget:
        raise BudgetTooSmall(
            "budget %d cannot hold metadata and header (%d tokens)"
            % (budget, estimate_tokens(base))
        )
    total = len(base)
    kept = 0
    for row in table.rows:
        line = _format_grid_line([c.raw for c in row])
        if (total + 1 + len(line) + 3) // 4 > budget:
            break
        total += 1 + len(line)
        kept += 1
    if kept == table.n_rows:
        return table
    warnings = table.warnings + (
        "dropped %d trailing rows to fit budget %d" % (table.n_rows - kept, budget),
    )
    return replace(table, rows=table.rows[:kept], warnings=warnings)


# ---------------------------------------------------------------------------
# numeric coercion


_NUMBER_RE = re.compile(r"^(?:\d+\.?\d*|\.\d+)$")


def cell_as_number(value: Union[str, Cell, None]) -> Optional[float]:
    """Coerce a cell to a float, or return ``None``.

    Strips thousands commas and a leading sign; a trailing ``%`` divides the
    value by 100.  Anything else that is not a plain decimal literal (dates,
    times, ranges, text) yields ``None``.
    """
    if value is None:
        return None
    text = value.raw if isinstance(value, Cell) else str(value)
    text = text.strip()
    if text in EMPTY_MARKERS:
        return None
    percent = text.endswith("%")
    if percent:
        text = text[:-1].strip()
    text = text.replace(",", "")
    sign = 1.0
    if text[:1] in ("+", "-"):
        sign = -1.0 if text[0] == "-" else 1.0
        text = text[1:]
    if not _NUMBER_RE.match(text):
        return None
    number = sign * float(text)
    if percent:
        number /= 100.0
    return number


def format_number(value: float) -> str:
    """Render a float the way cells print: integers without a decimal point."""
    if math.isfinite(value) and value == int(value) and abs(value) < 1e15:
        return str(int(value))
    return repr(value)


# ---------------------------------------------------------------------------
# instance (de)serialization


def table_to_dict(table: Table) -> Dict[str, object]:
    out: Dict[str, object] = {}
    if table.page_title is not None:
        out["page_title"] = table.page_title
    if table.section_title is not None:
        out["section_title"] = table.section_title
    if table.caption is not None:
        out["caption"] = table.caption
    out["headers"] = list(table.headers)
    out["rows"] = [[c.raw for c in row] for row in table.rows]
    return out


def table_from_dict(data: Dict[str, object]) -> Table:
    return Table.from_lists(
        headers=[str(h) for h in data["headers"]],
        rows=[[str(v) for v in row] for row in data.get("rows", [])],
        page_title=data.get("page_title"),
        section_title=data.get("section_title"),
        caption=data.get("caption"),
    )


def instance_to_dict(instance: Instance) -> Dict[str, object]:
    out: Dict[str, object] = {
        "id": instance.id,
        "task": instance.task,
        "query": instance.query,
        "table": table_to_dict(instance.table),
    }
    if instance.sentences:
        out["sentences"] = [
            {"text": s.text} if s.title is None else {"title": s.title, "text": s.text}
            for s in instance.sentences
        ]
    if instance.gold is not None:
        if instance.gold.answers is not None:
            out["gold"] = {"answers": list(instance.gold.answers)}
        else:
            out["gold"] = {"label": instance.gold.label}
    if instance.labels is not None:
        out["labels"] = list(instance.labels)
    if instance.tags:
        out["tags"] = dict(instance.tags)
    return out


def instance_from_dict(data: Dict[str, object]) -> Instance:
    gold = None
    if "gold" in data and data["gold"] is not None:
        g = data["gold"]
        if "answers" in g:
            gold = GoldAnswer(answers=tuple(str(a) for a in g["answers"]))
        elif "label" in g:
            gold = GoldAnswer(label=str(g["label"]))
        else:
            raise ValueError("gold must carry answers or label")
    sentences = tuple(
        SentenceContext(text=str(s["text"]), title=s.get("title"))
        for s in data.get("sentences", [])
    )
    labels = data.get("labels")
    return Instance(
        id=str(data["id"]),
        task=str(data["task"]),
        query=str(data["query"]),
        table=table_from_dict(data["table"]),
        sentences=sentences,
        gold=gold,
        tags=dict(data.get("tags", {})),
        labels=tuple(str(l) for l in labels) if labels is not None else None,
    )


def load_instances(path: str) -> List[Instance]:
    """Read instances from a JSONL file, one object per line."""
    out: List[Instance] = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                out.append(instance_from_dict(json.loads(line)))
            except (ValueError, KeyError) as exc:
                raise ValueError("%s:%d: bad instance: %s" % (path, lineno, exc))
    return out


def dump_instances(instances: Iterable[Instance], path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for inst in instances:
            fh.write(json.dumps(instance_to_dict(inst), ensure_ascii=False))
            fh.write("\n")
