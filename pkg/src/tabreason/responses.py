"""Segmentation and answer extraction for model generations.

A generation may embed SQL in two shapes: a fenced block opened by a line
starting with ```` ```sql ```` and closed by the next line starting with
```` ``` ````, or a bare ``SQL:`` line followed by statement lines.  Either
shape may be followed by a result-marker line (``Executed result:``,
``Expected Result:``, matched case-insensitively) introducing the result the
model claims the query produces.

Segmentation is lossless: the prefix text, the raw text of each detected
block, and the suffix text concatenate back to the original string,
byte for byte.  That property is what lets the pipeline cut a generation at
a result marker, splice in the real execution output, and ask the model to
continue from there.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

DEFAULT_RESULT_MARKERS: Tuple[str, ...] = (
    "Executed result:",
    "Expected Result:",
    "Expected result:",
)

_NUMBERED_HEADING_RE = re.compile(r"^\s*(?:\*\*)?\s*\d+\s*[.)]")
_TEXTBF_RE = re.compile(r"\\text(?:bf|it|tt)?\{([^{}]*)\}")
_FINAL_ANSWER_RE = re.compile(r"the final answer is[:\s]\s*(.+)$", re.IGNORECASE)

LABELS_BINARY: Tuple[str, ...] = ("true", "false")
LABELS_THREEWAY: Tuple[str, ...] = ("SUPPORTS", "REFUTES", "NOT ENOUGH INFO")


class IndexOutOfRange(IndexError):
    """Raised when a block index does not exist in the segmented text."""


@dataclass(frozen=True)
class SqlBlock:
    """One detected SQL region inside a generation."""

    sql_text: str
    claimed_result: Optional[str]
    span: Tuple[int, int]
    text: str = field(repr=False)
    marker_end: Optional[int] = None
    sql_end: int = 0


@dataclass(frozen=True)
class ResponseSegments:
    prefix_text: str
    sql_blocks: Tuple[SqlBlock, ...]
    suffix_text: str

    def reassemble(self) -> str:
        return self.prefix_text + "".join(b.text for b in self.sql_blocks) + self.suffix_text


@dataclass(frozen=True)
class FinalAnswer:
    """The answer pulled from a generation's concluding lines."""

    kind: str  # "short" | "label" | "free" | "missing"
    answers: Tuple[str, ...] = ()
    label: Optional[str] = None
    text: Optional[str] = None

    @classmethod
    def missing(cls) -> "FinalAnswer":
        return cls(kind="missing")

    def to_dict(self) -> dict:
        out: dict = {"kind": self.kind}
        if self.kind == "short":
            out["answers"] = list(self.answers)
        elif self.kind == "label":
            out["label"] = self.label
        elif self.kind == "free":
            out["text"] = self.text
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "FinalAnswer":
        kind = data["kind"]
        if kind == "short":
            return cls(kind=kind, answers=tuple(data.get("answers", ())))
        if kind == "label":
            return cls(kind=kind, label=data.get("label"))
        if kind == "free":
            return cls(kind=kind, text=data.get("text"))
        return cls.missing()


@dataclass(frozen=True)
class _Line:
    start: int
    content_end: int
    full_end: int
    content: str


def _split_lines(text: str) -> List[_Line]:
    lines: List[_Line] = []
    offset = 0
    for raw in text.splitlines(keepends=True):
        content = raw.rstrip("\r\n")
        lines.append(
            _Line(
                start=offset,
                content_end=offset + len(content),
                full_end=offset + len(raw),
                content=content,
            )
        )
        offset += len(raw)
    return lines


def _is_marker(line: str, markers: Sequence[str]) -> bool:
    return line.strip().lower() in {m.lower() for m in markers}


def _is_block_start(line: str) -> bool:
    stripped = line.strip().lower()
    return stripped.startswith("```sql") or stripped == "sql:"


def segment_response(
    text: str, markers: Sequence[str] = DEFAULT_RESULT_MARKERS
) -> ResponseSegments:
    """Split a generation into prose and SQL blocks without losing a byte."""
    lines = _split_lines(text)
    marker_set = {m.lower() for m in markers}
    found: List[dict] = []
    i = 0
    n = len(lines)
    while i < n:
        stripped = lines[i].content.strip()
        low = stripped.lower()
        if low.startswith("```sql"):
            parsed = _scan_fenced_block(text, lines, i, marker_set)
            if parsed is None:
                i += 1
                continue
            found.append(parsed)
            i = parsed.pop("next_line")
            continue
        if low == "sql:":
            parsed = _scan_labeled_block(text, lines, i, marker_set)
            if parsed is None:
                i += 1
                continue
            found.append(parsed)
            i = parsed.pop("next_line")
            continue
        i += 1

    if not found:
        return ResponseSegments(prefix_text=text, sql_blocks=(), suffix_text="")

    blocks: List[SqlBlock] = []
    for idx, info in enumerate(found):
        start = info["start"]
        if idx + 1 < len(found):
            end = found[idx + 1]["start"]
        else:
            end = info["end"]
        blocks.append(
            SqlBlock(
                sql_text=info["sql_text"],
                claimed_result=info["claimed"],
                span=(start, end),
                text=text[start:end],
                marker_end=info["marker_end"],
                sql_end=info["sql_end"],
            )
        )
    prefix = text[: blocks[0].span[0]]
    suffix = text[blocks[-1].span[1]:]
    return ResponseSegments(
        prefix_text=prefix, sql_blocks=tuple(blocks), suffix_text=suffix
    )


def _scan_fenced_block(
    text: str, lines: List[_Line], open_i: int, marker_set: set
) -> Optional[dict]:
    n = len(lines)
    close_i = None
    for j in range(open_i + 1, n):
        if lines[j].content.strip().startswith("```"):
            close_i = j
            break
    if close_i is None:
        return None
    sql_text = "\n".join(lines[k].content for k in range(open_i + 1, close_i)).strip()
    sql_end = lines[close_i].content_end
    end = lines[close_i].full_end
    next_line = close_i + 1

    marker_end: Optional[int] = None
    marker_line: Optional[int] = None
    # The closing fence line may carry the marker itself ("```Expected Result:").
    fence_rest = lines[close_i].content.strip()[3:].strip()
    if fence_rest and fence_rest.lower() in marker_set:
        marker_line = close_i
        marker_end = lines[close_i].content_end
    elif not fence_rest:
        probe = close_i + 1
        while probe < n and not lines[probe].content.strip():
            probe += 1
        if probe < n and lines[probe].content.strip().lower() in marker_set:
            marker_line = probe
            marker_end = lines[probe].content_end

    claimed = None
    if marker_line is not None:
        claimed, end, next_line = _scan_claimed(text, lines, marker_line, marker_set)
    return {
        "start": lines[open_i].start,
        "end": end,
        "next_line": next_line,
        "sql_text": sql_text,
        "sql_end": sql_end,
        "marker_end": marker_end,
        "claimed": claimed,
    }


def _scan_labeled_block(
    text: str, lines: List[_Line], label_i: int, marker_set: set
) -> Optional[dict]:
    n = len(lines)
    stmt: List[int] = []
    j = label_i + 1
    while j < n:
        stripped = lines[j].content.strip()
        if (
            not stripped
            or stripped.lower() in marker_set
            or _is_block_start(lines[j].content)
            or stripped.startswith("```")
            or _NUMBERED_HEADING_RE.match(lines[j].content)
        ):
            break
        stmt.append(j)
        j += 1
    if not stmt:
        return None
    sql_text = "\n".join(lines[k].content for k in stmt).strip()
    sql_end = lines[stmt[-1]].content_end
    end = lines[stmt[-1]].full_end
    next_line = stmt[-1] + 1

    probe = stmt[-1] + 1
    while probe < n and not lines[probe].content.strip():
        probe += 1
    marker_end: Optional[int] = None
    claimed = None
    if probe < n and lines[probe].content.strip().lower() in marker_set:
        marker_end = lines[probe].content_end
        claimed, end, next_line = _scan_claimed(text, lines, probe, marker_set)
    return {
        "start": lines[label_i].start,
        "end": end,
        "next_line": next_line,
        "sql_text": sql_text,
        "sql_end": sql_end,
        "marker_end": marker_end,
        "claimed": claimed,
    }


def _scan_claimed(
    text: str, lines: List[_Line], marker_i: int, marker_set: set
) -> Tuple[Optional[str], int, int]:
    """Collect the claimed-result text that follows a marker line.

    Returns (claimed_text_or_None, span_end_offset, next_line_index).
    """
    n = len(lines)
    probe = marker_i + 1
    while probe < n and not lines[probe].content.strip():
        probe += 1
    if probe >= n:
        return None, lines[marker_i].full_end, marker_i + 1

    first = lines[probe].content.strip()
    if first.startswith("```") and not first.lower().startswith("```sql"):
        # Fenced claimed result: take the fence contents verbatim.
        close = None
        for k in range(probe + 1, n):
            if lines[k].content.strip().startswith("```"):
                close = k
                break
        if close is None:
            claimed = "\n".join(l.content for l in lines[probe + 1:])
            return claimed.strip("\n") or None, lines[-1].full_end, n
        claimed = "\n".join(lines[k].content for k in range(probe + 1, close))
        return claimed.strip("\n") or None, lines[close].full_end, close + 1

    if _is_block_start(lines[probe].content) or _NUMBERED_HEADING_RE.match(
        lines[probe].content
    ):
        return None, lines[marker_i].full_end, marker_i + 1

    collected: List[int] = []
    k = probe
    while k < n:
        stripped = lines[k].content.strip()
        if _is_block_start(lines[k].content):
            break
        if not stripped:
            look = k + 1
            while look < n and not lines[look].content.strip():
                look += 1
            if look >= n:
                break
            if _NUMBERED_HEADING_RE.match(lines[look].content) or _is_block_start(
                lines[look].content
            ):
                break
            collected.append(k)
            k += 1
            continue
        collected.append(k)
        k += 1
    while collected and not lines[collected[-1]].content.strip():
        collected.pop()
    if not collected:
        return None, lines[marker_i].full_end, marker_i + 1
    claimed = "\n".join(lines[idx].content for idx in collected)
    last = collected[-1]
    return claimed, lines[last].full_end, last + 1


def resume_prefix(
    text: str,
    block_index: int,
    markers: Sequence[str] = DEFAULT_RESULT_MARKERS,
) -> str:
    """Truncate a generation right after the given block's result-marker line.

    When the block has no marker, one is appended (the first configured
    marker) so the caller can inject an execution result beneath it.
    """
    segments = segment_response(text, markers)
    if block_index < 0 or block_index >= len(segments.sql_blocks):
        raise IndexOutOfRange(
            "block index %d out of range (%d blocks)"
            % (block_index, len(segments.sql_blocks))
        )
    block = segments.sql_blocks[block_index]
    if block.marker_end is not None:
        return text[: block.marker_end]
    return text[: block.sql_end] + "\n" + markers[0]


# ---------------------------------------------------------------------------
# final-answer extraction


def _strip_emphasis(line: str) -> str:
    line = _TEXTBF_RE.sub(r"\1", line)
    return line.replace("**", "")


def _strip_decorations(text: str) -> str:
    quotes = {'"': '"', "'": "'", "`": "`", "\u201c": "\u201d", "\u2018": "\u2019"}
    prev = None
    while prev != text:
        prev = text
        text = text.strip()
        while text.endswith("."):
            text = text[:-1].rstrip()
        if len(text) >= 2 and text[0] in quotes and text.endswith(quotes[text[0]]):
            text = text[1:-1].strip()
    return text


def _label_pattern(labels: Sequence[str]) -> "re.Pattern[str]":
    ordered = sorted(labels, key=len, reverse=True)
    return re.compile(
        r"\b(?:" + "|".join(re.escape(l) for l in ordered) + r")\b", re.IGNORECASE
    )


def extract_final_answer(
    text: str,
    task: str,
    labels: Optional[Sequence[str]] = None,
) -> FinalAnswer:
    """Pull the concluding answer from a generation's last lines.

    Only the last five non-empty lines are considered; when several lines
    match, the last match wins.  Never raises: an unrecognized conclusion
    yields ``FinalAnswer.missing()``.
    """
    tail = [l for l in text.splitlines() if l.strip()][-5:]
    if task == "fact_verification":
        label_set = tuple(labels) if labels else LABELS_THREEWAY
        pattern = _label_pattern(label_set)
        hit: Optional[str] = None
        for line in tail:
            for m in pattern.finditer(_strip_emphasis(line)):
                hit = m.group(0)
        if hit is None:
            return FinalAnswer.missing()
        canonical = {l.lower(): l for l in label_set}
        return FinalAnswer(kind="label", label=canonical[hit.lower()])

    found: Optional[str] = None
    for line in tail:
        for m in _FINAL_ANSWER_RE.finditer(_strip_emphasis(line)):
            found = m.group(1)
    if found is None:
        return FinalAnswer.missing()
    answer = _strip_decorations(found)
    if not answer:
        return FinalAnswer.missing()
    if task == "free_qa":
        return FinalAnswer(kind="free", text=answer)
    parts = [p.strip() for p in re.split(r"\s*,\s*|\s+and\s+", answer)]
    parts = [p for p in parts if p]
    if not parts:
        return FinalAnswer.missing()
    return FinalAnswer(kind="short", answers=tuple(parts))
