"""Readers for model output: hierarchical XML, IC-DST SQL rows and slot-value lists.

The XML readers use a small tag scanner instead of an XML parser. Model output
routinely has prose around the answer, bare ampersands, or a missing closing
tag, and a strict parser would reject the whole generation over any of those.
The scanner only looks for the tags it knows and takes whatever sits between an
opening and closing tag as raw text.

Every repair is written to ``ParseReport.recovered``. Index 0 in that list
means the repair applied to the whole output, not to a single turn. With
``strict=True``, anything that would have been repaired becomes a failure
instead.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Iterable, Sequence
from xml.sax.saxutils import unescape

from .core import NO, YES, Conversation, LabelSchema, TurnSlotState, normalize_events
from .prompt import PromptVariant, xml_escape

_UNESCAPE = {"&quot;": '"', "&apos;": "'"}

STRIPPED_WRAPPER = "stripped wrapper"
MISSING_SEMICOLON = "missing semicolon"
DUPLICATE_TURN = "duplicate turn block ignored"
COERCED_FIRST_TURN = "coerced turn 1 relation YES to NO"
UNCLOSED_TURN = "unclosed turn block"
OUT_OF_RANGE = "ignored out-of-range turn block"

_OPEN_TURN = re.compile(r"<\s*T\s*(\d+)\s*>", re.IGNORECASE)


class SlotListError(ValueError):
    def __init__(self, errors: Sequence[str]):
        super().__init__("; ".join(errors))
        self.errors = list(errors)


@dataclass(frozen=True)
class TurnAnnotation:
    turn_index: int
    preceding_topical_relation: str | None = None
    intent: str | None = None
    domain: str | None = None
    summary: str | None = None

    def labels(self) -> dict[str, str]:
        out = {}
        if self.preceding_topical_relation is not None:
            out["segment"] = self.preceding_topical_relation
        if self.intent is not None:
            out["intent"] = self.intent
        if self.domain is not None:
            out["domain"] = self.domain
        return out

    def to_dict(self) -> dict:
        return {"turn": self.turn_index, "summary": self.summary,
                "preceding_topical_relation": self.preceding_topical_relation,
                "intent": self.intent, "domain": self.domain}


@dataclass
class ParseReport:
    annotations: list = field(default_factory=list)
    recovered: list[tuple[int, str]] = field(default_factory=list)
    failures: list[tuple[int, str]] = field(default_factory=list)

    @property
    def failed_turns(self) -> set[int]:
        return {i for i, _ in self.failures}

    def covered(self) -> list[int]:
        return sorted([a.turn_index for a in self.annotations] + [i for i, _ in self.failures])


# ---------------------------------------------------------------------------
# Scanning helpers
# ---------------------------------------------------------------------------

def _unescape(text: str) -> str:
    return unescape(text, _UNESCAPE)


def scan_turn_blocks(text: str) -> tuple[dict[int, str], list[tuple[int, str]]]:
    """Split ``text`` into ``<T{i}>`` blocks, first occurrence winning.

    Returns the block bodies keyed by turn index and the repairs applied.
    """
    blocks: dict[int, str] = {}
    notes: list[tuple[int, str]] = []
    opens = list(_OPEN_TURN.finditer(text))
    consumed: list[tuple[int, int]] = []
    for pos, m in enumerate(opens):
        idx = int(m.group(1))
        limit = opens[pos + 1].start() if pos + 1 < len(opens) else len(text)
        close = re.compile(rf"<\s*/\s*T\s*{idx}\s*>", re.IGNORECASE).search(text, m.end(), limit)
        if close:
            body, end = text[m.end():close.start()], close.end()
        else:
            body, end = text[m.end():limit], limit
            notes.append((idx, UNCLOSED_TURN))
        consumed.append((m.start(), end))
        if idx in blocks:
            notes.append((idx, DUPLICATE_TURN))
            continue
        blocks[idx] = body
    outside = []
    cursor = 0
    for start, end in consumed:
        outside.append(text[cursor:start])
        cursor = end
    outside.append(text[cursor:])
    if "".join(outside).strip():
        notes.insert(0, (0, STRIPPED_WRAPPER))
    return blocks, notes


def read_tag(block: str, tag: str) -> tuple[str | None, bool]:
    """Value of the first ``<tag>`` in ``block`` and whether it had to be repaired.

    An unclosed tag yields the rest of its line.
    """
    m = re.search(rf"<\s*{tag}\s*>(.*?)<\s*/\s*{tag}\s*>", block, re.IGNORECASE | re.DOTALL)
    if m:
        return _unescape(m.group(1).strip()), False
    m = re.search(rf"<\s*{tag}\s*>([^\n<]*)", block, re.IGNORECASE)
    if m:
        return _unescape(m.group(1).strip()), True
    return None, False


def _finish(report: ParseReport, t: int, strict: bool) -> ParseReport:
    """Apply strict mode and sort everything by turn."""
    if strict and report.recovered:
        if any(i == 0 or i > t for i, _ in report.recovered):
            reason = "strict: " + "; ".join(n for i, n in report.recovered if i == 0 or i > t)
            report.failures = [(i, reason) for i in range(1, t + 1)]
            report.annotations = []
        else:
            noted: dict[int, list[str]] = {}
            for i, note in report.recovered:
                noted.setdefault(i, []).append(note)
            report.annotations = [a for a in report.annotations if a.turn_index not in noted]
            report.failures += [(i, "strict: " + "; ".join(n)) for i, n in noted.items()
                                if i not in report.failed_turns]
        report.recovered = []
    report.annotations.sort(key=lambda a: a.turn_index)
    report.failures.sort()
    return report


def _out_of_range(blocks: Iterable[int], t: int) -> list[tuple[int, str]]:
    return [(i, OUT_OF_RANGE) for i in sorted(blocks) if not 1 <= i <= t]


def _check_relation(value: str) -> str | None:
    value = value.strip().upper()
    return value if value in (YES, NO) else None


# ---------------------------------------------------------------------------
# Hierarchical XML answers
# ---------------------------------------------------------------------------

def parse_s3dst_output(text: str, t: int, schema: LabelSchema,
                       variant: PromptVariant | str = PromptVariant.S3DST_JOINT,
                       strict: bool = False) -> ParseReport:
    """Read the per-turn XML answer of the open-domain and segmentation prompts."""
    if t < 1:
        raise ValueError("t must be >= 1")
    variant = PromptVariant(variant)
    if variant in (PromptVariant.S3DST_MWOZ, PromptVariant.ICDST_SQL):
        raise ValueError(f"{variant.value} output is not read by parse_s3dst_output")
    wanted = variant.labels(schema.mode)
    blocks, notes = scan_turn_blocks(text)
    report = ParseReport(recovered=notes + _out_of_range(blocks, t))

    for i in range(1, t + 1):
        if i not in blocks:
            report.failures.append((i, "missing turn block"))
            continue
        block = blocks[i]
        errors: list[str] = []
        values: dict[str, str | None] = {}
        tags = {"preceding_topical_relation": "segment" in wanted, "intent": "intent" in wanted,
                "domain": "domain" in wanted, "summary": variant.has_par}
        for tag, required in tags.items():
            value, repaired = read_tag(block, tag)
            if not required:
                if value is not None and tag == "summary":
                    report.recovered.append((i, "dropped unexpected <summary>"))
                continue
            if value is None:
                errors.append(f"missing <{tag}>")
                continue
            if repaired:
                report.recovered.append((i, f"unclosed <{tag}>"))
            values[tag] = value

        relation = values.get("preceding_topical_relation")
        if relation is not None:
            relation = _check_relation(relation)
            if relation is None:
                errors.append(f"unknown preceding_topical_relation {values['preceding_topical_relation']!r}")
            elif i == 1 and relation == YES:
                relation = NO
                report.recovered.append((1, COERCED_FIRST_TURN))
        intent = values.get("intent")
        if intent is not None:
            intent = schema.canonical_intent(intent)
            if intent is None:
                errors.append(f"unknown intent {values['intent']!r}")
        domain = values.get("domain")
        if domain is not None:
            domain = schema.canonical_domain(domain)
            if domain is None:
                errors.append(f"unknown domain {values['domain']!r}")

        if errors:
            report.failures.append((i, "; ".join(errors)))
        else:
            report.annotations.append(TurnAnnotation(i, relation, intent, domain, values.get("summary")))
    return _finish(report, t, strict)


def serialize_s3dst(annotations: Sequence[TurnAnnotation], variant: PromptVariant | str) -> str:
    """Write annotations in the XML answer format of ``variant``."""
    variant = PromptVariant(variant)
    out = []
    for a in annotations:
        lines = [f"<T{a.turn_index}>"]
        if variant.has_par:
            lines.append(f"<summary>{xml_escape(a.summary or '')}</summary>")
        if a.preceding_topical_relation is not None:
            lines.append(f"<preceding_topical_relation>{a.preceding_topical_relation}</preceding_topical_relation>")
        if a.intent is not None:
            lines.append(f"<intent>{a.intent}</intent>")
        if a.domain is not None:
            lines.append(f"<domain>{a.domain}</domain>")
        lines.append(f"</T{a.turn_index}>")
        out.append("\n".join(lines))
    return "\n".join(out)


# ---------------------------------------------------------------------------
# IC-DST SQL rows
# ---------------------------------------------------------------------------

_SQL_LINE = re.compile(r"^\s*T\s*(\d+)\s*[.:)]?\s*(SELECT\b.*)$", re.IGNORECASE)
_SQL_BODY = re.compile(r"^SELECT\s+\*\s+FROM\s+states\s+WHERE\s+(.*?)\s*(;?)\s*$", re.IGNORECASE)
_SQL_COLUMNS = ("preceding_topical_relation", "intent", "domain")
_SQL_SPLIT = re.compile(r"\s+AND\s+(?=(?:%s)\s*=)" % "|".join(_SQL_COLUMNS), re.IGNORECASE)


def _unquote(value: str) -> str:
    value = value.strip()
    if len(value) >= 2 and value[0] == value[-1] and value[0] in "'\"`":
        value = value[1:-1].strip()
    return value


def parse_where(clause: str) -> dict[str, str] | None:
    """Column -> value from ``a = X AND b = Y``; None if the clause is malformed."""
    out: dict[str, str] = {}
    for part in _SQL_SPLIT.split(clause):
        m = re.match(r"^\s*(\w+)\s*=\s*(.+?)\s*$", part, re.DOTALL)
        if not m or m.group(1).lower() not in _SQL_COLUMNS or m.group(1).lower() in out:
            return None
        out[m.group(1).lower()] = _unquote(m.group(2))
    return out


def parse_icdst_output(text: str, t: int, schema: LabelSchema, strict: bool = False) -> ParseReport:
    if t < 1:
        raise ValueError("t must be >= 1")
    columns = _SQL_COLUMNS if schema.mode == "open" else _SQL_COLUMNS[:1]
    rows: dict[int, str] = {}
    report = ParseReport()
    wrapper = False
    for line in text.splitlines():
        m = _SQL_LINE.match(line)
        if not m:
            wrapper = wrapper or bool(line.strip())
            continue
        idx = int(m.group(1))
        if idx in rows:
            report.recovered.append((idx, DUPLICATE_TURN))
            continue
        rows[idx] = m.group(2)
    if wrapper:
        report.recovered.insert(0, (0, STRIPPED_WRAPPER))
    report.recovered += _out_of_range(rows, t)

    for i in range(1, t + 1):
        if i not in rows:
            report.failures.append((i, "missing turn row"))
            continue
        body = _SQL_BODY.match(rows[i].strip())
        where = parse_where(body.group(1)) if body else None
        if where is None or set(where) != set(columns):
            report.failures.append((i, "malformed WHERE clause"))
            continue
        if not body.group(2):
            report.recovered.append((i, MISSING_SEMICOLON))
        errors = []
        relation = _check_relation(where["preceding_topical_relation"])
        if relation is None:
            errors.append(f"unknown preceding_topical_relation {where['preceding_topical_relation']!r}")
        elif i == 1 and relation == YES:
            relation = NO
            report.recovered.append((1, COERCED_FIRST_TURN))
        intent = domain = None
        if "intent" in columns:
            intent = schema.canonical_intent(where["intent"])
            if intent is None:
                errors.append(f"unknown intent {where['intent']!r}")
            domain = schema.canonical_domain(where["domain"])
            if domain is None:
                errors.append(f"unknown domain {where['domain']!r}")
        if errors:
            report.failures.append((i, "; ".join(errors)))
        else:
            report.annotations.append(TurnAnnotation(i, relation, intent, domain))
    return _finish(report, t, strict)


def serialize_icdst(annotations: Sequence[TurnAnnotation]) -> str:
    lines = []
    for a in annotations:
        where = f"preceding_topical_relation = {a.preceding_topical_relation}"
        if a.intent is not None:
            where += f" AND intent = {a.intent} AND domain = {a.domain}"
        lines.append(f"T{a.turn_index}. SELECT * from states WHERE {where};")
    return "\n".join(lines)


# ---------------------------------------------------------------------------
# MWOZ slot-value lists
# ---------------------------------------------------------------------------

def _split_entries(content: str) -> list[str]:
    content = content.strip()
    if not content:
        return []
    if not any(q in content for q in "'\""):
        return [e.strip() for e in content.split(",") if e.strip()]
    # split only on commas between a closing and an opening quote, so values
    # may contain apostrophes
    parts = re.split(r"""(?<=['"])\s*,\s*(?=['"])""", content)
    out = []
    for part in parts:
        part = part.strip()
        if part[:1] in "'\"":
            part = part[1:]
        if part[-1:] in "'\"":
            part = part[:-1]
        out.append(part)
    return out


def parse_slot_entries(text: str, schema: LabelSchema) -> tuple[list[tuple[str, str]], list[str]]:
    """Ordered (slot, value) pairs from a ``['slot-value', ...]`` list, plus errors.

    Each entry is split at the longest schema slot name that prefixes it
    (case-insensitively) and is followed by a hyphen.
    """
    if not schema.slots:
        raise ValueError("schema has no slots")
    start, end = text.find("["), text.rfind("]")
    content = text[start + 1:end] if 0 <= start < end else text
    by_length = sorted(schema.slots, key=lambda s: len(s.name), reverse=True)
    pairs: list[tuple[str, str]] = []
    errors: list[str] = []
    for entry in _split_entries(content):
        folded = entry.casefold()
        slot = next((s for s in by_length if folded.startswith(s.name.casefold() + "-")), None)
        if slot is None:
            errors.append(f"no slot matches entry {entry!r}")
            continue
        value = entry[len(slot.name) + 1:].strip()
        if not value:
            errors.append(f"empty value for slot {slot.name!r}")
            continue
        pairs.append((slot.name, value))
    return pairs, errors


def parse_slot_value_list(text: str, schema: LabelSchema) -> dict[str, str]:
    """Slot -> value map; later duplicates overwrite earlier ones."""
    pairs, errors = parse_slot_entries(text, schema)
    if errors:
        raise SlotListError(errors)
    return dict(pairs)


def parse_mwoz_output(text: str, t: int, schema: LabelSchema, strict: bool = False) -> ParseReport:
    if t < 1:
        raise ValueError("t must be >= 1")
    blocks, notes = scan_turn_blocks(text)
    report = ParseReport(recovered=notes + _out_of_range(blocks, t))
    for i in range(1, t + 1):
        if i not in blocks:
            report.failures.append((i, "missing turn block"))
            continue
        value, repaired = read_tag(blocks[i], "updated_slot_value")
        if value is None:
            report.failures.append((i, "missing <updated_slot_value>"))
            continue
        if repaired:
            report.recovered.append((i, "unclosed <updated_slot_value>"))
        pairs, errors = parse_slot_entries(value, schema)
        if errors:
            report.failures.append((i, "; ".join(errors)))
            continue
        report.annotations.append(TurnSlotState(i, dict(pairs), tuple(pairs)))
    return _finish(report, t, strict)


def serialize_mwoz(states: Sequence[TurnSlotState], conv: Conversation | None = None) -> str:
    out = []
    previous = ""
    for st in states:
        turn = conv.turns[st.turn_index - 1] if conv is not None else None
        entries = ", ".join(f"'{slot}-{value}'" for slot, value in (st.raw or tuple(st.state.items())))
        out.append("\n".join([
            f"<T{st.turn_index}>",
            f"<agent_context> {xml_escape(previous)} </agent_context>",
            f"<user_utterance> {xml_escape(turn.user) if turn else ''} </user_utterance>",
            f"<updated_slot_value> [{entries}] </updated_slot_value>",
            f"</T{st.turn_index}>",
        ]))
        previous = (turn.agent or "") if turn else ""
    return "\n".join(out)


# ---------------------------------------------------------------------------
# Conversation XML
# ---------------------------------------------------------------------------

def parse_conversation_xml(text: str, conv_id: str = "") -> Conversation:
    """Inverse of :func:`segdst.prompt.render_conversation_xml`."""
    blocks, _ = scan_turn_blocks(text)
    events: list[tuple[str, str]] = []
    last = max(blocks, default=0)
    for i in range(1, last + 1):
        body = blocks[i]
        user = re.search(r"<user>(.*?)</user>", body, re.DOTALL)
        agent = re.search(r"<agent>(.*?)</agent>", body, re.DOTALL)
        if user is None:
            raise ValueError(f"turn {i}: no <user> element")
        events.append(("USER", _unescape(user.group(1))))
        agent_text = _unescape(agent.group(1)) if agent else ""
        if agent_text or i != last:
            events.append(("AGENT", agent_text))
    if not events:
        return Conversation(conv_id, ())
    return normalize_events(events, conv_id)
