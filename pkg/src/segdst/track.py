"""Turn per-turn annotations into boundary sets and per-segment states."""

from __future__ import annotations

import logging
import re
from collections import Counter
from typing import Iterable, Sequence

from .core import (DOMAIN, INTENT, NO, YES, BoundarySet, DialogueStateRecord, SegmentState, SlotSpec,
                   TurnSlotState)
from .parse import TurnAnnotation

log = logging.getLogger(__name__)

DONTCARE = "dontcare"
_DONTCARE_SYNONYMS = {"dont care", "don't care", "do not care", "dontcare", "don’t care"}
_TIME_24 = re.compile(r"^(\d{1,2}):(\d{2})$")
_TIME_12 = re.compile(r"^(\d{1,2})(?::(\d{2}))?\s*([ap])\.?\s?m\.?$")


def majority_label(labels: Sequence[str]) -> str | None:
    """Most frequent label; ties go to the label seen first."""
    if not labels:
        return None
    counts = Counter(labels)
    best = max(counts.values())
    return next(lab for lab in labels if counts[lab] == best)


def reconstruct_segments(annotations: Iterable[TurnAnnotation], t: int,
                         segment: bool = True) -> DialogueStateRecord:
    """Build the boundary set and segment states from per-turn annotations.

    Turns without an annotation (parse failures) cast no label vote and are
    treated as continuing the current segment. With ``segment=False`` every
    turn is its own segment, for prompts that never predict boundaries.
    """
    if t < 1:
        raise ValueError("t must be >= 1")
    by_turn = {a.turn_index: a for a in annotations}
    relations = []
    for i in range(1, t + 1):
        ann = by_turn.get(i)
        if not segment:
            relations.append(NO)
        elif ann is None or ann.preceding_topical_relation is None:
            if i > 1:
                log.debug("turn %d: no relation label, continuing segment", i)
            relations.append(NO if i == 1 else YES)
        else:
            relations.append(ann.preceding_topical_relation)
    boundaries = BoundarySet.from_relation_labels(relations)

    segments = []
    for start, end in boundaries.spans():
        members = [by_turn[i] for i in range(start, end + 1) if i in by_turn]
        values = {}
        for kind in (INTENT, DOMAIN):
            label = majority_label([getattr(a, kind) for a in members if getattr(a, kind) is not None])
            if label is not None:
                values[kind] = label
        segments.append(SegmentState(start, end, values))
    return DialogueStateRecord(boundaries, tuple(segments))


def resolve_cumulative_state(states: Sequence[TurnSlotState]) -> list[TurnSlotState]:
    """Keep only the last value of any slot repeated within one turn's output."""
    out = []
    for st in states:
        pairs = st.raw or tuple(st.state.items())
        out.append(TurnSlotState(st.turn_index, dict(pairs), pairs))
    return out


def _canonical_time(value: str) -> str | None:
    m = _TIME_24.match(value)
    if m:
        hour, minute = int(m.group(1)), int(m.group(2))
        if hour <= 23 and minute <= 59:
            return f"{hour:02d}:{minute:02d}"
        return None
    m = _TIME_12.match(value)
    if m:
        hour, minute = int(m.group(1)), int(m.group(2) or 0)
        if not 1 <= hour <= 12 or minute > 59:
            return None
        hour %= 12
        if m.group(3) == "p":
            hour += 12
        return f"{hour:02d}:{minute:02d}"
    return None


def normalize_value(slot: SlotSpec | None, value: str) -> str:
    """Canonical form used when comparing slot values.

    Lowercase, trim and collapse whitespace; times become 24-hour ``HH:MM``;
    don't-care phrasings become ``dontcare``; categorical values snap to the
    matching entry of ``slot.valid_values``.
    """
    text = " ".join(value.split()).lower()
    if text in _DONTCARE_SYNONYMS:
        return DONTCARE
    time = _canonical_time(text)
    if time is not None:
        text = time
    if slot is not None and slot.valid_values:
        for valid in slot.valid_values:
            if valid.lower() == text:
                return valid
        log.debug("value %r is not a valid value of %s", text, slot.name)
    return text


def categorical_miss(slot: SlotSpec, value: str) -> str | None:
    """Diagnostic for a normalized value outside a categorical slot's values."""
    if not slot.valid_values or value == DONTCARE or value in slot.valid_values:
        return None
    return f"{slot.name}: {value!r} is not one of its valid values"
