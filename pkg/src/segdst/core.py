"""Domain model: conversations, label schemas, boundaries and segment states."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from enum import Enum
from importlib import resources
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence

INTENT = "intent"
DOMAIN = "domain"
SEGMENT = "segment"

YES = "YES"
NO = "NO"


class Speaker(str, Enum):
    USER = "USER"
    AGENT = "AGENT"


class ConversationError(ValueError):
    """Malformed conversation data."""


class SchemaError(ValueError):
    """Invalid label schema or schema/variant mismatch."""


@dataclass(frozen=True)
class Utterance:
    speaker: Speaker
    text: str

    def __post_init__(self) -> None:
        object.__setattr__(self, "speaker", Speaker(self.speaker))


@dataclass(frozen=True)
class Turn:
    index: int
    user: str
    agent: str | None = None

    def __post_init__(self) -> None:
        if self.index < 1:
            raise ConversationError(f"turn index must be >= 1, got {self.index}")
        if not self.user:
            raise ConversationError(f"turn {self.index}: user text is empty")


@dataclass(frozen=True)
class Conversation:
    id: str
    turns: tuple[Turn, ...]
    source: Mapping[str, Any] = field(default_factory=dict, compare=False)

    def __post_init__(self) -> None:
        turns = tuple(self.turns)
        object.__setattr__(self, "turns", turns)
        for pos, turn in enumerate(turns, start=1):
            if turn.index != pos:
                raise ConversationError(
                    f"{self.id}: turn indices must be 1..t, found {turn.index} at position {pos}"
                )
            if turn.agent is None and pos != len(turns):
                raise ConversationError(f"{self.id}: turn {pos} has no agent reply but is not the last turn")

    def __len__(self) -> int:
        return len(self.turns)

    def events(self) -> list[Utterance]:
        out = []
        for turn in self.turns:
            out.append(Utterance(Speaker.USER, turn.user))
            if turn.agent is not None:
                out.append(Utterance(Speaker.AGENT, turn.agent))
        return out


def normalize_events(events: Iterable[Utterance | tuple[str, str]], conv_id: str = "",
                     source: Mapping[str, Any] | None = None) -> Conversation:
    """Group a raw speaker/text event stream into user-agent turns.

    Consecutive user messages are joined with a newline into one turn. A run
    of agent messages is joined the same way. A trailing user run becomes a
    final turn with no agent reply.
    """
    utts = [e if isinstance(e, Utterance) else Utterance(Speaker(str(e[0]).upper()), e[1]) for e in events]
    if not utts:
        raise ConversationError(f"{conv_id or 'conversation'}: empty event list")
    if utts[0].speaker is not Speaker.USER:
        raise ConversationError(f"{conv_id or 'conversation'}: first event is from the agent")

    turns: list[Turn] = []
    users: list[str] = []
    agents: list[str] = []
    for utt in utts:
        if utt.speaker is Speaker.USER:
            if agents:
                turns.append(Turn(len(turns) + 1, "\n".join(users), "\n".join(agents)))
                users, agents = [], []
            users.append(utt.text)
        else:
            agents.append(utt.text)
    turns.append(Turn(len(turns) + 1, "\n".join(users), "\n".join(agents) if agents else None))
    return Conversation(conv_id, tuple(turns), dict(source or {}))


# ---------------------------------------------------------------------------
# Schemas
# ---------------------------------------------------------------------------

YES_DESCRIPTION = (
    "The current turn has **some or any** topical/subtopical relation to the preceding conversation context."
)
NO_DESCRIPTION = (
    "The current turn has **absolutely no** topical/subtopical relation to the preceding conversation "
    "context OR is the first turn in the conversation, marking the beginning of a new dialogue segment."
)
SEGMENTATION_LABELS: tuple[tuple[str, str], ...] = ((YES, YES_DESCRIPTION), (NO, NO_DESCRIPTION))


@dataclass(frozen=True)
class SlotSpec:
    name: str
    description: str = ""
    valid_values: tuple[str, ...] | None = None

    def __post_init__(self) -> None:
        if "-" not in self.name or self.name.startswith("-") or self.name.endswith("-"):
            raise SchemaError(f"slot name must look like 'domain-slot': {self.name!r}")
        if self.valid_values is not None:
            object.__setattr__(self, "valid_values", tuple(self.valid_values))

    @property
    def domain(self) -> str:
        return self.name.split("-", 1)[0]

    @property
    def categorical(self) -> bool:
        return bool(self.valid_values)


@dataclass(frozen=True)
class LabelSchema:
    segmentation_labels: tuple[tuple[str, str], ...] = SEGMENTATION_LABELS
    intents: tuple[tuple[str, str], ...] = ()
    domains: tuple[str, ...] = ()
    slots: tuple[SlotSpec, ...] = ()

    def __post_init__(self) -> None:
        for name in ("segmentation_labels", "intents", "domains", "slots"):
            object.__setattr__(self, name, tuple(tuple(x) if isinstance(x, list) else x for x in getattr(self, name)))
        if [n for n, _ in self.segmentation_labels] != [YES, NO]:
            raise SchemaError("segmentation labels must be exactly YES, NO")
        _check_unique("intent", [n for n, _ in self.intents])
        _check_unique("domain", list(self.domains))
        _check_unique("slot", [s.name for s in self.slots])
        if bool(self.intents) != bool(self.domains):
            raise SchemaError("open-domain schemas need both intents and domains")
        if self.slots and self.intents:
            raise SchemaError("a schema is either open-domain (intents/domains) or slot-based, not both")

    @property
    def mode(self) -> str:
        """``open``, ``mwoz`` or ``segment`` (segmentation labels only)."""
        if self.slots:
            return "mwoz"
        if self.intents:
            return "open"
        return "segment"

    def slot(self, name: str) -> SlotSpec:
        for spec in self.slots:
            if spec.name == name:
                return spec
        raise KeyError(name)

    def canonical_intent(self, value: str) -> str | None:
        return _casefold_lookup(value, [n for n, _ in self.intents])

    def canonical_domain(self, value: str) -> str | None:
        return _casefold_lookup(value, list(self.domains))

    def to_dict(self) -> dict[str, Any]:
        return {
            "segmentation_labels": [{"name": n, "description": d} for n, d in self.segmentation_labels],
            "intents": [{"name": n, "description": d} for n, d in self.intents],
            "domains": list(self.domains),
            "slots": [
                {"name": s.name, "description": s.description,
                 "valid_values": list(s.valid_values) if s.valid_values is not None else None}
                for s in self.slots
            ],
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> LabelSchema:
        seg = data.get("segmentation_labels")
        return cls(
            segmentation_labels=tuple((d["name"], d["description"]) for d in seg) if seg else SEGMENTATION_LABELS,
            intents=tuple((d["name"], d.get("description", "")) for d in data.get("intents", ())),
            domains=tuple(data.get("domains", ())),
            slots=tuple(
                SlotSpec(d["name"], d.get("description", ""),
                         tuple(d["valid_values"]) if d.get("valid_values") else None)
                for d in data.get("slots", ())
            ),
        )

    def fingerprint(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, ensure_ascii=False, separators=(",", ":"))
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()


BUILTIN_SCHEMAS = ("open_domain", "mwoz", "segment")


def load_schema(name_or_path: str | Path) -> LabelSchema:
    """Load a schema from a JSON file or one of the bundled names."""
    if str(name_or_path) in BUILTIN_SCHEMAS:
        text = resources.files("segdst").joinpath("schemas", f"{name_or_path}.json").read_text("utf-8")
    else:
        try:
            text = Path(name_or_path).read_text(encoding="utf-8")
        except OSError as exc:
            raise SchemaError(
                f"cannot read schema {str(name_or_path)!r} (builtins: {', '.join(BUILTIN_SCHEMAS)}): {exc}"
            ) from exc
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SchemaError(f"schema {str(name_or_path)!r} is not valid JSON: {exc}") from exc
    return LabelSchema.from_dict(data)


def _check_unique(kind: str, names: Sequence[str]) -> None:
    seen: set[str] = set()
    for name in names:
        if not name:
            raise SchemaError(f"empty {kind} name")
        if name in seen:
            raise SchemaError(f"duplicate {kind} name {name!r}")
        seen.add(name)


def _casefold_lookup(value: str, names: Sequence[str]) -> str | None:
    key = value.strip().casefold()
    for name in names:
        if name.casefold() == key:
            return name
    return None


# ---------------------------------------------------------------------------
# Boundaries, segments, states
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class BoundarySet:
    """Boundary ``i`` separates turn ``i`` from turn ``i + 1``."""

    length: int
    indices: frozenset[int] = frozenset()

    def __post_init__(self) -> None:
        idx = frozenset(self.indices)
        object.__setattr__(self, "indices", idx)
        if self.length < 0:
            raise ValueError("length must be non-negative")
        bad = sorted(i for i in idx if not 1 <= i <= self.length - 1)
        if bad:
            raise ValueError(f"boundary indices {bad} outside [1, {self.length - 1}]")

    def spans(self) -> list[tuple[int, int]]:
        """Segments as inclusive (start, end) turn spans."""
        if self.length == 0:
            return []
        cuts = sorted(self.indices)
        starts = [1] + [c + 1 for c in cuts]
        ends = cuts + [self.length]
        return list(zip(starts, ends))

    def segment_lengths(self) -> list[int]:
        return [n - m + 1 for m, n in self.spans()]

    def relation_labels(self) -> list[str]:
        """Per-turn YES/NO labels equivalent to this boundary set."""
        return [NO if i == 1 or (i - 1) in self.indices else YES for i in range(1, self.length + 1)]

    @classmethod
    def from_relation_labels(cls, labels: Sequence[str]) -> BoundarySet:
        return cls(len(labels), frozenset(i - 1 for i, lab in enumerate(labels, start=1) if i >= 2 and lab == NO))


@dataclass(frozen=True)
class SegmentState:
    start: int
    end: int
    slot_values: Mapping[str, str] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if not 1 <= self.start <= self.end:
            raise ValueError(f"invalid segment span [{self.start}, {self.end}]")
        object.__setattr__(self, "slot_values", dict(self.slot_values))

    def __len__(self) -> int:
        return self.end - self.start + 1


@dataclass(frozen=True)
class DialogueStateRecord:
    boundaries: BoundarySet
    segments: tuple[SegmentState, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "segments", tuple(self.segments))

    @property
    def length(self) -> int:
        return self.boundaries.length

    def turn_labels(self) -> list[dict[str, str]]:
        """Expand to per-turn labels: ``segment`` relation plus every segment slot."""
        relations = self.boundaries.relation_labels()
        out = []
        for turn in range(1, self.length + 1):
            labels = {SEGMENT: relations[turn - 1]}
            for seg in self.segments:
                if seg.start <= turn <= seg.end:
                    labels.update(seg.slot_values)
                    break
            out.append(labels)
        return out

    def to_dict(self) -> dict[str, Any]:
        return {
            "length": self.length,
            "boundaries": sorted(self.boundaries.indices),
            "segments": [{"start": s.start, "end": s.end, "slot_values": dict(s.slot_values)}
                         for s in self.segments],
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any], length: int | None = None) -> DialogueStateRecord:
        segments = tuple(SegmentState(s["start"], s["end"], s.get("slot_values", {})) for s in data["segments"])
        if length is None:
            length = data.get("length", max((s.end for s in segments), default=0))
        return cls(BoundarySet(length, frozenset(data.get("boundaries", ()))), segments)


@dataclass(frozen=True)
class TurnSlotState:
    """Cumulative belief state as of ``turn_index``.

    ``raw`` keeps the parsed (slot, value) pairs in output order, duplicates
    included, so conflicting entries can be resolved later.
    """

    turn_index: int
    state: Mapping[str, str] = field(default_factory=dict)
    raw: tuple[tuple[str, str], ...] = ()

    def __post_init__(self) -> None:
        object.__setattr__(self, "state", dict(self.state))
        object.__setattr__(self, "raw", tuple(tuple(p) for p in self.raw))


def validate_record(record: DialogueStateRecord, t: int) -> list[str]:
    """Return the invariant violations of ``record`` for a ``t``-turn dialogue."""
    problems: list[str] = []
    if record.boundaries.length != t:
        problems.append(f"boundary set length {record.boundaries.length} != {t} turns")
    segs = list(record.segments)
    if not segs:
        if t > 0:
            problems.append("no segments")
        return problems
    if [(s.start, s.end) for s in segs] != sorted((s.start, s.end) for s in segs):
        problems.append("segments not sorted")
        segs.sort(key=lambda s: (s.start, s.end))
    if segs[0].start > 1:
        problems.extend(f"gap at turn {i}" for i in range(1, segs[0].start))
    for prev, cur in zip(segs, segs[1:]):
        if cur.start > prev.end + 1:
            problems.extend(f"gap at turn {i}" for i in range(prev.end + 1, cur.start))
        elif cur.start <= prev.end:
            problems.extend(f"overlap at turn {i}" for i in range(cur.start, min(prev.end, cur.end) + 1))
    if segs[-1].end < t:
        problems.extend(f"gap at turn {i}" for i in range(segs[-1].end + 1, t + 1))
    if segs[-1].end > t:
        problems.append(f"segment ends at turn {segs[-1].end} beyond t={t}")
    cuts = {s.end for s in segs[:-1]}
    if cuts != set(record.boundaries.indices):
        problems.append(
            f"segment cut points {sorted(cuts)} do not match boundaries {sorted(record.boundaries.indices)}"
        )
    return problems
