"""Dataset loading, canonical JSONL conversion and dev/test splitting."""

from __future__ import annotations

import hashlib
import json
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Mapping, Union

from .core import (BoundarySet, Conversation, ConversationError, DialogueStateRecord, LabelSchema,
                   TurnSlotState, Turn, load_schema, validate_record)
from .track import normalize_value

Gold = Union[DialogueStateRecord, "list[TurnSlotState]", BoundarySet]

FORMATS = ("mwoz21", "mwoz24", "dialseg711", "jsonl")
DEFAULT_SEPARATOR = r"^\s*={3,}\s*$"


class DatasetError(ValueError):
    """Unreadable or inconsistent dataset."""


@dataclass(frozen=True)
class DatasetBundle:
    conversations: tuple[Conversation, ...]
    gold: Mapping[str, Any] = field(default_factory=dict)
    format: str = "jsonl"

    def __post_init__(self) -> None:
        convs = tuple(sorted(self.conversations, key=lambda c: c.id))
        object.__setattr__(self, "conversations", convs)
        by_id = {}
        for conv in convs:
            if conv.id in by_id:
                raise DatasetError(f"duplicate conversation id {conv.id!r}")
            by_id[conv.id] = conv
        for cid, gold in self.gold.items():
            if cid not in by_id:
                raise DatasetError(f"gold for unknown conversation {cid!r}")
            if gold_length(gold) != len(by_id[cid]):
                raise DatasetError(f"{cid}: gold covers {gold_length(gold)} turns, conversation has {len(by_id[cid])}")

    def __len__(self) -> int:
        return len(self.conversations)

    @property
    def turn_count(self) -> int:
        return sum(len(c) for c in self.conversations)

    def get(self, conv_id: str) -> Conversation:
        for conv in self.conversations:
            if conv.id == conv_id:
                return conv
        raise KeyError(conv_id)

    def gold_kind(self) -> str | None:
        kinds = {gold_kind(g) for g in self.gold.values()}
        if len(kinds) > 1:
            raise DatasetError(f"mixed gold kinds {sorted(kinds)}")
        return kinds.pop() if kinds else None

    def subset(self, ids: Iterable[str]) -> DatasetBundle:
        keep = set(ids)
        return DatasetBundle(tuple(c for c in self.conversations if c.id in keep),
                             {k: v for k, v in self.gold.items() if k in keep}, self.format)


def gold_kind(gold: Any) -> str:
    if isinstance(gold, DialogueStateRecord):
        return "record"
    if isinstance(gold, BoundarySet):
        return "boundaries"
    return "slots"


def gold_length(gold: Any) -> int:
    if isinstance(gold, (DialogueStateRecord, BoundarySet)):
        return gold.length
    return len(gold)


# ---------------------------------------------------------------------------
# MultiWOZ
# ---------------------------------------------------------------------------

MWOZ_DOMAINS = ("attraction", "hotel", "restaurant", "taxi", "train")
_MWOZ_SEMI = {
    "pricerange": "price_range",
    "leaveAt": {"taxi": "leave at", "train": "leave_at_time"},
    "arriveBy": {"taxi": "arrive by", "train": "arrive_by_time"},
}
_MWOZ_BOOK = {"day": "book day", "people": "book number_of_people", "stay": "book number_of_days",
              "time": "book time"}
_EMPTY_VALUES = {"", "not mentioned", "none"}


def mwoz_slot_name(domain: str, section: str, key: str) -> str:
    """Schema slot name for a MultiWOZ metadata entry."""
    if section == "book":
        name = _MWOZ_BOOK.get(key, f"book {key}")
    else:
        name = _MWOZ_SEMI.get(key, key)
        if isinstance(name, dict):
            name = name.get(domain, key)
    return f"{domain}-{name}"


def mwoz_state(metadata: Mapping[str, Any], schema: LabelSchema) -> dict[str, str]:
    """Cumulative belief state from one system turn's metadata.

    Empty and "not mentioned" values count as absent; slots outside the schema
    are dropped.
    """
    known = {s.name: s for s in schema.slots}
    state = {}
    for domain in MWOZ_DOMAINS:
        sections = metadata.get(domain) or {}
        for section in ("semi", "book"):
            for key, value in (sections.get(section) or {}).items():
                if key == "booked" or not isinstance(value, str):
                    continue
                if value.strip().lower() in _EMPTY_VALUES:
                    continue
                name = mwoz_slot_name(domain, section, key)
                if name in known:
                    state[name] = normalize_value(known[name], value)
    return state


def load_mwoz(path: str | Path, version: str = "2.4", schema: LabelSchema | None = None,
              ids: Iterable[str] | None = None) -> DatasetBundle:
    """Load a MultiWOZ 2.1/2.4 ``data.json``.

    ``path`` may be the JSON file or its directory; for a directory holding a
    ``testListFile.txt`` only the listed dialogues are loaded unless ``ids``
    is given. Gold is one cumulative :class:`TurnSlotState` per user turn,
    taken from the following system turn's metadata.
    """
    if str(version) not in ("2.1", "2.4"):
        raise DatasetError(f"unsupported MultiWOZ version {version!r}")
    path = Path(path)
    if path.is_dir():
        list_file = path / "testListFile.txt"
        if ids is None and list_file.exists():
            ids = [l.strip() for l in list_file.read_text(encoding="utf-8").splitlines() if l.strip()]
        path = path / "data.json"
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise DatasetError(f"cannot read {path}: {exc}") from exc
    if not isinstance(raw, dict) or not all(isinstance(d, dict) and isinstance(d.get("log"), list)
                                            for d in raw.values()):
        raise DatasetError(f"{path}: not a MultiWOZ dialogue file (expected id -> {{'log': [...]}})")
    schema = schema or load_schema("mwoz")
    wanted = set(ids) if ids is not None else None

    conversations, gold = [], {}
    for dial_id, dialogue in raw.items():
        if wanted is not None and dial_id not in wanted:
            continue
        log = dialogue["log"]
        if len(log) % 2:
            raise DatasetError(f"{dial_id}: {len(log) // 2 + 1} user turns but {len(log) // 2} belief states")
        turns, states = [], []
        for i in range(0, len(log), 2):
            user, system = log[i], log[i + 1]
            if "metadata" not in system:
                raise DatasetError(f"{dial_id}: system turn {i // 2 + 1} has no metadata")
            try:
                turns.append(Turn(i // 2 + 1, user["text"], system["text"]))
            except ConversationError as exc:
                raise DatasetError(f"{dial_id}: {exc}") from exc
            states.append(TurnSlotState(i // 2 + 1, mwoz_state(system["metadata"], schema)))
        conversations.append(Conversation(dial_id, tuple(turns), {"dataset": f"mwoz{version}"}))
        gold[dial_id] = states
    fmt = "mwoz21" if str(version) == "2.1" else "mwoz24"
    return DatasetBundle(tuple(conversations), gold, fmt)


# ---------------------------------------------------------------------------
# DialSeg711
# ---------------------------------------------------------------------------

def parse_dialseg_text(text: str, name: str, separator: str = DEFAULT_SEPARATOR) -> tuple[Conversation, BoundarySet]:
    """Utterance-per-line dialogue with separator lines between topic segments."""
    sep = re.compile(separator)
    utterances: list[str] = []
    cuts: set[int] = set()
    for line in text.splitlines():
        if sep.match(line):
            if len(utterances) % 2:
                raise DatasetError(f"{name}: segment separator after utterance {len(utterances)} splits a turn")
            if utterances:
                cuts.add(len(utterances) // 2)
            continue
        if line.strip():
            utterances.append(line.strip())
    if not utterances:
        raise DatasetError(f"{name}: no utterances")
    turns = []
    for i in range(0, len(utterances), 2):
        agent = utterances[i + 1] if i + 1 < len(utterances) else None
        turns.append(Turn(i // 2 + 1, utterances[i], agent))
    t = len(turns)
    conv = Conversation(name, tuple(turns), {"dataset": "dialseg711"})
    return conv, BoundarySet(t, frozenset(c for c in cuts if 1 <= c <= t - 1))


def load_dialseg711(path: str | Path, separator: str = DEFAULT_SEPARATOR) -> DatasetBundle:
    """Load a directory of DialSeg711 dialogue files, one dialogue per file."""
    root = Path(path)
    if not root.is_dir():
        raise DatasetError(f"{root} is not a directory")
    conversations, gold = [], {}
    for file in sorted(p for p in root.iterdir() if p.is_file() and not p.name.startswith(".")):
        try:
            text = file.read_text(encoding="utf-8")
        except (OSError, UnicodeDecodeError) as exc:
            raise DatasetError(f"cannot read {file}: {exc}") from exc
        conv, boundaries = parse_dialseg_text(text, file.stem, separator)
        conversations.append(conv)
        gold[conv.id] = boundaries
    return DatasetBundle(tuple(conversations), gold, "dialseg711")


# ---------------------------------------------------------------------------
# Canonical JSONL
# ---------------------------------------------------------------------------

def gold_to_json(gold: Any) -> dict[str, Any]:
    if isinstance(gold, DialogueStateRecord):
        return {"type": "record", **gold.to_dict()}
    if isinstance(gold, BoundarySet):
        return {"type": "boundaries", "length": gold.length, "boundaries": sorted(gold.indices)}
    return {"type": "slots", "states": [dict(s.state) for s in gold]}


def gold_from_json(data: Mapping[str, Any], t: int) -> Any:
    kind = data.get("type")
    if kind == "record":
        record = DialogueStateRecord.from_dict(data, t)
        problems = validate_record(record, t)
        if problems:
            raise DatasetError("; ".join(problems))
        return record
    if kind == "boundaries":
        return BoundarySet(t, frozenset(data.get("boundaries", ())))
    if kind == "slots":
        return [TurnSlotState(i, s) for i, s in enumerate(data["states"], start=1)]
    raise DatasetError(f"unknown gold type {kind!r}")


def conversation_to_json(conv: Conversation, gold: Any = None) -> dict[str, Any]:
    record: dict[str, Any] = {"id": conv.id, "turns": [{"user": t.user, "agent": t.agent} for t in conv.turns]}
    if conv.source:
        record["source"] = dict(conv.source)
    record["gold"] = gold_to_json(gold) if gold is not None else None
    return record


def load_jsonl(path: str | Path) -> DatasetBundle:
    conversations, gold = [], {}
    seen = set()
    try:
        lines = Path(path).read_text(encoding="utf-8").splitlines()
    except (OSError, UnicodeDecodeError) as exc:
        raise DatasetError(f"cannot read {path}: {exc}") from exc
    for lineno, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            data = json.loads(line)
            conv_id = str(data["id"])
            turns = tuple(Turn(i, t["user"], t.get("agent")) for i, t in enumerate(data["turns"], start=1))
            conv = Conversation(conv_id, turns, data.get("source") or {})
            if conv_id in seen:
                raise DatasetError(f"duplicate conversation id {conv_id!r}")
            seen.add(conv_id)
            if data.get("gold") is not None:
                gold[conv_id] = gold_from_json(data["gold"], len(turns))
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
            raise DatasetError(f"{path}:{lineno}: {exc}") from exc
        conversations.append(conv)
    return DatasetBundle(tuple(conversations), gold, "jsonl")


def write_jsonl(bundle: DatasetBundle, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for conv in bundle.conversations:
            fh.write(json.dumps(conversation_to_json(conv, bundle.gold.get(conv.id)), ensure_ascii=False))
            fh.write("\n")


def load_dataset(path: str | Path, fmt: str, schema: LabelSchema | None = None,
                 separator: str = DEFAULT_SEPARATOR) -> DatasetBundle:
    if fmt == "mwoz21":
        return load_mwoz(path, "2.1", schema)
    if fmt == "mwoz24":
        return load_mwoz(path, "2.4", schema)
    if fmt == "dialseg711":
        return load_dialseg711(path, separator)
    if fmt == "jsonl":
        return load_jsonl(path)
    raise DatasetError(f"unknown dataset format {fmt!r}")


# ---------------------------------------------------------------------------
# Splits
# ---------------------------------------------------------------------------

def _draw(seed: int, i: int) -> int:
    digest = hashlib.sha256(f"{seed}:{i}".encode("ascii")).digest()
    return int.from_bytes(digest[:8], "big")


def seeded_permutation(items: list, seed: int) -> list:
    """Fisher-Yates shuffle driven by SHA-256 of ``"{seed}:{i}"``.

    Position ``i`` (counting down from ``n - 1``) swaps with
    ``draw(i) mod (i + 1)``, where ``draw`` is the first 8 digest bytes read
    big-endian. Unlike ``random.shuffle``, the result does not depend on the
    Python version or platform.
    """
    out = list(items)
    for i in range(len(out) - 1, 0, -1):
        j = _draw(seed, i) % (i + 1)
        out[i], out[j] = out[j], out[i]
    return out


def split_dev_test(bundle: DatasetBundle, n_dev: int = 150, seed: int = 0) -> tuple[DatasetBundle, DatasetBundle]:
    if not 0 <= n_dev < len(bundle):
        raise DatasetError(f"n_dev={n_dev} must be in [0, {len(bundle) - 1}]")
    order = seeded_permutation([c.id for c in bundle.conversations], seed)
    return bundle.subset(order[:n_dev]), bundle.subset(order[n_dev:])
