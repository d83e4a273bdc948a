"""Prompt rendering for every supported prompt variant.

All functions here are pure: the same variant, conversation and schema always
render to the same bytes.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from enum import Enum
from functools import lru_cache
from importlib import resources
from typing import Mapping
from xml.sax.saxutils import escape

from .core import Conversation, LabelSchema, SchemaError

_ENTITIES = {'"': "&quot;", "'": "&apos;"}
_PLACEHOLDER = re.compile(r"\{\{(\w+)\}\}")


class PromptVariant(str, Enum):
    S3DST_JOINT = "S3DST_JOINT"
    S3DST_NO_PAR = "S3DST_NO_PAR"
    S3DST_UNSTRUCTURED_INPUT = "S3DST_UNSTRUCTURED_INPUT"
    S3DST_SEGMENT_ONLY = "S3DST_SEGMENT_ONLY"
    S3DST_MWOZ = "S3DST_MWOZ"
    TBT_DST = "TBT_DST"
    ICDST_SQL = "ICDST_SQL"

    @property
    def has_par(self) -> bool:
        return self in (PromptVariant.S3DST_JOINT, PromptVariant.S3DST_UNSTRUCTURED_INPUT,
                        PromptVariant.S3DST_SEGMENT_ONLY, PromptVariant.TBT_DST)

    @property
    def segments(self) -> bool:
        """Whether the variant asks for the preceding_topical_relation label."""
        return self not in (PromptVariant.TBT_DST, PromptVariant.S3DST_MWOZ)

    def labels(self, schema_mode: str) -> tuple[str, ...]:
        """Open-domain label kinds the variant predicts."""
        if self is PromptVariant.S3DST_MWOZ:
            return ()
        kinds = ("segment",) if self.segments else ()
        if self is PromptVariant.S3DST_SEGMENT_ONLY or schema_mode == "segment":
            return kinds
        return kinds + ("intent", "domain")


@dataclass(frozen=True)
class RenderedPrompt:
    variant: PromptVariant
    text: str
    turn_count: int
    schema_fingerprint: str


def xml_escape(text: str) -> str:
    return escape(text, _ENTITIES)


def render_conversation_xml(conv: Conversation) -> str:
    blocks = []
    for turn in conv.turns:
        blocks.append(
            f"<T{turn.index}>\n"
            f"<user>{xml_escape(turn.user)}</user>\n"
            f"<agent>{xml_escape(turn.agent or '')}</agent>\n"
            f"</T{turn.index}>"
        )
    return "\n".join(blocks)


def render_conversation_plain(conv: Conversation) -> str:
    """Plain-text turns numbered T1..Tt, used by the unstructured and SQL prompts."""
    blocks = []
    for turn in conv.turns:
        blocks.append(f"T{turn.index}\nUser: {turn.user}\nAgent: {turn.agent or ''}")
    return "\n".join(blocks)


def render_mwoz_conversation_xml(conv: Conversation) -> str:
    """Each turn carries the previous turn's agent reply as its agent context."""
    blocks = []
    previous = ""
    for turn in conv.turns:
        blocks.append(
            f"<T{turn.index}>\n"
            f"<agent_context>{xml_escape(previous)}</agent_context>\n"
            f"<user>{xml_escape(turn.user)}</user>\n"
            f"</T{turn.index}>"
        )
        previous = turn.agent or ""
    return "\n".join(blocks)


def _required_mode(variant: PromptVariant) -> tuple[str, ...]:
    if variant is PromptVariant.S3DST_MWOZ:
        return ("mwoz",)
    if variant in (PromptVariant.S3DST_SEGMENT_ONLY, PromptVariant.ICDST_SQL):
        return ("open", "segment")
    return ("open",)


def check_mode(schema: LabelSchema, variant: PromptVariant) -> None:
    allowed = _required_mode(variant)
    if schema.mode not in allowed:
        raise SchemaError(f"{variant.value} needs a {' or '.join(allowed)} schema, got a {schema.mode} schema")


def _domains_xml(schema: LabelSchema) -> list[str]:
    return ["<valid_domains>", *(f"<item>{d}</item>" for d in schema.domains), "</valid_domains>"]


def _relation_xml(schema: LabelSchema) -> list[str]:
    lines = ["<valid_preceding_topical_relation>"]
    for name, desc in schema.segmentation_labels:
        lines += ["<item>", f"<name>{name}</name>", f"<desc>{desc}</desc>", "</item>"]
    lines.append("</valid_preceding_topical_relation>")
    return lines


def _intents_xml(schema: LabelSchema) -> list[str]:
    lines = ["<valid_intents>"]
    for name, desc in schema.intents:
        lines += ["<item>", f"<name>{name}</name>", f"<desc>{desc}</desc>", "</item>"]
    lines.append("</valid_intents>")
    return lines


def _slots_xml(schema: LabelSchema) -> list[str]:
    lines = ["<slots>"]
    for slot in schema.slots:
        lines += ["<item>", f"<name>{slot.name}</name>", f"<description>{slot.description}</description>"]
        if slot.valid_values:
            lines.append(f"<valid_values>{', '.join(slot.valid_values)}</valid_values>")
        lines.append("</item>")
    lines.append("</slots>")
    return lines


def _sql_schema(schema: LabelSchema) -> list[str]:
    relation = dict(schema.segmentation_labels)
    lines = ["CREATE TABLE states("]
    if schema.mode == "open":
        lines.append(f"domain text CHECK (domain IN ({', '.join(schema.domains)})),")
    lines.append("preceding_topical_relation text CHECK (preceding_topical_relation IN (YES, NO)),")
    if schema.mode == "open":
        lines.append(f"intent text CHECK (intent IN ({', '.join(n for n, _ in schema.intents)})),")
    lines += [
        ")",
        "/*",
        "## DESCRIPTION OF SELECTED COLUMN-VALUE PAIRS:",
        f"- preceding_topical_relation-NO: {relation['NO']}",
        f"- preceding_topical_relation-YES: {relation['YES']}",
    ]
    if schema.mode == "open":
        lines += [f"- intent-{name}: {desc}" for name, desc in schema.intents]
    lines.append("*/")
    return lines


def render_schema_xml(schema: LabelSchema, variant: PromptVariant) -> str:
    """Render the label block of the prompt for ``variant``.

    For ``ICDST_SQL`` this is the ``states`` table definition rather than XML.
    """
    variant = PromptVariant(variant)
    check_mode(schema, variant)
    if variant is PromptVariant.S3DST_MWOZ:
        lines = _slots_xml(schema)
    elif variant is PromptVariant.ICDST_SQL:
        lines = _sql_schema(schema)
    elif variant is PromptVariant.S3DST_SEGMENT_ONLY:
        lines = _relation_xml(schema)
    elif variant is PromptVariant.TBT_DST:
        lines = _domains_xml(schema) + _intents_xml(schema)
    else:
        lines = _domains_xml(schema) + _relation_xml(schema) + _intents_xml(schema)
    return "\n".join(lines)


@lru_cache(maxsize=None)
def load_template(name: str) -> str:
    return resources.files("segdst").joinpath("templates", f"{name}.txt").read_text(encoding="utf-8")


def template_name(variant: PromptVariant, schema: LabelSchema) -> str:
    if variant is PromptVariant.ICDST_SQL and schema.mode == "segment":
        return "icdst_sql_segment"
    return variant.value.lower()


def fill_template(template: str, values: Mapping[str, str]) -> str:
    """Substitute ``{{name}}`` markers in a single pass."""

    def sub(match: re.Match[str]) -> str:
        key = match.group(1)
        if key not in values:
            raise KeyError(f"template placeholder {{{{{key}}}}} has no value")
        return values[key]

    return _PLACEHOLDER.sub(sub, template)


def render_conversation_for(variant: PromptVariant, conv: Conversation) -> str:
    if variant is PromptVariant.S3DST_MWOZ:
        return render_mwoz_conversation_xml(conv)
    if variant in (PromptVariant.S3DST_UNSTRUCTURED_INPUT, PromptVariant.ICDST_SQL):
        return render_conversation_plain(conv)
    return render_conversation_xml(conv)


def build_prompt(variant: PromptVariant | str, conv: Conversation, schema: LabelSchema) -> RenderedPrompt:
    variant = PromptVariant(variant)
    check_mode(schema, variant)
    if not conv.turns:
        raise ValueError(f"conversation {conv.id!r} has no turns")
    text = fill_template(
        load_template(template_name(variant, schema)),
        {
            "schema": render_schema_xml(schema, variant),
            "conversation": render_conversation_for(variant, conv),
            "turn_count": str(len(conv)),
        },
    )
    return RenderedPrompt(variant, text, len(conv), schema.fingerprint())
