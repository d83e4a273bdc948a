from __future__ import annotations

import difflib
import re

import pytest
from hypothesis import given
from hypothesis import strategies as st

from segdst.core import Conversation, SchemaError, Turn
from segdst.parse import parse_conversation_xml
from segdst.prompt import (PromptVariant, build_prompt, fill_template, load_template, render_conversation_plain,
                           render_conversation_xml, render_schema_xml, xml_escape)

from regen_golden import golden_path, golden_prompts

SEGMENT_TAGS = ("preceding_topical_relation", "valid_preceding_topical_relation")
PAR_LINES = ("- Summarize the turn in <=3 sentences", "<summary>{turn summary in <=3 sentences}</summary>")


def removed_lines(a: str, b: str) -> tuple[list[str], list[str]]:
    diff = list(difflib.ndiff(a.splitlines(), b.splitlines()))
    return [d[2:] for d in diff if d.startswith("- ")], [d[2:] for d in diff if d.startswith("+ ")]


@pytest.fixture(scope="module")
def prompts():
    return golden_prompts()


@pytest.mark.parametrize("variant", list(PromptVariant), ids=lambda v: v.value)
def test_golden_snapshot(prompts, variant):
    assert prompts[variant].encode("utf-8") == golden_path(variant).read_bytes()


def test_no_par_is_joint_minus_par_lines():
    joint = golden_path(PromptVariant.S3DST_JOINT).read_text(encoding="utf-8")
    no_par = golden_path(PromptVariant.S3DST_NO_PAR).read_text(encoding="utf-8")
    removed, added = removed_lines(joint, no_par)
    assert added == []
    assert tuple(removed) == PAR_LINES


def test_tbt_has_no_segmentation_tags(prompts):
    text = prompts[PromptVariant.TBT_DST]
    for tag in SEGMENT_TAGS:
        assert tag not in text
    assert "<summary>" in text


def test_joint_contains_relation_list(prompts):
    assert "<valid_preceding_topical_relation>" in prompts[PromptVariant.S3DST_JOINT]


@pytest.mark.parametrize("variant", [v for v in PromptVariant if v is not PromptVariant.S3DST_MWOZ])
def test_each_label_listed_once(prompts, open_schema, variant):
    text = prompts[variant]
    kinds = variant.labels(open_schema.mode)
    if variant is PromptVariant.ICDST_SQL:
        return  # labels sit in CHECK constraints, tested below
    if "domain" in kinds:
        for d in open_schema.domains:
            assert text.count(f"<item>{d}</item>") == 1, d
    if "intent" in kinds:
        for name, _ in open_schema.intents:
            assert text.count(f"<name>{name}</name>") == 1, name


def test_sql_schema_lists_every_label(open_schema):
    ddl = render_schema_xml(open_schema, PromptVariant.ICDST_SQL)
    for d in open_schema.domains:
        assert ddl.count(d) >= 1
    for name, _ in open_schema.intents:
        assert f"- intent-{name}:" in ddl


def test_mwoz_prompt_lists_slots(prompts, mwoz_schema):
    text = prompts[PromptVariant.S3DST_MWOZ]
    for slot in mwoz_schema.slots:
        assert f"<name>{slot.name}</name>" in text


def test_segment_schema_drops_labels(segment_schema, dialseg_bundle):
    conv = dialseg_bundle.conversations[0]
    text = build_prompt(PromptVariant.S3DST_SEGMENT_ONLY, conv, segment_schema).text
    assert "<valid_intents>" not in text and "<valid_domains>" not in text
    sql = build_prompt(PromptVariant.ICDST_SQL, conv, segment_schema).text
    head = sql.split("## INPUT ##")[0].lower()
    assert "intent" not in head and "domain" not in head


def test_deterministic(open_bundle, open_schema):
    conv = open_bundle.conversations[0]
    a = build_prompt(PromptVariant.S3DST_JOINT, conv, open_schema)
    b = build_prompt("S3DST_JOINT", conv, open_schema)
    assert a == b and a.turn_count == len(conv)


def test_mode_mismatch(open_bundle, mwoz_schema, open_schema):
    conv = open_bundle.conversations[0]
    with pytest.raises(SchemaError):
        build_prompt(PromptVariant.S3DST_JOINT, conv, mwoz_schema)
    with pytest.raises(SchemaError):
        build_prompt(PromptVariant.S3DST_MWOZ, conv, open_schema)


def test_unstructured_input_is_plain(prompts):
    text = prompts[PromptVariant.S3DST_UNSTRUCTURED_INPUT]
    body = text.split("## INPUT ##")[1]
    assert "<T1>" not in body and "User: " in body


def test_fill_template():
    assert fill_template("a {{x}} b {{y}}", {"x": "{{y}}", "y": "2"}) == "a {{y}} b 2"
    with pytest.raises(KeyError):
        fill_template("{{missing}}", {})


@pytest.mark.parametrize("name", ["s3dst_joint", "s3dst_no_par", "s3dst_unstructured_input", "s3dst_segment_only",
                                  "s3dst_mwoz", "tbt_dst", "icdst_sql", "icdst_sql_segment"])
def test_templates_have_both_markers(name):
    template = load_template(name)
    assert set(re.findall(r"\{\{(\w+)\}\}", template)) == {"schema", "conversation"}


def test_escape():
    assert xml_escape("a & <b> \"c\" 'd'") == "a &amp; &lt;b&gt; &quot;c&quot; &apos;d&apos;"


texts = st.text(st.characters(blacklist_categories=("Cs", "Cc")), min_size=1, max_size=40).filter(str.strip)


@given(st.lists(st.tuples(texts, texts), min_size=1, max_size=6))
def test_conversation_xml_roundtrip(pairs):
    turns = tuple(Turn(i, u, a) for i, (u, a) in enumerate(pairs, start=1))
    conv = Conversation("x", turns)
    assert parse_conversation_xml(render_conversation_xml(conv), "x").turns == conv.turns


def test_plain_rendering():
    conv = Conversation("x", (Turn(1, "hi", "hello"), Turn(2, "bye")))
    assert render_conversation_plain(conv) == "T1\nUser: hi\nAgent: hello\nT2\nUser: bye\nAgent: "
