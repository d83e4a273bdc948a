"""End-to-end pipeline: prompt, generate, parse, track and score each conversation."""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Any, Collection, Iterable, Mapping, Sequence

from .core import (NO, BoundarySet, Conversation, DialogueStateRecord, LabelSchema, SchemaError,
                   TurnSlotState)
from .data import DatasetBundle
from .llm import Backend, GenerationParams
from .metrics import MetricReport, MetricTotals, build_report, score_conversation
from .parse import (ParseReport, TurnAnnotation, parse_icdst_output, parse_mwoz_output, parse_s3dst_output,
                    serialize_icdst, serialize_mwoz, serialize_s3dst)
from .prompt import PromptVariant, build_prompt, check_mode
from .track import normalize_value, reconstruct_segments, resolve_cumulative_state

log = logging.getLogger(__name__)

METRIC_NAMES = ("jga", "accuracy", "pk", "window_diff")


@dataclass(frozen=True)
class RunConfig:
    variant: PromptVariant
    schema: LabelSchema
    params: GenerationParams = GenerationParams()
    concurrency: int = 1
    window_size: int | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "variant", PromptVariant(self.variant))
        if self.concurrency < 1:
            raise ValueError("concurrency must be >= 1")
        if self.window_size is not None and self.window_size < 1:
            raise ValueError("window size must be >= 1")


def check_compatible(bundle: DatasetBundle, variant: PromptVariant, schema: LabelSchema) -> None:
    """Reject variant/dataset combinations that cannot be scored."""
    check_mode(schema, variant)
    kind = bundle.gold_kind()
    if variant is PromptVariant.S3DST_MWOZ:
        if kind not in (None, "slots"):
            raise SchemaError(f"{variant.value} needs slot-state gold, dataset has {kind} gold")
    elif kind == "slots":
        raise SchemaError(f"slot-state gold can only be scored with {PromptVariant.S3DST_MWOZ.value}")
    elif kind == "boundaries" and not variant.segments:
        raise SchemaError(f"{variant.value} predicts no boundaries; dataset only has boundary gold")


def parse_output(text: str, conv: Conversation, variant: PromptVariant, schema: LabelSchema) -> ParseReport:
    t = len(conv)
    if variant is PromptVariant.S3DST_MWOZ:
        return parse_mwoz_output(text, t, schema)
    if variant is PromptVariant.ICDST_SQL:
        return parse_icdst_output(text, t, schema)
    return parse_s3dst_output(text, t, schema, variant)


def predict(conv: Conversation, response: str, variant: PromptVariant, schema: LabelSchema) -> dict[str, Any]:
    """Prediction record for one conversation from the raw model response."""
    report = parse_output(response, conv, variant, schema)
    failed = report.failed_turns
    out: dict[str, Any] = {"id": conv.id, "variant": variant.value}
    if variant is PromptVariant.S3DST_MWOZ:
        states = resolve_cumulative_state(report.annotations)
        known = {s.name: s for s in schema.slots}
        by_turn = {st.turn_index: {k: normalize_value(known.get(k), v) for k, v in st.state.items()}
                   for st in states}
        out["annotations"] = [{"turn": st.turn_index, "entries": [list(p) for p in st.raw]} for st in states]
        out["record"] = None
        out["turns"] = [by_turn.get(i) for i in range(1, len(conv) + 1)]
    else:
        record = reconstruct_segments(report.annotations, len(conv), segment=variant.segments)
        kinds = variant.labels(schema.mode)
        labels = record.turn_labels()
        out["annotations"] = [a.to_dict() for a in report.annotations]
        out["record"] = record.to_dict() if variant.segments else None
        out["turns"] = [None if i in failed else {k: v for k, v in labels[i - 1].items() if k in kinds}
                        for i in range(1, len(conv) + 1)]
    out["diagnostics"] = {"recovered": [list(x) for x in report.recovered],
                          "failures": [list(x) for x in report.failures]}
    out["response"] = response
    return out


def run_predictions(bundle: DatasetBundle, config: RunConfig, backend: Backend) -> list[dict[str, Any]]:
    """Predict every conversation, at most ``config.concurrency`` at a time, in dataset order."""
    check_compatible(bundle, config.variant, config.schema)

    def one(conv: Conversation) -> dict[str, Any]:
        prompt = build_prompt(config.variant, conv, config.schema)
        response = backend.complete(prompt.text, config.params)
        return predict(conv, response, config.variant, config.schema)

    if config.concurrency == 1:
        return [one(c) for c in bundle.conversations]
    with ThreadPoolExecutor(max_workers=config.concurrency) as pool:
        return list(pool.map(one, bundle.conversations))


# ---------------------------------------------------------------------------
# Scoring
# ---------------------------------------------------------------------------

def _gold_turns(gold: Any) -> list[dict[str, str]]:
    if isinstance(gold, DialogueStateRecord):
        return gold.turn_labels()
    if isinstance(gold, BoundarySet):
        return [{"segment": lab} for lab in gold.relation_labels()]
    return [dict(st.state) for st in gold]


def _gold_boundaries(gold: Any) -> BoundarySet | None:
    if isinstance(gold, DialogueStateRecord):
        return gold.boundaries
    if isinstance(gold, BoundarySet):
        return gold
    return None


def applicable_metrics(variant: PromptVariant, schema: LabelSchema, kind: str | None) -> dict[str, Any]:
    if kind is None:
        return {"jga": (), "labels": (), "segmentation": False}
    if variant is PromptVariant.S3DST_MWOZ:
        return {"jga": ("slots",), "labels": (), "segmentation": False}
    labels = variant.labels(schema.mode)
    if kind == "boundaries":
        labels = tuple(k for k in labels if k == "segment")
    jga = []
    if "intent" in labels and "domain" in labels:
        jga.append("I/D")
        if "segment" in labels:
            jga.append("S/I/D")
    return {"jga": tuple(jga), "labels": labels, "segmentation": "segment" in labels}


def score_predictions(predictions: Iterable[Mapping[str, Any]], bundle: DatasetBundle, variant: PromptVariant,
                      schema: LabelSchema, window_size: int | None = None,
                      metrics: Collection[str] | None = None) -> MetricReport:
    """Recompute the metric report from stored prediction records.

    Conversations without a prediction record score every turn as wrong.
    """
    variant = PromptVariant(variant)
    by_id = {p["id"]: p for p in predictions}
    unknown = sorted(set(by_id) - {c.id for c in bundle.conversations})
    if unknown:
        raise ValueError(f"predictions for conversations not in the dataset: {unknown[:5]}")
    kind = bundle.gold_kind()
    wanted = applicable_metrics(variant, schema, kind)
    metrics = set(metrics or METRIC_NAMES)
    if "jga" not in metrics:
        wanted["jga"] = ()
    if "accuracy" not in metrics:
        wanted["labels"] = ()
    segmentation = wanted["segmentation"] and bool(metrics & {"pk", "window_diff"})

    known = {s.name: s for s in schema.slots}

    def normalize(key: str, value: str) -> str:
        return normalize_value(known[key], value) if key in known else value

    totals = MetricTotals()
    for conv in bundle.conversations:
        gold = bundle.gold.get(conv.id)
        if gold is None:
            totals = totals.merge(MetricTotals(turns=len(conv), conversations=1))
            continue
        pred = by_id.get(conv.id)
        if pred is None:
            log.warning("no prediction for %s; scoring its %d turns as wrong", conv.id, len(conv))
            turns: Sequence[Any] = [None] * len(conv)
            hyp = BoundarySet(len(conv)) if segmentation else None
            failures = len(conv)
        else:
            turns = pred["turns"]
            failures = len(pred["diagnostics"]["failures"])
            hyp = None
            if segmentation and pred.get("record"):
                hyp = DialogueStateRecord.from_dict(pred["record"], len(conv)).boundaries
        totals = totals.merge(score_conversation(
            turns, _gold_turns(gold), jga=wanted["jga"], labels=wanted["labels"],
            ref=_gold_boundaries(gold) if segmentation else None, hyp=hyp,
            window_size=window_size, parse_failures=failures, normalize=normalize,
        ))
    report = build_report(totals, jga=wanted["jga"], labels=wanted["labels"], segmentation=segmentation,
                          variant=variant.value, window_size=window_size)
    if "pk" not in metrics:
        report.pk = None
    if "window_diff" not in metrics:
        report.window_diff = None
    return report


# ---------------------------------------------------------------------------
# Gold echo
# ---------------------------------------------------------------------------

def gold_annotations(conv: Conversation, gold: Any, variant: PromptVariant,
                     schema: LabelSchema) -> list[TurnAnnotation]:
    kinds = variant.labels(schema.mode)
    labels = _gold_turns(gold)
    out = []
    for turn, lab in zip(conv.turns, labels):
        summary = turn.user.splitlines()[0][:200] if variant.has_par else None
        out.append(TurnAnnotation(
            turn.index,
            lab.get("segment", NO if turn.index == 1 else None) if "segment" in kinds else None,
            lab.get("intent") if "intent" in kinds else None,
            lab.get("domain") if "domain" in kinds else None,
            summary,
        ))
    return out


def gold_response(conv: Conversation, gold: Any, variant: PromptVariant, schema: LabelSchema) -> str:
    """A model answer that reproduces ``gold`` exactly in ``variant``'s output format."""
    variant = PromptVariant(variant)
    if variant is PromptVariant.S3DST_MWOZ:
        states = [TurnSlotState(st.turn_index, st.state, tuple(st.state.items())) for st in gold]
        return serialize_mwoz(states, conv)
    annotations = gold_annotations(conv, gold, variant, schema)
    if variant is PromptVariant.ICDST_SQL:
        return serialize_icdst(annotations)
    return serialize_s3dst(annotations, variant)
