"""Evaluation metrics: joint goal accuracy, per-label accuracy, Pk, WindowDiff, Fleiss' kappa."""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field
from fractions import Fraction
from itertools import accumulate
from typing import Any, Callable, Collection, Hashable, Mapping, Sequence

from .core import BoundarySet

REPORT_SCHEMA_VERSION = 1

TurnKey = Hashable
TurnLabels = Mapping[str, str]


class MisalignedError(ValueError):
    """Predictions and gold cover different turns."""


def _check_aligned(preds: Mapping[TurnKey, Any], golds: Mapping[TurnKey, Any]) -> None:
    if preds.keys() != golds.keys():
        missing = len(golds.keys() - preds.keys())
        extra = len(preds.keys() - golds.keys())
        raise MisalignedError(f"prediction/gold turns differ ({missing} missing, {extra} unexpected)")
    if not golds:
        raise ValueError("no turns to score")


def _identity(kind: str, value: str) -> str:
    return value


def _turn_matches(pred: TurnLabels | None, gold: TurnLabels, kinds: Collection[str] | None,
                  normalize: Callable[[str, str], str]) -> bool:
    if pred is None:
        return False
    if kinds is None:
        keys = set(pred) | set(gold)
    else:
        keys = set(kinds)
    for key in keys:
        p, g = pred.get(key), gold.get(key)
        if p is None or g is None:
            if p is not g:
                return False
            continue
        if normalize(key, p) != normalize(key, g):
            return False
    return True


def joint_goal_accuracy(preds: Mapping[TurnKey, TurnLabels | None], golds: Mapping[TurnKey, TurnLabels],
                        label_kinds: Collection[str] | None = None,
                        normalize: Callable[[str, str], str] = _identity) -> float:
    """Fraction of turns whose selected values all match gold.

    ``label_kinds=None`` compares every key present on either side (all slots
    in MWOZ mode). A ``None`` prediction is a parse failure and never matches.
    """
    _check_aligned(preds, golds)
    hits = sum(_turn_matches(preds[k], golds[k], label_kinds, normalize) for k in golds)
    return hits / len(golds)


def per_label_accuracy(preds: Mapping[TurnKey, TurnLabels | None], golds: Mapping[TurnKey, TurnLabels],
                       kind: str, normalize: Callable[[str, str], str] = _identity) -> float:
    return joint_goal_accuracy(preds, golds, (kind,), normalize)


# ---------------------------------------------------------------------------
# Segmentation
# ---------------------------------------------------------------------------

def default_window_size(ref: BoundarySet) -> int:
    """Half the mean reference segment length, rounded half up, at least 1."""
    if ref.length < 2:
        raise ValueError("window size needs at least 2 turns")
    half_mean = Fraction(ref.length, 2 * (len(ref.indices) + 1))
    return max(1, math.floor(half_mean + Fraction(1, 2)))


def _window_args(ref: BoundarySet, hyp: BoundarySet, k: int | None) -> int:
    if ref.length != hyp.length:
        raise ValueError(f"length mismatch: ref {ref.length}, hyp {hyp.length}")
    if ref.length < 2:
        raise ValueError("segmentation metrics need at least 2 turns")
    if k is None:
        k = default_window_size(ref)
    if not 1 <= k < ref.length:
        raise ValueError(f"window size {k} outside [1, {ref.length - 1}]")
    return k


def _boundary_prefix(bs: BoundarySet) -> list[int]:
    """prefix[j] = number of boundaries with index <= j, for j in 0..N-1."""
    return [0] + list(accumulate(1 if i in bs.indices else 0 for i in range(1, bs.length)))


def _window_errors(ref: BoundarySet, hyp: BoundarySet, k: int, compare: Callable[[int, int], bool]) -> Fraction:
    pr, ph = _boundary_prefix(ref), _boundary_prefix(hyp)
    n = ref.length
    errors = 0
    for i in range(1, n - k + 1):
        # boundaries with index in [i, i + k - 1]
        if compare(pr[i + k - 1] - pr[i - 1], ph[i + k - 1] - ph[i - 1]):
            errors += 1
    return Fraction(errors, n - k)


def pk_fraction(ref: BoundarySet, hyp: BoundarySet, k: int | None = None) -> Fraction:
    k = _window_args(ref, hyp, k)
    return _window_errors(ref, hyp, k, lambda r, h: (r == 0) != (h == 0))


def window_diff_fraction(ref: BoundarySet, hyp: BoundarySet, k: int | None = None) -> Fraction:
    k = _window_args(ref, hyp, k)
    return _window_errors(ref, hyp, k, lambda r, h: r != h)


def pk(ref: BoundarySet, hyp: BoundarySet, k: int | None = None) -> float:
    """Pk: share of windows where turns ``i`` and ``i + k`` are same-segment in one
    segmentation but not the other."""
    return float(pk_fraction(ref, hyp, k))


def window_diff(ref: BoundarySet, hyp: BoundarySet, k: int | None = None) -> float:
    """WindowDiff: share of windows whose boundary counts differ.

    Boundary ``j`` lies in window ``i`` iff ``i <= j <= i + k - 1``.
    """
    return float(window_diff_fraction(ref, hyp, k))


# ---------------------------------------------------------------------------
# Agreement
# ---------------------------------------------------------------------------

def fleiss_kappa(ratings: Sequence[Sequence[int]], n_raters: int) -> float:
    """Fleiss' kappa for an item x category matrix of rating counts.

    Returns 1.0 when chance agreement is already perfect (every rating in one
    category), where the usual formula is 0/0.
    """
    if n_raters < 2:
        raise ValueError("need at least 2 raters")
    if not ratings:
        raise ValueError("need at least 1 item")
    for row_no, row in enumerate(ratings):
        if sum(row) != n_raters or any(c < 0 for c in row):
            raise ValueError(f"item {row_no}: counts {list(row)} do not sum to {n_raters}")
    n_items = len(ratings)
    pairs = n_raters * (n_raters - 1)
    p_bar = sum(Fraction(sum(c * c for c in row) - n_raters, pairs) for row in ratings) / n_items
    totals = [sum(col) for col in zip(*ratings)]
    p_e = sum(Fraction(t, n_items * n_raters) ** 2 for t in totals)
    if p_e == 1:
        return 1.0
    return float((p_bar - p_e) / (1 - p_e))


# ---------------------------------------------------------------------------
# Aggregation
# ---------------------------------------------------------------------------

@dataclass
class MetricTotals:
    """Exact running counts. ``merge`` is associative and commutative."""

    turns: int = 0
    conversations: int = 0
    parse_failures: int = 0
    jga_hits: Counter = field(default_factory=Counter)
    label_hits: Counter = field(default_factory=Counter)
    pk_sum: Fraction = Fraction(0)
    wd_sum: Fraction = Fraction(0)
    segmented_conversations: int = 0

    def merge(self, other: MetricTotals) -> MetricTotals:
        return MetricTotals(
            self.turns + other.turns,
            self.conversations + other.conversations,
            self.parse_failures + other.parse_failures,
            self.jga_hits + other.jga_hits,
            self.label_hits + other.label_hits,
            self.pk_sum + other.pk_sum,
            self.wd_sum + other.wd_sum,
            self.segmented_conversations + other.segmented_conversations,
        )


JGA_VARIANTS = {"I/D": ("intent", "domain"), "S/I/D": ("segment", "intent", "domain"), "slots": None}


def score_conversation(preds: Sequence[TurnLabels | None], golds: Sequence[TurnLabels], *,
                       jga: Collection[str] = (), labels: Collection[str] = (),
                       ref: BoundarySet | None = None, hyp: BoundarySet | None = None,
                       window_size: int | None = None, parse_failures: int = 0,
                       normalize: Callable[[str, str], str] = _identity) -> MetricTotals:
    """Counts for one conversation; ``jga`` names keys of ``JGA_VARIANTS``."""
    if len(preds) != len(golds):
        raise MisalignedError(f"{len(preds)} predicted turns vs {len(golds)} gold turns")
    totals = MetricTotals(turns=len(golds), conversations=1, parse_failures=parse_failures)
    for pred, gold in zip(preds, golds):
        for name in jga:
            totals.jga_hits[name] += _turn_matches(pred, gold, JGA_VARIANTS[name], normalize)
        for kind in labels:
            totals.label_hits[kind] += _turn_matches(pred, gold, (kind,), normalize)
    if ref is not None and hyp is not None and ref.length >= 2:
        k = window_size if window_size is None else min(window_size, ref.length - 1)
        totals.pk_sum = pk_fraction(ref, hyp, k)
        totals.wd_sum = window_diff_fraction(ref, hyp, k)
        totals.segmented_conversations = 1
    return totals


@dataclass
class MetricReport:
    jga: dict[str, float]
    per_label_accuracy: dict[str, float]
    pk: float | None
    window_diff: float | None
    counts: dict[str, int]
    variant: str | None = None
    window_size: int | None = None

    def to_dict(self) -> dict[str, Any]:
        out: dict[str, Any] = {"schema_version": REPORT_SCHEMA_VERSION, "variant": self.variant}
        if self.jga:
            out["jga"] = dict(sorted(self.jga.items()))
        if self.per_label_accuracy:
            out["per_label_accuracy"] = dict(sorted(self.per_label_accuracy.items()))
        if self.pk is not None:
            out["pk"] = self.pk
        if self.window_diff is not None:
            out["window_diff"] = self.window_diff
        if self.pk is not None or self.window_diff is not None:
            out["window_size"] = self.window_size
        out["counts"] = dict(self.counts)
        return out


def build_report(totals: MetricTotals, *, jga: Collection[str] = (), labels: Collection[str] = (),
                 segmentation: bool = False, variant: str | None = None,
                 window_size: int | None = None) -> MetricReport:
    def frac(hits: int) -> float:
        return hits / totals.turns if totals.turns else 0.0

    pk_value = wd_value = None
    if segmentation and totals.segmented_conversations:
        pk_value = float(totals.pk_sum / totals.segmented_conversations)
        wd_value = float(totals.wd_sum / totals.segmented_conversations)
    return MetricReport(
        jga={name: frac(totals.jga_hits[name]) for name in jga},
        per_label_accuracy={kind: frac(totals.label_hits[kind]) for kind in labels},
        pk=pk_value,
        window_diff=wd_value,
        counts={"conversations": totals.conversations, "turns": totals.turns,
                "parse_failures": totals.parse_failures},
        variant=variant,
        window_size=window_size,
    )
