"""Ranking metrics (NDCG@k, Recall@k, Spearman) and per-topic aggregation.

Undefined is a value here, not an error: strict-tie NDCG, cases with no
relevant item, and zero-variance Spearman all report ``defined=False`` and are
excluded from (but counted next to) the aggregate means.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Optional, Sequence

from .corpus import Dataset, DialogueCase
from .errors import CoverageGap

RELEVANCE_THRESHOLD = 4
DEFAULT_KS = (1, 3, 5)


class TiePolicy(str, Enum):
    # undefined when any predicted tie touches the top-k region
    STRICT = "strict"
    # ties broken by input order
    STABLE_INDEX = "stable_index"


@dataclass(frozen=True)
class RankedItem:
    spot_id: str
    predicted: float
    truth: int


@dataclass(frozen=True)
class RankedCase:
    dialogue_id: str
    speaker: str
    items: tuple[RankedItem, ...]


@dataclass(frozen=True)
class MetricValue:
    name: str  # "ndcg", "recall", "spearman"
    k: Optional[int]
    value: Optional[float]
    defined: bool
    reason_if_undefined: str = ""

    @staticmethod
    def of(name: str, k: Optional[int], value: float) -> "MetricValue":
        return MetricValue(name=name, k=k, value=value, defined=True)

    @staticmethod
    def undefined(name: str, k: Optional[int], reason: str) -> "MetricValue":
        return MetricValue(name=name, k=k, value=None, defined=False, reason_if_undefined=reason)


def dcg_at_k(rels: Sequence[int], k: int) -> float:
    if k < 1:
        raise ValueError("k must be >= 1")
    return sum(
        (2 ** rel - 1) / math.log2(i + 2) for i, rel in enumerate(rels[:k])
    )


def _ranked_items(case: RankedCase) -> list[RankedItem]:
    # stable sort by descending prediction preserves input order among ties
    return sorted(case.items, key=lambda it: -it.predicted)


def _has_tie_in_top_k(case: RankedCase, k: int) -> bool:
    ranked = _ranked_items(case)
    limit = min(k, len(ranked))
    for i in range(len(ranked) - 1):
        if ranked[i].predicted == ranked[i + 1].predicted and i < limit:
            return True
    return False


def ndcg_at_k(case: RankedCase, k: int, tie_policy: TiePolicy = TiePolicy.STRICT) -> MetricValue:
    if k < 1:
        raise ValueError("k must be >= 1")
    if tie_policy is TiePolicy.STRICT and _has_tie_in_top_k(case, k):
        return MetricValue.undefined("ndcg", k, "tied predictions in top-k")
    rels = [it.truth for it in _ranked_items(case)]
    ideal = sorted((it.truth for it in case.items), reverse=True)
    idcg = dcg_at_k(ideal, k)
    if idcg == 0:
        return MetricValue.undefined("ndcg", k, "zero ideal DCG")
    return MetricValue.of("ndcg", k, dcg_at_k(rels, k) / idcg)


def recall_at_k(
    case: RankedCase, k: int, relevance_threshold: int = RELEVANCE_THRESHOLD
) -> MetricValue:
    if k < 1:
        raise ValueError("k must be >= 1")
    relevant = {it.spot_id for it in case.items if it.truth >= relevance_threshold}
    if not relevant:
        return MetricValue.undefined("recall", k, "no relevant items")
    top_k = {it.spot_id for it in _ranked_items(case)[:k]}
    return MetricValue.of("recall", k, len(relevant & top_k) / len(relevant))


def _fractional_ranks(values: Sequence[float]) -> list[float]:
    order = sorted(range(len(values)), key=lambda i: values[i])
    ranks = [0.0] * len(values)
    i = 0
    while i < len(order):
        j = i
        while j + 1 < len(order) and values[order[j + 1]] == values[order[i]]:
            j += 1
        avg = (i + j) / 2 + 1  # 1-based average rank across the tie group
        for idx in order[i : j + 1]:
            ranks[idx] = avg
        i = j + 1
    return ranks


def spearman(case: RankedCase) -> MetricValue:
    if len(case.items) < 2:
        return MetricValue.undefined("spearman", None, "fewer than 2 items")
    pred_ranks = _fractional_ranks([it.predicted for it in case.items])
    truth_ranks = _fractional_ranks([float(it.truth) for it in case.items])
    n = len(case.items)
    mean_p = sum(pred_ranks) / n
    mean_t = sum(truth_ranks) / n
    var_p = sum((r - mean_p) ** 2 for r in pred_ranks)
    var_t = sum((r - mean_t) ** 2 for r in truth_ranks)
    if var_p == 0 or var_t == 0:
        return MetricValue.undefined("spearman", None, "zero rank variance")
    cov = sum((p - mean_p) * (t - mean_t) for p, t in zip(pred_ranks, truth_ranks))
    return MetricValue.of("spearman", None, cov / math.sqrt(var_p * var_t))


# --- aggregation ---

_COLUMNS = ("n1", "n3", "n5", "r1", "r3", "r5", "coef")


@dataclass
class ReportRow:
    topic: str  # "ALL" or a topic label
    estimator: str
    cells: dict[str, Optional[float]]  # column -> mean (None = suppressed/no defined cases)
    defined_counts: dict[str, int]
    undefined_counts: dict[str, int]
    suppressed: frozenset = frozenset()


@dataclass
class ReportTable:
    rows: list[ReportRow]

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as f:
            w = csv.writer(f)
            w.writerow(["topic", "estimator", *_COLUMNS, "undefined_counts"])
            for row in self.rows:
                cells = []
                for col in _COLUMNS:
                    if col in row.suppressed or row.cells[col] is None:
                        cells.append("-")
                    else:
                        cells.append(f"{row.cells[col]:.6f}")
                undef = "|".join(f"{c}:{row.undefined_counts[c]}" for c in _COLUMNS)
                w.writerow([row.topic, row.estimator, *cells, undef])

    def to_text(self) -> str:
        header = ["Topic", "Method", "N@1", "N@3", "N@5", "R@1", "R@3", "R@5", "Coef."]
        lines = []
        data = [header]
        for row in self.rows:
            cells = [
                "-" if (col in row.suppressed or row.cells[col] is None)
                else f"{row.cells[col]:.3f}"
                for col in _COLUMNS
            ]
            data.append([row.topic, row.estimator, *cells])
        widths = [max(len(r[i]) for r in data) for i in range(len(header))]
        for r in data:
            lines.append("  ".join(c.ljust(w) for c, w in zip(r, widths)))
        return "\n".join(lines)


def build_ranked_cases(
    cases: list[DialogueCase],
    dataset: Dataset,
    predictions: dict[tuple[str, str, str], float],
) -> list[RankedCase]:
    """One RankedCase per (dialogue, speaker); raises CoverageGap on missing triples."""
    missing = []
    out = []
    for case in cases:
        spot_ids = dataset.spot_file_for(case).spot_ids
        for speaker in ("A", "B"):
            items = []
            truth = case.scores_for(speaker)
            for sid in spot_ids:
                key = (case.dialogue_id, speaker, sid)
                if key not in predictions:
                    missing.append(key)
                    continue
                items.append(RankedItem(spot_id=sid, predicted=predictions[key], truth=truth[sid]))
            out.append(RankedCase(dialogue_id=case.dialogue_id, speaker=speaker, items=tuple(items)))
    if missing:
        raise CoverageGap(missing)
    return out


def _case_metrics(case: RankedCase, ks: Sequence[int], tie_policy: TiePolicy) -> dict[str, MetricValue]:
    out: dict[str, MetricValue] = {}
    for k in ks:
        out[f"n{k}"] = ndcg_at_k(case, k, tie_policy)
        out[f"r{k}"] = recall_at_k(case, k)
    out["coef"] = spearman(case)
    return out


def aggregate(
    prediction_sets: dict[str, dict[tuple[str, str, str], float]],
    cases: list[DialogueCase],
    dataset: Dataset,
    ks: Sequence[int] = DEFAULT_KS,
    tie_policy: TiePolicy = TiePolicy.STRICT,
    discrete_estimators: frozenset[str] | set[str] = frozenset(),
) -> ReportTable:
    """Per-topic mean of per-(dialogue, speaker) metrics, plus an ALL row.

    Estimators in ``discrete_estimators`` get their NDCG columns suppressed
    (rendered "-"): integer outputs tie constantly, so strict NDCG would only
    measure the tie-breaking accident.
    """
    columns = [f"n{k}" for k in ks] + [f"r{k}" for k in ks] + ["coef"]
    topics = ["ALL"] + sorted({c.topic.label for c in cases})
    rows: list[ReportRow] = []

    for estimator_name, preds in prediction_sets.items():
        ranked = build_ranked_cases(cases, dataset, preds)
        topic_of = {c.dialogue_id: c.topic.label for c in cases}
        per_case = [(topic_of[rc.dialogue_id], _case_metrics(rc, ks, tie_policy)) for rc in ranked]
        suppressed = (
            frozenset(f"n{k}" for k in ks)
            if estimator_name in discrete_estimators
            else frozenset()
        )
        for topic in topics:
            selected = [m for t, m in per_case if topic == "ALL" or t == topic]
            if not selected:
                continue
            cells: dict[str, Optional[float]] = {}
            defined_counts: dict[str, int] = {}
            undefined_counts: dict[str, int] = {}
            for col in columns:
                defined = [m[col].value for m in selected if m[col].defined]
                defined_counts[col] = len(defined)
                undefined_counts[col] = len(selected) - len(defined)
                cells[col] = sum(defined) / len(defined) if defined else None
            rows.append(
                ReportRow(
                    topic=topic,
                    estimator=estimator_name,
                    cells=cells,
                    defined_counts=defined_counts,
                    undefined_counts=undefined_counts,
                    suppressed=suppressed,
                )
            )
    return ReportTable(rows=rows)
