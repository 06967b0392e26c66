"""Prompt construction for the four generation/scoring tasks.

Templates are plain-text data files with three sections delimited by
``[[task]]`` / ``[[exemplar]]`` / ``[[target]]`` lines; section bodies use
``{placeholder}`` syntax. Rendering numbers blocks ``--1--``, ``--2--``, ...
with the target as the final block.
"""
from __future__ import annotations

import json
import math
import random
from dataclasses import dataclass, field
from enum import Enum
from importlib import resources
from pathlib import Path
from typing import Optional

from .corpus import Dataset, DialogueCase, TouristSpot
from .errors import (
    InsufficientExemplars,
    PromptError,
    TemplateMismatch,
    WrongExemplarCount,
)

# budget measured in estimated tokens (~4 chars per token)
DEFAULT_CONTEXT_BUDGET = 14000


class PromptKind(str, Enum):
    SUMMARY = "summary"
    RECOMMENDATION_INFO = "recommendation"
    SUMREC_SCORE = "sumrec_score"
    BASELINE_SCORE = "baseline_score"


_PLACEHOLDERS = {
    PromptKind.SUMMARY: {
        "exemplar": {"dialogue", "summary"},
        "target": {"dialogue"},
    },
    PromptKind.RECOMMENDATION_INFO: {
        "exemplar": {"spot_name", "description", "rec_info"},
        "target": {"spot_name", "description"},
    },
    PromptKind.SUMREC_SCORE: {
        "exemplar": {"summary", "description", "rec_info", "score"},
        "target": {"summary", "description", "rec_info"},
    },
    PromptKind.BASELINE_SCORE: {
        "exemplar": {"dialogue", "description", "speaker", "score"},
        "target": {"dialogue", "description", "speaker"},
    },
}

EXEMPLAR_COUNTS = {
    PromptKind.SUMMARY: 1,
    PromptKind.RECOMMENDATION_INFO: 5,
    PromptKind.SUMREC_SCORE: 5,
    PromptKind.BASELINE_SCORE: 5,
}

_SCORE_KINDS = {PromptKind.SUMREC_SCORE, PromptKind.BASELINE_SCORE}


@dataclass(frozen=True)
class Message:
    role: str  # "system" or "user"
    content: str


@dataclass(frozen=True)
class PromptMessages:
    messages: tuple[Message, ...]

    @property
    def text(self) -> str:
        return "\n".join(m.content for m in self.messages)


@dataclass(frozen=True)
class Exemplar:
    kind: PromptKind
    payload: dict

    def __post_init__(self):
        if self.kind in _SCORE_KINDS:
            score = self.payload.get("score")
            if not isinstance(score, int) or not 1 <= score <= 5:
                raise PromptError(f"exemplar gold score must be an integer 1..5, got {score!r}")


@dataclass(frozen=True)
class PromptTemplate:
    kind: PromptKind
    task_header: str
    exemplar_block_format: str
    target_block_format: str

    def __post_init__(self):
        for section, fmt in (
            ("exemplar", self.exemplar_block_format),
            ("target", self.target_block_format),
        ):
            allowed = _PLACEHOLDERS[self.kind][section]
            used = _format_fields(fmt)
            unknown = used - allowed
            if unknown:
                raise TemplateMismatch(
                    f"{self.kind.value} {section} block uses unknown placeholders {sorted(unknown)}"
                )


def _format_fields(fmt: str) -> set[str]:
    import string

    return {f for _, f, _, _ in string.Formatter().parse(fmt) if f}


def _read_template_text(kind: PromptKind, template_dir: Optional[Path]) -> str:
    if template_dir is not None:
        return (Path(template_dir) / f"{kind.value}.txt").read_text(encoding="utf-8")
    return (resources.files("sumrec") / "templates" / f"{kind.value}.txt").read_text(
        encoding="utf-8"
    )


def load_template(kind: PromptKind, template_dir: Optional[Path] = None) -> PromptTemplate:
    text = _read_template_text(kind, template_dir)
    sections: dict[str, list[str]] = {}
    current: Optional[str] = None
    for line in text.splitlines():
        if line.strip() in ("[[task]]", "[[exemplar]]", "[[target]]"):
            current = line.strip()[2:-2]
            sections[current] = []
        elif current is not None:
            sections[current].append(line)
    missing = {"task", "exemplar", "target"} - set(sections)
    if missing:
        raise TemplateMismatch(f"{kind.value} template missing sections {sorted(missing)}")
    return PromptTemplate(
        kind=kind,
        task_header="\n".join(sections["task"]).strip("\n"),
        exemplar_block_format="\n".join(sections["exemplar"]).strip("\n"),
        target_block_format="\n".join(sections["target"]).strip("\n"),
    )


def load_default_exemplars(kind: PromptKind) -> list[Exemplar]:
    """Author-prepared exemplars bundled with the package (summary and rec-info kinds)."""
    raw = json.loads(
        (resources.files("sumrec") / "templates" / "default_exemplars.json").read_text("utf-8")
    )
    key = {PromptKind.SUMMARY: "summary", PromptKind.RECOMMENDATION_INFO: "recommendation"}.get(kind)
    if key is None:
        raise PromptError(f"no bundled exemplars for kind {kind.value}")
    return [Exemplar(kind=kind, payload=p) for p in raw[key]]


# --- rendering ---

def _render_block(fmt: str, values: dict) -> str:
    """Format a block; paragraphs whose placeholder value is None are dropped."""
    paragraphs = fmt.split("\n\n")
    out = []
    for para in paragraphs:
        fields = _format_fields(para)
        if any(values.get(f) is None for f in fields):
            continue
        out.append(para.format(**{f: values[f] for f in fields}))
    return "\n\n".join(out)


def _assemble(task_header: str, blocks: list[str]) -> PromptMessages:
    parts = [task_header]
    for i, block in enumerate(blocks, 1):
        parts.append(f"--{i}--\n{block}")
    return PromptMessages(messages=(Message(role="user", content="\n\n".join(parts)),))


def _estimate_tokens(text: str) -> int:
    return math.ceil(len(text) / 4)


def _check_exemplars(kind: PromptKind, exemplars: list[Exemplar]) -> None:
    if not exemplars:
        raise TemplateMismatch(f"{kind.value} prompt requires exemplars, got none")
    want = EXEMPLAR_COUNTS[kind]
    if len(exemplars) != want:
        raise WrongExemplarCount(f"{kind.value} prompt requires {want} exemplars, got {len(exemplars)}")
    for ex in exemplars:
        if ex.kind is not kind:
            raise TemplateMismatch(f"exemplar of kind {ex.kind.value} passed to {kind.value} prompt")


def _trim_exemplar_dialogues(blocks: list[str], target: str, task: str, budget: int) -> list[str]:
    """Drop oldest exemplar-dialogue lines until the prompt fits the budget."""
    def total(bs):
        return _estimate_tokens("\n\n".join([task] + bs + [target]))

    blocks = list(blocks)
    while total(blocks) > budget:
        trimmed = False
        for i, block in enumerate(blocks):
            lines = block.splitlines()
            for j, line in enumerate(lines):
                if line.startswith(("A: ", "B: ")) and len(line) > 3:
                    del lines[j]
                    blocks[i] = "\n".join(lines)
                    trimmed = True
                    break
            if trimmed:
                break
        if not trimmed:
            raise PromptError("prompt exceeds context budget and nothing left to trim")
    return blocks


def build_summary_prompt(
    dialogue: DialogueCase,
    exemplar: Exemplar | list[Exemplar],
    template_dir: Optional[Path] = None,
    context_budget: int = DEFAULT_CONTEXT_BUDGET,
) -> PromptMessages:
    exemplars = exemplar if isinstance(exemplar, list) else [exemplar]
    _check_exemplars(PromptKind.SUMMARY, exemplars)
    tpl = load_template(PromptKind.SUMMARY, template_dir)
    blocks = [_render_block(tpl.exemplar_block_format, ex.payload) for ex in exemplars]
    target = _render_block(tpl.target_block_format, {"dialogue": dialogue.dialogue_text()})
    blocks = _trim_exemplar_dialogues(blocks, target, tpl.task_header, context_budget)
    return _assemble(tpl.task_header, blocks + [target])


def build_recommendation_prompt(
    spot: TouristSpot,
    exemplars: list[Exemplar],
    template_dir: Optional[Path] = None,
) -> PromptMessages:
    _check_exemplars(PromptKind.RECOMMENDATION_INFO, exemplars)
    tpl = load_template(PromptKind.RECOMMENDATION_INFO, template_dir)
    blocks = [_render_block(tpl.exemplar_block_format, ex.payload) for ex in exemplars]
    target = _render_block(
        tpl.target_block_format, {"spot_name": spot.name, "description": spot.description}
    )
    return _assemble(tpl.task_header, blocks + [target])


def build_sumrec_score_prompt(
    summary_text: str,
    spot_description: str,
    rec_info_text: Optional[str],
    exemplars: list[Exemplar],
    template_dir: Optional[Path] = None,
) -> PromptMessages:
    """Score prompt for the summary-based estimator.

    rec_info_text=None omits the recommended-person paragraph (and the matching
    exemplar paragraphs), which is the no-recommendation-info ablation.
    """
    _check_exemplars(PromptKind.SUMREC_SCORE, exemplars)
    tpl = load_template(PromptKind.SUMREC_SCORE, template_dir)
    blocks = []
    for ex in exemplars:
        payload = dict(ex.payload)
        if rec_info_text is None:
            payload["rec_info"] = None
        blocks.append(_render_block(tpl.exemplar_block_format, payload))
    target = _render_block(
        tpl.target_block_format,
        {"summary": summary_text, "description": spot_description, "rec_info": rec_info_text},
    )
    return _assemble(tpl.task_header, blocks + [target])


def build_baseline_score_prompt(
    dialogue: DialogueCase,
    spot_description: str,
    target_speaker: str,
    exemplars: list[Exemplar],
    template_dir: Optional[Path] = None,
    context_budget: int = DEFAULT_CONTEXT_BUDGET,
) -> PromptMessages:
    if target_speaker not in ("A", "B"):
        raise PromptError(f"target_speaker must be 'A' or 'B', got {target_speaker!r}")
    _check_exemplars(PromptKind.BASELINE_SCORE, exemplars)
    tpl = load_template(PromptKind.BASELINE_SCORE, template_dir)
    blocks = [_render_block(tpl.exemplar_block_format, ex.payload) for ex in exemplars]
    target = _render_block(
        tpl.target_block_format,
        {
            "dialogue": dialogue.dialogue_text(),
            "description": spot_description,
            "speaker": target_speaker,
        },
    )
    blocks = _trim_exemplar_dialogues(blocks, target, tpl.task_header, context_budget)
    return _assemble(tpl.task_header, blocks + [target])


# --- exemplar selection ---

def select_exemplars(
    train_split: list[DialogueCase],
    kind: PromptKind,
    topic,
    n: int,
    seed: int,
    dataset: Optional[Dataset] = None,
    artifacts=None,
) -> list[Exemplar]:
    """Seeded sampling without replacement of exemplars from the train split, per topic.

    Score-kind exemplars pull gold labels from ground-truth speaker scores;
    summary/rec-info text comes from the artifact store when one is supplied.
    """
    candidates = [d for d in train_split if topic is None or d.topic == topic]
    candidates.sort(key=lambda d: d.dialogue_id)
    if len(candidates) < n:
        raise InsufficientExemplars(
            f"need {n} exemplars for {kind.value}/{topic}, have {len(candidates)} candidates"
        )
    rng = random.Random(seed)
    chosen = rng.sample(candidates, n)

    if kind is PromptKind.SUMMARY:
        if artifacts is None:
            raise InsufficientExemplars("summary exemplars need an artifact store with gold summaries")
        out = []
        for d in chosen:
            a = artifacts.get_summary(d.dialogue_id, "A")
            b = artifacts.get_summary(d.dialogue_id, "B")
            if a is None or b is None:
                raise InsufficientExemplars(f"no stored summaries for dialogue {d.dialogue_id}")
            out.append(Exemplar(kind=kind, payload={
                "dialogue": d.dialogue_text(),
                "summary": f"A:\n{a.text}\nB:\n{b.text}",
            }))
        return out

    if dataset is None:
        raise InsufficientExemplars(f"{kind.value} exemplar selection needs the dataset for spot lookup")

    out = []
    for d in chosen:
        spots = dataset.spots_for(d)
        spot = rng.choice(spots)
        speaker = rng.choice(["A", "B"])
        score = d.scores_for(speaker)[spot.spot_id]
        if kind is PromptKind.BASELINE_SCORE:
            out.append(Exemplar(kind=kind, payload={
                "dialogue": d.dialogue_text(),
                "description": spot.description,
                "speaker": speaker,
                "score": score,
            }))
        elif kind is PromptKind.SUMREC_SCORE:
            if artifacts is None:
                raise InsufficientExemplars("sumrec score exemplars need an artifact store")
            summ = artifacts.get_summary(d.dialogue_id, speaker)
            rec = artifacts.get_rec_info(spot.spot_id)
            if summ is None or rec is None:
                raise InsufficientExemplars(
                    f"missing artifacts for dialogue {d.dialogue_id} / spot {spot.spot_id}"
                )
            out.append(Exemplar(kind=kind, payload={
                "summary": summ.text,
                "description": spot.description,
                "rec_info": rec.text,
                "score": score,
            }))
        elif kind is PromptKind.RECOMMENDATION_INFO:
            if artifacts is None:
                raise InsufficientExemplars("rec-info exemplars need an artifact store")
            rec = artifacts.get_rec_info(spot.spot_id)
            if rec is None:
                raise InsufficientExemplars(f"no stored rec-info for spot {spot.spot_id}")
            out.append(Exemplar(kind=kind, payload={
                "spot_name": spot.name,
                "description": spot.description,
                "rec_info": rec.text,
            }))
        else:
            raise PromptError(f"unsupported kind {kind}")
    return out
