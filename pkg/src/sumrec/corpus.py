"""Dataset loading, validation, splitting, and statistics.

On-disk layout of a dataset root:
    dialogues.jsonl   one dialogue object per line
    spots.json        {spot_id: {name, description, category?, prefecture?}}
    spot_files.json   {file_id: [spot_id, ...]}
"""
from __future__ import annotations

import json
import random
import re
from collections import Counter
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Callable, Optional

from .errors import (
    DanglingSpotReference,
    EmptyDataset,
    MissingFile,
    SchemaViolation,
    ScoreOutOfRange,
)

MIN_UTTERANCES = 20  # each worker speaks at least 10 turns
MIN_SPOTS_PER_FILE = 10
MAX_SPOTS_PER_FILE = 20


class Topic(str, Enum):
    TRAVEL = "T"
    EXCEPT_FOR_TRAVEL = "E"
    NO_RESTRICTION = "N"

    @property
    def label(self) -> str:
        return {"T": "Travel", "E": "ExceptForTravel", "N": "NoRestriction"}[self.value]


class Split(str, Enum):
    TRAIN = "train"
    VALIDATION = "valid"
    TEST = "test"


@dataclass(frozen=True)
class Utterance:
    index: int  # 1-based position in the dialogue
    speaker: str  # "A" or "B", strictly alternating starting from A
    text: str


@dataclass(frozen=True)
class TouristSpot:
    spot_id: str
    name: str
    description: str
    category: Optional[str] = None
    prefecture: Optional[str] = None


@dataclass(frozen=True)
class SpotFile:
    file_id: str
    spot_ids: tuple[str, ...]


@dataclass(frozen=True)
class DialogueCase:
    dialogue_id: str
    topic: Topic
    utterances: tuple[Utterance, ...]
    spot_file_id: str
    scores_a: dict[str, int]
    scores_b: dict[str, int]
    human_predictions: dict[str, list[float]]

    def scores_for(self, speaker: str) -> dict[str, int]:
        return self.scores_a if speaker == "A" else self.scores_b

    def dialogue_text(self) -> str:
        return "\n".join(f"{u.speaker}: {u.text}" for u in self.utterances)


@dataclass(frozen=True)
class Dataset:
    dialogues: tuple[DialogueCase, ...]
    spots: dict[str, TouristSpot]
    spot_files: dict[str, SpotFile]

    def spot_file_for(self, case: DialogueCase) -> SpotFile:
        return self.spot_files[case.spot_file_id]

    def spots_for(self, case: DialogueCase) -> list[TouristSpot]:
        return [self.spots[sid] for sid in self.spot_file_for(case).spot_ids]


@dataclass(frozen=True)
class SplitAssignment:
    seed: int
    assignment: dict[str, Split]

    def ids_for(self, split: Split) -> list[str]:
        return sorted(d for d, s in self.assignment.items() if s is split)


@dataclass(frozen=True)
class StatRow:
    dialogues: int
    utterances: int
    words_per_utterance: Optional[float]
    spots_per_dialogue: Optional[float]


@dataclass(frozen=True)
class CorpusStats:
    # keyed by topic value ("T"/"E"/"N") plus "ALL"
    rows: dict[str, StatRow]


# --- tokenization ---

_CJK_RUN = re.compile("([\u3040-\u30ff\u3400-\u9fff\uf900-\ufaff\uff66-\uff9f]+)")


def default_tokenizer(text: str) -> list[str]:
    """Whitespace tokenizer; each maximal run of CJK codepoints is one token."""
    tokens: list[str] = []
    for chunk in text.split():
        for part in _CJK_RUN.split(chunk):
            if part:
                tokens.append(part)
    return tokens


# --- loading ---

def _require(cond: bool, exc: Exception) -> None:
    if not cond:
        raise exc


def _load_json(path: Path):
    if not path.is_file():
        raise MissingFile(str(path))
    with open(path, encoding="utf-8") as f:
        return json.load(f)


def load_dataset(path: str | Path) -> Dataset:
    """Load and validate a dataset root, resolving all cross-references."""
    root = Path(path)
    spots_raw = _load_json(root / "spots.json")
    spot_files_raw = _load_json(root / "spot_files.json")

    spots: dict[str, TouristSpot] = {}
    for spot_id, rec in spots_raw.items():
        if not isinstance(rec, dict) or not rec.get("name"):
            raise SchemaViolation(f"spot {spot_id}", "name", "missing or empty")
        if not rec.get("description"):
            raise SchemaViolation(f"spot {spot_id}", "description", "missing or empty")
        spots[spot_id] = TouristSpot(
            spot_id=spot_id,
            name=rec["name"],
            description=rec["description"],
            category=rec.get("category"),
            prefecture=rec.get("prefecture"),
        )

    spot_files: dict[str, SpotFile] = {}
    for file_id, ids in spot_files_raw.items():
        if not isinstance(ids, list):
            raise SchemaViolation(f"spot_file {file_id}", "spots", "must be a list")
        for sid in ids:
            if sid not in spots:
                raise DanglingSpotReference(f"spot_file {file_id} references unknown spot {sid}")
        if not (MIN_SPOTS_PER_FILE <= len(ids) <= MAX_SPOTS_PER_FILE):
            raise SchemaViolation(
                f"spot_file {file_id}", "spots",
                f"has {len(ids)} spots, expected {MIN_SPOTS_PER_FILE}..{MAX_SPOTS_PER_FILE}",
            )
        spot_files[file_id] = SpotFile(file_id=file_id, spot_ids=tuple(ids))

    dialogues_path = root / "dialogues.jsonl"
    if not dialogues_path.is_file():
        raise MissingFile(str(dialogues_path))

    dialogues: list[DialogueCase] = []
    with open(dialogues_path, encoding="utf-8") as f:
        for line_no, line in enumerate(f, 1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as e:
                raise SchemaViolation(f"dialogues.jsonl:{line_no}", "json", str(e))
            dialogues.append(_parse_dialogue(rec, spots, spot_files, f"dialogues.jsonl:{line_no}"))

    dialogues.sort(key=lambda d: d.dialogue_id)
    seen: set[str] = set()
    for d in dialogues:
        if d.dialogue_id in seen:
            raise SchemaViolation(f"dialogue {d.dialogue_id}", "dialogue_id", "duplicate")
        seen.add(d.dialogue_id)
    return Dataset(dialogues=tuple(dialogues), spots=spots, spot_files=spot_files)


def _parse_dialogue(rec: dict, spots, spot_files, where: str) -> DialogueCase:
    did = rec.get("dialogue_id")
    if not did:
        raise SchemaViolation(where, "dialogue_id", "missing")
    try:
        topic = Topic(rec.get("topic"))
    except ValueError:
        raise SchemaViolation(f"dialogue {did}", "topic", f"unknown value {rec.get('topic')!r}")

    utts_raw = rec.get("utterances")
    if not isinstance(utts_raw, list) or len(utts_raw) < MIN_UTTERANCES:
        raise SchemaViolation(
            f"dialogue {did}", "utterances",
            f"needs at least {MIN_UTTERANCES} utterances",
        )
    utterances = []
    for i, u in enumerate(utts_raw, 1):
        speaker = u.get("speaker")
        expected = "A" if i % 2 == 1 else "B"
        if speaker != expected:
            raise SchemaViolation(
                f"dialogue {did}", "utterances",
                f"utterance {i}: speaker {speaker!r}, expected {expected!r} (strict alternation)",
            )
        text = u.get("text")
        if not text:
            raise SchemaViolation(f"dialogue {did}", "utterances", f"utterance {i}: empty text")
        utterances.append(Utterance(index=i, speaker=speaker, text=text))

    file_id = rec.get("spot_file_id")
    if file_id not in spot_files:
        raise DanglingSpotReference(f"dialogue {did} references unknown spot_file {file_id!r}")
    expected_ids = set(spot_files[file_id].spot_ids)

    def parse_scores(key: str) -> dict[str, int]:
        raw = rec.get(key)
        if not isinstance(raw, dict):
            raise SchemaViolation(f"dialogue {did}", key, "missing or not a map")
        if set(raw) != expected_ids:
            raise SchemaViolation(
                f"dialogue {did}", key,
                "must cover exactly the spot ids of the assigned spot file",
            )
        out = {}
        for sid, v in raw.items():
            if not isinstance(v, int) or not 1 <= v <= 5:
                raise ScoreOutOfRange(f"dialogue {did}: {key}[{sid}] = {v!r}, expected 1..5")
            out[sid] = v
        return out

    scores_a = parse_scores("scores_a")
    scores_b = parse_scores("scores_b")

    human_raw = rec.get("human_predictions", {})
    human: dict[str, list[float]] = {}
    for sid, vals in human_raw.items():
        if sid not in expected_ids:
            raise DanglingSpotReference(f"dialogue {did}: human_predictions for unknown spot {sid}")
        human[sid] = [float(v) for v in vals]

    return DialogueCase(
        dialogue_id=did,
        topic=topic,
        utterances=tuple(utterances),
        spot_file_id=file_id,
        scores_a=scores_a,
        scores_b=scores_b,
        human_predictions=human,
    )


def save_dataset(dataset: Dataset, path: str | Path) -> None:
    """Write a dataset back out in the on-disk layout (round-trips with load_dataset)."""
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    spots = {
        sid: {
            k: v
            for k, v in {
                "name": s.name,
                "description": s.description,
                "category": s.category,
                "prefecture": s.prefecture,
            }.items()
            if v is not None
        }
        for sid, s in sorted(dataset.spots.items())
    }
    (root / "spots.json").write_text(
        json.dumps(spots, ensure_ascii=False, indent=2), encoding="utf-8"
    )
    files = {fid: list(sf.spot_ids) for fid, sf in sorted(dataset.spot_files.items())}
    (root / "spot_files.json").write_text(
        json.dumps(files, ensure_ascii=False, indent=2), encoding="utf-8"
    )
    with open(root / "dialogues.jsonl", "w", encoding="utf-8") as f:
        for d in dataset.dialogues:
            rec = {
                "dialogue_id": d.dialogue_id,
                "topic": d.topic.value,
                "utterances": [{"speaker": u.speaker, "text": u.text} for u in d.utterances],
                "spot_file_id": d.spot_file_id,
                "scores_a": d.scores_a,
                "scores_b": d.scores_b,
                "human_predictions": d.human_predictions,
            }
            f.write(json.dumps(rec, ensure_ascii=False) + "\n")


# --- splitting ---

def _dialogue_category_counts(dataset: Dataset, case: DialogueCase) -> Counter:
    """Category histogram of a dialogue's spot file; falls back to prefecture, then 'unknown'."""
    counts: Counter = Counter()
    for spot in dataset.spots_for(case):
        counts[spot.category or spot.prefecture or "unknown"] += 1
    return counts


def _split_capacities(n: int, ratios: tuple[int, int, int]) -> dict[Split, int]:
    total = sum(ratios)
    order = [Split.TRAIN, Split.VALIDATION, Split.TEST]
    base = [n * r // total for r in ratios]
    remainders = [(n * r % total, i) for i, r in enumerate(ratios)]
    leftover = n - sum(base)
    for _, i in sorted(remainders, key=lambda t: (-t[0], t[1]))[:leftover]:
        base[i] += 1
    return dict(zip(order, base))


def split_dataset(
    dataset: Dataset, ratios: tuple[int, int, int] = (8, 1, 1), seed: int = 0
) -> SplitAssignment:
    """Greedy category-balanced 8:1:1 split, deterministic for a fixed seed.

    Dialogues are visited in seeded random order; each goes to the open split
    whose resulting category histogram is closest (L1) to the global one.
    """
    if not dataset.dialogues:
        raise EmptyDataset("cannot split an empty dataset")

    rng = random.Random(seed)
    order = list(dataset.dialogues)
    rng.shuffle(order)

    per_dialogue = {d.dialogue_id: _dialogue_category_counts(dataset, d) for d in order}
    global_counts: Counter = Counter()
    for c in per_dialogue.values():
        global_counts.update(c)
    global_total = sum(global_counts.values())
    global_dist = {k: v / global_total for k, v in global_counts.items()}

    capacities = _split_capacities(len(order), ratios)
    split_counts = {s: Counter() for s in capacities}
    split_sizes = {s: 0 for s in capacities}
    assignment: dict[str, Split] = {}

    for d in order:
        cand = [s for s in (Split.TRAIN, Split.VALIDATION, Split.TEST)
                if split_sizes[s] < capacities[s]]
        best = None
        best_dist = None
        for s in cand:
            merged = split_counts[s] + per_dialogue[d.dialogue_id]
            total = sum(merged.values())
            l1 = sum(abs(merged.get(k, 0) / total - p) for k, p in global_dist.items())
            l1 += sum(v / total for k, v in merged.items() if k not in global_dist)
            if best_dist is None or l1 < best_dist:
                best, best_dist = s, l1
        assignment[d.dialogue_id] = best
        split_counts[best].update(per_dialogue[d.dialogue_id])
        split_sizes[best] += 1

    return SplitAssignment(seed=seed, assignment=assignment)


def save_split(split: SplitAssignment, path: str | Path) -> None:
    payload = {
        "seed": split.seed,
        "assignment": {d: s.value for d, s in sorted(split.assignment.items())},
    }
    Path(path).write_text(json.dumps(payload, indent=2), encoding="utf-8")


def load_split(path: str | Path) -> SplitAssignment:
    raw = _load_json(Path(path))
    return SplitAssignment(
        seed=raw["seed"],
        assignment={d: Split(s) for d, s in raw["assignment"].items()},
    )


# --- statistics ---

def compute_statistics(
    dataset: Dataset, tokenizer: Callable[[str], list[str]] = default_tokenizer
) -> CorpusStats:
    rows: dict[str, StatRow] = {}
    groups: dict[str, list[DialogueCase]] = {t.value: [] for t in Topic}
    for d in dataset.dialogues:
        groups[d.topic.value].append(d)
    groups["ALL"] = list(dataset.dialogues)

    for key, cases in groups.items():
        n_dialogues = len(cases)
        n_utts = sum(len(d.utterances) for d in cases)
        n_tokens = sum(len(tokenizer(u.text)) for d in cases for u in d.utterances)
        wpu = n_tokens / n_utts if n_utts else None
        spd = (
            sum(len(dataset.spot_file_for(d).spot_ids) for d in cases) / n_dialogues
            if n_dialogues
            else None
        )
        rows[key] = StatRow(
            dialogues=n_dialogues,
            utterances=n_utts,
            words_per_utterance=wpu,
            spots_per_dialogue=spd,
        )
    return CorpusStats(rows=rows)


# --- ablation support ---

def truncate_dialogue(dialogue: DialogueCase, turns: int) -> DialogueCase:
    """Keep the first `turns` turns (2 utterances per turn); scores unchanged."""
    if turns < 1:
        raise ValueError("turns must be >= 1")
    keep = 2 * turns
    if keep >= len(dialogue.utterances):
        return dialogue
    return replace(dialogue, utterances=dialogue.utterances[:keep])
