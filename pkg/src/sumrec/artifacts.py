"""Append-only JSONL artifact stores for summaries, rec-info, and predictions."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Iterator, Optional


@dataclass(frozen=True)
class SpeakerSummary:
    dialogue_id: str
    speaker: str  # "A" or "B"
    text: str
    source_turns: int  # 0 = full dialogue, otherwise the truncation turn count


@dataclass(frozen=True)
class RecommendationInfo:
    spot_id: str
    text: str


class ArtifactStore:
    """Keyed stores backed by ``summaries.jsonl`` and ``recinfo.jsonl`` in a run dir."""

    def __init__(self, root: str | Path):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        self._summaries: dict[tuple[str, str, int], SpeakerSummary] = {}
        self._rec_info: dict[str, RecommendationInfo] = {}
        self._load()

    @property
    def summaries_path(self) -> Path:
        return self.root / "summaries.jsonl"

    @property
    def rec_info_path(self) -> Path:
        return self.root / "recinfo.jsonl"

    def _load(self) -> None:
        if self.summaries_path.is_file():
            with open(self.summaries_path, encoding="utf-8") as f:
                for line in f:
                    if line.strip():
                        s = SpeakerSummary(**json.loads(line))
                        self._summaries[(s.dialogue_id, s.speaker, s.source_turns)] = s
        if self.rec_info_path.is_file():
            with open(self.rec_info_path, encoding="utf-8") as f:
                for line in f:
                    if line.strip():
                        r = RecommendationInfo(**json.loads(line))
                        self._rec_info[r.spot_id] = r

    def put_summary(self, summary: SpeakerSummary) -> None:
        key = (summary.dialogue_id, summary.speaker, summary.source_turns)
        if key in self._summaries:
            return
        self._summaries[key] = summary
        with open(self.summaries_path, "a", encoding="utf-8") as f:
            f.write(json.dumps(asdict(summary), ensure_ascii=False) + "\n")

    def get_summary(
        self, dialogue_id: str, speaker: str, source_turns: int = 0
    ) -> Optional[SpeakerSummary]:
        return self._summaries.get((dialogue_id, speaker, source_turns))

    def put_rec_info(self, info: RecommendationInfo) -> None:
        if info.spot_id in self._rec_info:
            return
        self._rec_info[info.spot_id] = info
        with open(self.rec_info_path, "a", encoding="utf-8") as f:
            f.write(json.dumps(asdict(info), ensure_ascii=False) + "\n")

    def get_rec_info(self, spot_id: str) -> Optional[RecommendationInfo]:
        return self._rec_info.get(spot_id)

    def iter_summaries(self) -> Iterator[SpeakerSummary]:
        return iter(self._summaries.values())

    def iter_rec_info(self) -> Iterator[RecommendationInfo]:
        return iter(self._rec_info.values())
