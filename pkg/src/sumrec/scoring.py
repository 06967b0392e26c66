"""Score estimation: LLM prompts, random/human baselines, remote bi-encoder.

Every estimator produces one ScorePrediction per (dialogue, speaker, spot)
triple; batch runs are resumable because predictions are persisted under
idempotent keys as they complete.
"""
from __future__ import annotations

import hashlib
import json
import random
import re
from dataclasses import asdict, dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Optional

import requests

from .artifacts import ArtifactStore, RecommendationInfo, SpeakerSummary
from .corpus import Dataset, DialogueCase, Topic, TouristSpot, truncate_dialogue
from .errors import (
    GatewayError,
    MissingArtifact,
    RemoteScorerUnavailable,
    SummarySplitError,
    UnparseableScore,
)
from .gateway import CompletionRequest, Gateway
from .prompts import (
    Exemplar,
    PromptKind,
    PromptMessages,
    Message,
    build_baseline_score_prompt,
    build_recommendation_prompt,
    build_summary_prompt,
    build_sumrec_score_prompt,
)

FIVE_TURN_COUNT = 5


class EstimatorKind(str, Enum):
    SUMREC_LLM = "sumrec_llm"
    BASELINE_LLM = "baseline_llm"
    RANDOM = "random"
    HUMAN = "human"
    REMOTE_BIENCODER = "remote_biencoder"


class Ablation(str, Enum):
    NONE = "none"
    WITHOUT_SUMMARY = "without_summary"
    WITHOUT_REC_INFO = "without_rec_info"
    FIVE_TURNS = "five_turns"


_SUMREC_FAMILY = {EstimatorKind.SUMREC_LLM, EstimatorKind.REMOTE_BIENCODER}

# LLM estimators emit integer scores; ties make strict NDCG undefined
DISCRETE_OUTPUT_KINDS = {EstimatorKind.SUMREC_LLM, EstimatorKind.BASELINE_LLM}


@dataclass(frozen=True)
class EstimatorConfig:
    kind: EstimatorKind
    ablation: Ablation = Ablation.NONE
    seed: int = 0
    exemplar_seed: int = 0
    scorer_url: Optional[str] = None  # remote bi-encoder endpoint

    def __post_init__(self):
        if self.ablation is not Ablation.NONE and self.kind not in _SUMREC_FAMILY:
            raise ValueError(
                f"ablation {self.ablation.value} is only valid for SumRec-family estimators"
            )

    @property
    def name(self) -> str:
        base = {
            EstimatorKind.SUMREC_LLM: "SumRec (LLM)",
            EstimatorKind.BASELINE_LLM: "LLM baseline",
            EstimatorKind.RANDOM: "Random",
            EstimatorKind.HUMAN: "Human",
            EstimatorKind.REMOTE_BIENCODER: "SumRec (bi-encoder)",
        }[self.kind]
        suffix = {
            Ablation.NONE: "",
            Ablation.WITHOUT_SUMMARY: " w/o Sum.",
            Ablation.WITHOUT_REC_INFO: " w/o Rec.",
            Ablation.FIVE_TURNS: " 5 turns",
        }[self.ablation]
        return base + suffix

    @property
    def discrete_output(self) -> bool:
        return self.kind in DISCRETE_OUTPUT_KINDS

    def digest(self) -> str:
        canonical = json.dumps(
            {
                "kind": self.kind.value,
                "ablation": self.ablation.value,
                "seed": self.seed,
                "exemplar_seed": self.exemplar_seed,
            },
            sort_keys=True,
        )
        return hashlib.sha256(canonical.encode()).hexdigest()[:16]


@dataclass(frozen=True)
class ScorePrediction:
    dialogue_id: str
    speaker: str
    spot_id: str
    value: float


@dataclass
class PredictionSet:
    estimator: EstimatorConfig
    predictions: list[ScorePrediction]
    failures: list[dict] = field(default_factory=list)

    def by_key(self) -> dict[tuple[str, str, str], float]:
        return {(p.dialogue_id, p.speaker, p.spot_id): p.value for p in self.predictions}


# --- score parsing ---

# first standalone digit 1-5, not part of a larger number or decimal
_SCORE_RE = re.compile(r"(?<![\d.])([1-5])(?!\.?\d)")


def parse_score(text: str) -> int:
    m = _SCORE_RE.search(text)
    if not m:
        raise UnparseableScore(f"no standalone score 1-5 in {text!r}")
    return int(m.group(1))


# --- generation stages ---

_B_MARKER = re.compile(r"^B\s*[:：]\s*$|^B\s*[:：]", re.MULTILINE)
_A_MARKER = re.compile(r"^A\s*[:：]", re.MULTILINE)


def split_summary_completion(text: str) -> tuple[str, str]:
    """Split a two-speaker summary completion at the last line starting 'B:'."""
    b_matches = list(_B_MARKER.finditer(text))
    if not b_matches:
        raise SummarySplitError(f"completion lacks a 'B:' marker: {text[:80]!r}")
    b_start = b_matches[-1].start()
    a_part = text[:b_start]
    b_part = text[b_matches[-1].end():]
    a_match = _A_MARKER.search(a_part)
    if not a_match:
        raise SummarySplitError(f"completion lacks an 'A:' marker: {text[:80]!r}")
    a_text = a_part[a_match.end():].strip()
    b_text = b_part.strip()
    if not a_text or not b_text:
        raise SummarySplitError("empty speaker section after splitting completion")
    return a_text, b_text


@dataclass
class GenerationConfig:
    model_id: str = "gpt-3.5-turbo-16k-0613"
    temperature: float = 0.0
    max_output_units: int = 512
    template_dir: Optional[Path] = None
    source_turns: int = 0  # 0 = full dialogue; 5 for the five-turn ablation


def generate_summaries(
    cases: list[DialogueCase],
    gateway: Gateway,
    config: GenerationConfig,
    store: ArtifactStore,
    exemplar: Exemplar,
) -> list[SpeakerSummary]:
    out = []
    for case in cases:
        existing_a = store.get_summary(case.dialogue_id, "A", config.source_turns)
        existing_b = store.get_summary(case.dialogue_id, "B", config.source_turns)
        if existing_a and existing_b:
            out.extend([existing_a, existing_b])
            continue
        dialogue = (
            truncate_dialogue(case, config.source_turns) if config.source_turns else case
        )
        prompt = build_summary_prompt(dialogue, exemplar, template_dir=config.template_dir)
        try:
            result = gateway.complete(_request(prompt, config))
        except GatewayError as e:
            raise type(e)(f"dialogue {case.dialogue_id}: {e}") from e
        a_text, b_text = split_summary_completion(result.text)
        for speaker, text in (("A", a_text), ("B", b_text)):
            summary = SpeakerSummary(
                dialogue_id=case.dialogue_id,
                speaker=speaker,
                text=text,
                source_turns=config.source_turns,
            )
            store.put_summary(summary)
            out.append(summary)
    return out


def generate_recommendation_info(
    spots: list[TouristSpot],
    gateway: Gateway,
    config: GenerationConfig,
    store: ArtifactStore,
    exemplars: list[Exemplar],
) -> list[RecommendationInfo]:
    out = []
    for spot in spots:
        existing = store.get_rec_info(spot.spot_id)
        if existing:
            out.append(existing)
            continue
        prompt = build_recommendation_prompt(spot, exemplars, template_dir=config.template_dir)
        try:
            result = gateway.complete(_request(prompt, config))
        except GatewayError as e:
            raise type(e)(f"spot {spot.spot_id}: {e}") from e
        info = RecommendationInfo(spot_id=spot.spot_id, text=result.text.strip())
        store.put_rec_info(info)
        out.append(info)
    return out


def _request(prompt: PromptMessages, config: GenerationConfig) -> CompletionRequest:
    return CompletionRequest(
        messages=prompt,
        model_id=config.model_id,
        temperature=config.temperature,
        max_output_units=config.max_output_units,
    )


# --- estimation ---

def _stable_uniform(seed: int, *parts: str) -> float:
    key = "|".join((str(seed),) + parts)
    digest = hashlib.sha256(key.encode("utf-8")).digest()
    rng = random.Random(int.from_bytes(digest[:8], "big"))
    return rng.uniform(1.0, 5.0)


def _complete_score(gateway: Gateway, prompt: PromptMessages, config: GenerationConfig) -> int:
    result = gateway.complete(_request(prompt, config))
    try:
        return parse_score(result.text)
    except UnparseableScore:
        # one clarifying re-prompt, then give up (no silent default)
        retry = PromptMessages(
            messages=prompt.messages
            + (Message(role="user", content="Answer with a single digit 1-5."),)
        )
        result = gateway.complete(_request(retry, config))
        return parse_score(result.text)


class RemoteScorerClient:
    """Client for the neural scorer service's /predict endpoint."""

    def __init__(self, base_url: str, variant: str = "biencoder_sumrec", timeout: float = 120.0):
        self.base_url = base_url.rstrip("/")
        self.variant = variant
        self.timeout = timeout

    def predict(self, pairs: list[dict]) -> list[float]:
        try:
            resp = requests.post(
                f"{self.base_url}/predict",
                json={"variant": self.variant, "pairs": pairs},
                timeout=self.timeout,
            )
        except requests.RequestException as e:
            raise RemoteScorerUnavailable(str(e))
        if resp.status_code != 200:
            raise RemoteScorerUnavailable(f"scorer returned {resp.status_code}: {resp.text[:200]}")
        return [float(s) for s in resp.json()["scores"]]


def estimate(
    case: DialogueCase,
    speaker: str,
    spot: TouristSpot,
    estimator: EstimatorConfig,
    artifacts: Optional[ArtifactStore] = None,
    gateway: Optional[Gateway] = None,
    exemplars: Optional[list[Exemplar]] = None,
    config: Optional[GenerationConfig] = None,
    remote: Optional[RemoteScorerClient] = None,
) -> ScorePrediction:
    config = config or GenerationConfig()
    kind = estimator.kind

    if kind is EstimatorKind.RANDOM:
        value = _stable_uniform(estimator.seed, case.dialogue_id, speaker, spot.spot_id)

    elif kind is EstimatorKind.HUMAN:
        preds = case.human_predictions.get(spot.spot_id)
        if not preds:
            raise MissingArtifact(
                f"no human predictions for dialogue {case.dialogue_id}, spot {spot.spot_id}"
            )
        value = sum(preds) / len(preds)

    elif kind is EstimatorKind.BASELINE_LLM:
        prompt = build_baseline_score_prompt(
            case, spot.description, speaker, exemplars, template_dir=config.template_dir
        )
        value = float(_complete_score(gateway, prompt, config))

    elif kind is EstimatorKind.SUMREC_LLM:
        left, right_rec = _sumrec_inputs(case, speaker, spot, estimator, artifacts)
        prompt = build_sumrec_score_prompt(
            left, spot.description, right_rec, exemplars, template_dir=config.template_dir
        )
        value = float(_complete_score(gateway, prompt, config))

    elif kind is EstimatorKind.REMOTE_BIENCODER:
        left, right_rec = _sumrec_inputs(case, speaker, spot, estimator, artifacts)
        right = spot.description if right_rec is None else f"{spot.description} [SEP] {right_rec}"
        client = remote or RemoteScorerClient(estimator.scorer_url or "")
        value = client.predict([{"left_text": left, "right_text": right}])[0]

    else:
        raise ValueError(f"unknown estimator kind {kind}")

    value = min(5.0, max(1.0, value))
    return ScorePrediction(
        dialogue_id=case.dialogue_id, speaker=speaker, spot_id=spot.spot_id, value=value
    )


def _sumrec_inputs(
    case: DialogueCase,
    speaker: str,
    spot: TouristSpot,
    estimator: EstimatorConfig,
    artifacts: Optional[ArtifactStore],
) -> tuple[str, Optional[str]]:
    """Resolve (speaker-side text, rec-info text or None) per the ablation."""
    if estimator.ablation is Ablation.WITHOUT_SUMMARY:
        left = case.dialogue_text()
    else:
        source_turns = FIVE_TURN_COUNT if estimator.ablation is Ablation.FIVE_TURNS else 0
        if artifacts is None:
            raise MissingArtifact("summary artifacts required")
        summary = artifacts.get_summary(case.dialogue_id, speaker, source_turns)
        if summary is None:
            raise MissingArtifact(
                f"no summary for dialogue {case.dialogue_id}, speaker {speaker}, "
                f"source_turns {source_turns}"
            )
        left = summary.text
    if estimator.ablation is Ablation.WITHOUT_REC_INFO:
        return left, None
    if artifacts is None:
        raise MissingArtifact("rec-info artifacts required")
    rec = artifacts.get_rec_info(spot.spot_id)
    if rec is None:
        raise MissingArtifact(f"no rec-info for spot {spot.spot_id}")
    return left, rec.text


# --- batch driver ---

class PredictionStore:
    """One JSONL file per estimator digest; append-only, idempotent keys."""

    def __init__(self, root: str | Path, estimator: EstimatorConfig):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        self.path = self.root / f"{estimator.digest()}.jsonl"
        self._seen: dict[tuple[str, str, str], ScorePrediction] = {}
        if self.path.is_file():
            with open(self.path, encoding="utf-8") as f:
                for line in f:
                    if line.strip():
                        p = ScorePrediction(**json.loads(line))
                        self._seen[(p.dialogue_id, p.speaker, p.spot_id)] = p

    def get(self, key: tuple[str, str, str]) -> Optional[ScorePrediction]:
        return self._seen.get(key)

    def put(self, prediction: ScorePrediction) -> None:
        key = (prediction.dialogue_id, prediction.speaker, prediction.spot_id)
        if key in self._seen:
            return
        self._seen[key] = prediction
        with open(self.path, "a", encoding="utf-8") as f:
            f.write(json.dumps(asdict(prediction)) + "\n")

    def all(self) -> list[ScorePrediction]:
        return list(self._seen.values())


def run_estimator(
    cases: list[DialogueCase],
    dataset: Dataset,
    estimator: EstimatorConfig,
    gateway: Optional[Gateway] = None,
    artifacts: Optional[ArtifactStore] = None,
    exemplars_by_topic: Optional[dict] = None,
    config: Optional[GenerationConfig] = None,
    store: Optional[PredictionStore] = None,
    remote: Optional[RemoteScorerClient] = None,
) -> PredictionSet:
    """Estimate every (dialogue, speaker, spot) triple; resumable and failure-isolated."""
    result = PredictionSet(estimator=estimator, predictions=[])
    for case in cases:
        topic_exemplars = None
        if exemplars_by_topic is not None:
            topic_exemplars = exemplars_by_topic.get(case.topic) or exemplars_by_topic.get(None)
        for speaker in ("A", "B"):
            for spot in dataset.spots_for(case):
                key = (case.dialogue_id, speaker, spot.spot_id)
                if store is not None:
                    cached = store.get(key)
                    if cached is not None:
                        result.predictions.append(cached)
                        continue
                try:
                    pred = estimate(
                        case,
                        speaker,
                        spot,
                        estimator,
                        artifacts=artifacts,
                        gateway=gateway,
                        exemplars=topic_exemplars,
                        config=config,
                        remote=remote,
                    )
                except Exception as e:
                    result.failures.append(
                        {
                            "dialogue_id": case.dialogue_id,
                            "speaker": speaker,
                            "spot_id": spot.spot_id,
                            "error": type(e).__name__,
                            "message": str(e),
                        }
                    )
                    continue
                if store is not None:
                    store.put(pred)
                result.predictions.append(pred)
    return result
