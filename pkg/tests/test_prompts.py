from pathlib import Path

import pytest

from sumrec.corpus import DialogueCase, Topic, TouristSpot, Utterance
from sumrec.errors import (
    InsufficientExemplars,
    PromptError,
    TemplateMismatch,
    WrongExemplarCount,
)
from sumrec.prompts import (
    Exemplar,
    PromptKind,
    build_baseline_score_prompt,
    build_recommendation_prompt,
    build_summary_prompt,
    build_sumrec_score_prompt,
    load_default_exemplars,
    select_exemplars,
)

from ds_helpers import make_dataset

GOLDEN = Path(__file__).parent / "golden"


def tiny_dialogue(texts=("Hello there.", "Hi, nice day.")):
    utts = tuple(
        Utterance(index=i, speaker="A" if i % 2 == 1 else "B", text=t)
        for i, t in enumerate(texts, 1)
    )
    return DialogueCase(
        dialogue_id="dx",
        topic=Topic.TRAVEL,
        utterances=utts,
        spot_file_id="f00",
        scores_a={},
        scores_b={},
        human_predictions={},
    )


def baseline_exemplars():
    return [
        Exemplar(
            kind=PromptKind.BASELINE_SCORE,
            payload={
                "dialogue": f"A: Example line {i}.\nB: Example reply {i}.",
                "description": f"Exemplar spot description {i}.",
                "speaker": "A",
                "score": i,
            },
        )
        for i in range(1, 6)
    ]


def sumrec_exemplars():
    return [
        Exemplar(
            kind=PromptKind.SUMREC_SCORE,
            payload={
                "summary": f"Summary text {i}.",
                "description": f"Spot description {i}.",
                "rec_info": f"Recommended for group {i}.",
                "score": i,
            },
        )
        for i in range(1, 6)
    ]


class TestSummaryPrompt:
    def test_speaker_lines_in_order(self):
        prompt = build_summary_prompt(tiny_dialogue(), load_default_exemplars(PromptKind.SUMMARY)[0])
        text = prompt.text
        assert "A: Hello there." in text
        assert "B: Hi, nice day." in text
        assert text.index("A: Hello there.") < text.index("B: Hi, nice day.")

    def test_empty_exemplar_list(self):
        with pytest.raises(TemplateMismatch):
            build_summary_prompt(tiny_dialogue(), [])

    def test_golden_render(self):
        prompt = build_summary_prompt(tiny_dialogue(), load_default_exemplars(PromptKind.SUMMARY)[0])
        assert prompt.text == (GOLDEN / "summary_prompt.txt").read_text(encoding="utf-8")

    def test_rendering_is_pure(self):
        ex = load_default_exemplars(PromptKind.SUMMARY)[0]
        assert build_summary_prompt(tiny_dialogue(), ex) == build_summary_prompt(tiny_dialogue(), ex)

    def test_each_utterance_appears_once(self):
        d = tiny_dialogue(tuple(f"unique token line {i}" for i in range(1, 9)))
        text = build_summary_prompt(d, load_default_exemplars(PromptKind.SUMMARY)[0]).text
        for i in range(1, 9):
            assert text.count(f"unique token line {i}") == 1

    def test_budget_trims_exemplar_not_target(self):
        d = tiny_dialogue(("keep me A", "keep me B"))
        ex = load_default_exemplars(PromptKind.SUMMARY)[0]
        full = build_summary_prompt(d, ex).text
        trimmed = build_summary_prompt(d, ex, context_budget=len(full) // 4 - 20).text
        assert len(trimmed) < len(full)
        assert "keep me A" in trimmed and "keep me B" in trimmed


class TestRecommendationPrompt:
    def test_wrong_count(self):
        spot = TouristSpot(spot_id="s", name="X", description="desc")
        with pytest.raises(WrongExemplarCount):
            build_recommendation_prompt(spot, load_default_exemplars(PromptKind.RECOMMENDATION_INFO)[:4])

    def test_identical_exemplars_repeat(self):
        spot = TouristSpot(spot_id="s", name="X", description="target desc")
        ex = load_default_exemplars(PromptKind.RECOMMENDATION_INFO)[0]
        text = build_recommendation_prompt(spot, [ex] * 5).text
        assert text.count(ex.payload["description"]) == 5
        assert text.count("target desc") == 1

    def test_golden_render(self):
        spot = TouristSpot(
            spot_id="s",
            name="Harbor Lighthouse Walk",
            description="A restored lighthouse with a walkway over the rocks. Open at sunset.",
        )
        prompt = build_recommendation_prompt(spot, load_default_exemplars(PromptKind.RECOMMENDATION_INFO))
        assert prompt.text == (GOLDEN / "recommendation_prompt.txt").read_text(encoding="utf-8")

    def test_blocks_numbered_through_six(self):
        spot = TouristSpot(spot_id="s", name="X", description="desc")
        text = build_recommendation_prompt(spot, load_default_exemplars(PromptKind.RECOMMENDATION_INFO)).text
        for i in range(1, 7):
            assert f"--{i}--" in text
        assert "--7--" not in text


class TestSumrecScorePrompt:
    def test_target_ends_with_score_label(self):
        prompt = build_sumrec_score_prompt("summary", "desc", "rec", sumrec_exemplars())
        assert prompt.text.endswith("[Score]")

    def test_gold_score_zero_rejected(self):
        with pytest.raises(PromptError):
            Exemplar(
                kind=PromptKind.SUMREC_SCORE,
                payload={"summary": "s", "description": "d", "rec_info": "r", "score": 0},
            )

    def test_inputs_appear_verbatim(self):
        summary = "I like reptiles and frogs, so I collect and keep them."
        desc = "Upstream of the river, a columnar joint cliff continues for 24km."
        rec = "This tourist spot is recommended for those who want to enjoy nature."
        text = build_sumrec_score_prompt(summary, desc, rec, sumrec_exemplars()).text
        assert summary in text and desc in text and rec in text

    def test_without_rec_info_drops_block(self):
        text = build_sumrec_score_prompt("summary", "desc", None, sumrec_exemplars()).text
        assert "[Recommended Person]" not in text
        assert "[Characteristics of Speakers]" in text
        assert text.endswith("[Score]")

    def test_wrong_count(self):
        with pytest.raises(WrongExemplarCount):
            build_sumrec_score_prompt("s", "d", "r", sumrec_exemplars()[:3])


class TestBaselineScorePrompt:
    def test_score_slot_speaker_label(self):
        text = build_baseline_score_prompt(tiny_dialogue(), "desc", "A", baseline_exemplars()).text
        assert text.endswith("[Score]\nA:")
        text_b = build_baseline_score_prompt(tiny_dialogue(), "desc", "B", baseline_exemplars()).text
        assert text_b.endswith("[Score]\nB:")

    def test_six_exemplars_rejected(self):
        with pytest.raises(WrongExemplarCount):
            build_baseline_score_prompt(
                tiny_dialogue(), "desc", "A", baseline_exemplars() + baseline_exemplars()[:1]
            )

    def test_golden_render(self):
        prompt = build_baseline_score_prompt(
            tiny_dialogue(), "A quiet garden with a tea house.", "A", baseline_exemplars()
        )
        assert prompt.text == (GOLDEN / "baseline_prompt.txt").read_text(encoding="utf-8")

    def test_truncated_dialogue_has_ten_lines(self):
        from sumrec.corpus import truncate_dialogue

        ds = make_dataset(n_dialogues=1, n_utterances=22)
        truncated = truncate_dialogue(ds.dialogues[0], 5)
        text = build_baseline_score_prompt(truncated, "desc", "A", baseline_exemplars()).text
        target = text[text.index("--6--"):]
        lines = [l for l in target.splitlines() if l.startswith(("A: ", "B: "))]
        assert len(lines) == 10


class TestSelectExemplars:
    def test_all_candidates_when_exact(self):
        ds = make_dataset(n_dialogues=15)  # 5 per topic
        travel = [d for d in ds.dialogues if d.topic is Topic.TRAVEL]
        out = select_exemplars(travel, PromptKind.BASELINE_SCORE, Topic.TRAVEL, 5, seed=1, dataset=ds)
        assert len(out) == 5
        assert {e.payload["dialogue"] for e in out} == {d.dialogue_text() for d in travel}

    def test_insufficient(self):
        ds = make_dataset(n_dialogues=9)  # 3 per topic
        with pytest.raises(InsufficientExemplars):
            select_exemplars(
                list(ds.dialogues), PromptKind.BASELINE_SCORE, Topic.TRAVEL, 5, seed=1, dataset=ds
            )

    def test_seed_determinism_and_variation(self):
        ds = make_dataset(n_dialogues=99)
        cases = [d for d in ds.dialogues if d.topic is Topic.TRAVEL]
        pick = lambda seed: [
            e.payload["dialogue"]
            for e in select_exemplars(cases, PromptKind.BASELINE_SCORE, Topic.TRAVEL, 5, seed, dataset=ds)
        ]
        assert pick(1) == pick(1)
        assert any(pick(1) != pick(s) for s in range(2, 12))

    def test_matches_reference_sampler(self):
        # the selection contract is seeded sampling without replacement over
        # dialogue_id-sorted candidates
        import random

        ds = make_dataset(n_dialogues=30)
        cases = sorted(
            (d for d in ds.dialogues if d.topic is Topic.TRAVEL), key=lambda d: d.dialogue_id
        )
        expected = [d.dialogue_text() for d in random.Random(42).sample(cases, 5)]
        got = [
            e.payload["dialogue"]
            for e in select_exemplars(cases, PromptKind.BASELINE_SCORE, Topic.TRAVEL, 5, 42, dataset=ds)
        ]
        assert got == expected

    def test_gold_scores_come_from_ground_truth(self):
        ds = make_dataset(n_dialogues=15)
        travel = [d for d in ds.dialogues if d.topic is Topic.TRAVEL]
        by_text = {d.dialogue_text(): d for d in travel}
        for ex in select_exemplars(travel, PromptKind.BASELINE_SCORE, Topic.TRAVEL, 5, 3, dataset=ds):
            d = by_text[ex.payload["dialogue"]]
            speaker = ex.payload["speaker"]
            spot_scores = d.scores_for(speaker)
            assert ex.payload["score"] in spot_scores.values()
