import itertools
import json

import pytest

from sumrec.corpus import (
    Split,
    Topic,
    compute_statistics,
    load_dataset,
    save_dataset,
    split_dataset,
    truncate_dialogue,
)
from sumrec.errors import (
    DanglingSpotReference,
    EmptyDataset,
    MissingFile,
    SchemaViolation,
    ScoreOutOfRange,
)

from ds_helpers import make_dataset


class TestLoad:
    def test_identity_load(self, tmp_path):
        ds = make_dataset(n_dialogues=2)
        save_dataset(ds, tmp_path / "ds")
        loaded = load_dataset(tmp_path / "ds")
        assert len(loaded.dialogues) == 2
        assert loaded == ds

    def test_round_trip(self, tmp_path, small_dataset):
        save_dataset(small_dataset, tmp_path / "a")
        once = load_dataset(tmp_path / "a")
        save_dataset(once, tmp_path / "b")
        assert load_dataset(tmp_path / "b") == once

    def test_score_out_of_range(self, tmp_path, dataset_dir):
        lines = (dataset_dir / "dialogues.jsonl").read_text().splitlines()
        rec = json.loads(lines[0])
        first_spot = next(iter(rec["scores_a"]))
        rec["scores_a"][first_spot] = 6
        lines[0] = json.dumps(rec)
        (dataset_dir / "dialogues.jsonl").write_text("\n".join(lines) + "\n")
        with pytest.raises(ScoreOutOfRange):
            load_dataset(dataset_dir)

    def test_missing_file(self, dataset_dir):
        (dataset_dir / "spots.json").unlink()
        with pytest.raises(MissingFile):
            load_dataset(dataset_dir)

    def test_dangling_spot_file(self, dataset_dir):
        lines = (dataset_dir / "dialogues.jsonl").read_text().splitlines()
        rec = json.loads(lines[0])
        rec["spot_file_id"] = "nope"
        lines[0] = json.dumps(rec)
        (dataset_dir / "dialogues.jsonl").write_text("\n".join(lines) + "\n")
        with pytest.raises(DanglingSpotReference):
            load_dataset(dataset_dir)

    def test_non_alternating_speakers_rejected(self, dataset_dir):
        lines = (dataset_dir / "dialogues.jsonl").read_text().splitlines()
        rec = json.loads(lines[0])
        rec["utterances"][1]["speaker"] = "A"
        lines[0] = json.dumps(rec)
        (dataset_dir / "dialogues.jsonl").write_text("\n".join(lines) + "\n")
        with pytest.raises(SchemaViolation):
            load_dataset(dataset_dir)

    def test_short_dialogue_rejected(self, dataset_dir):
        lines = (dataset_dir / "dialogues.jsonl").read_text().splitlines()
        rec = json.loads(lines[0])
        rec["utterances"] = rec["utterances"][:10]
        lines[0] = json.dumps(rec)
        (dataset_dir / "dialogues.jsonl").write_text("\n".join(lines) + "\n")
        with pytest.raises(SchemaViolation):
            load_dataset(dataset_dir)


class TestSplit:
    def test_sizes_8_1_1(self):
        ds = make_dataset(n_dialogues=10)
        split = split_dataset(ds, seed=7)
        sizes = {s: len(split.ids_for(s)) for s in Split}
        assert sizes == {Split.TRAIN: 8, Split.VALIDATION: 1, Split.TEST: 1}

    def test_deterministic(self):
        ds = make_dataset(n_dialogues=10)
        assert split_dataset(ds, seed=7) == split_dataset(ds, seed=7)

    def test_partition(self):
        ds = make_dataset(n_dialogues=23)
        split = split_dataset(ds, seed=3)
        all_ids = sorted(d.dialogue_id for d in ds.dialogues)
        assigned = sorted(split.assignment)
        assert assigned == all_ids
        union = sorted(itertools.chain.from_iterable(split.ids_for(s) for s in Split))
        assert union == all_ids

    def test_empty_dataset(self):
        ds = make_dataset(n_dialogues=0)
        with pytest.raises(EmptyDataset):
            split_dataset(ds, seed=0)

    def test_category_balance_close_to_global(self):
        # two categories, interleaved across spots: every split should stay
        # close to the 50/50 global distribution
        ds = make_dataset(n_dialogues=20, categories=("alpha", "beta"))
        split = split_dataset(ds, seed=11)
        by_id = {d.dialogue_id: d for d in ds.dialogues}
        for s in Split:
            counts = {"alpha": 0, "beta": 0}
            for did in split.ids_for(s):
                for spot in ds.spots_for(by_id[did]):
                    counts[spot.category] += 1
            total = sum(counts.values())
            l1 = abs(counts["alpha"] / total - 0.5) + abs(counts["beta"] / total - 0.5)
            assert l1 <= 0.1

    def test_greedy_within_2x_of_optimal(self):
        # brute force over all (8,1,1) assignments of a 10-dialogue corpus:
        # greedy imbalance is within 2x of the optimum
        ds = make_dataset(n_dialogues=10, n_spot_files=5, categories=("alpha", "beta", "gamma"))
        by_id = {d.dialogue_id: d for d in ds.dialogues}
        cats = ("alpha", "beta", "gamma")

        def dialogue_counts(did):
            c = dict.fromkeys(cats, 0)
            for spot in ds.spots_for(by_id[did]):
                c[spot.category] += 1
            return c

        all_ids = [d.dialogue_id for d in ds.dialogues]
        global_counts = dict.fromkeys(cats, 0)
        for did in all_ids:
            for k, v in dialogue_counts(did).items():
                global_counts[k] += v
        g_total = sum(global_counts.values())
        global_dist = {k: v / g_total for k, v in global_counts.items()}

        def imbalance(groups):
            worst = 0.0
            for group in groups:
                c = dict.fromkeys(cats, 0)
                for did in group:
                    for k, v in dialogue_counts(did).items():
                        c[k] += v
                total = sum(c.values())
                l1 = sum(abs(c[k] / total - global_dist[k]) for k in cats)
                worst = max(worst, l1)
            return worst

        best = min(
            imbalance((
                [d for d in all_ids if d not in (v, t)], [v], [t]
            ))
            for v in all_ids
            for t in all_ids
            if v != t
        )

        split = split_dataset(ds, seed=7)
        greedy = imbalance([split.ids_for(s) for s in Split])
        assert greedy <= max(2 * best, 1e-9)


class TestStatistics:
    def test_simple_arithmetic(self):
        ds = make_dataset(
            n_dialogues=1,
            n_spot_files=1,
            spots_per_file=15,
            n_utterances=20,
        )
        stats = compute_statistics(ds, tokenizer=lambda t: t.split()[:5])
        row = stats.rows["ALL"]
        assert (row.dialogues, row.utterances) == (1, 20)
        assert row.words_per_utterance == 5.0
        assert row.spots_per_dialogue == 15.0

    def test_empty_topic_reports_null(self):
        ds = make_dataset(n_dialogues=1)  # only the Travel topic is populated
        stats = compute_statistics(ds)
        empty = stats.rows["E"]
        assert empty.dialogues == 0
        assert empty.utterances == 0
        assert empty.words_per_utterance is None
        assert empty.spots_per_dialogue is None

    def test_all_row_sums_topics(self, small_dataset):
        stats = compute_statistics(small_dataset)
        assert stats.rows["ALL"].dialogues == sum(stats.rows[t].dialogues for t in "TEN")
        assert stats.rows["ALL"].utterances == sum(stats.rows[t].utterances for t in "TEN")

    def test_invariant_under_reordering(self, small_dataset):
        from sumrec.corpus import Dataset

        shuffled = Dataset(
            dialogues=tuple(reversed(small_dataset.dialogues)),
            spots=small_dataset.spots,
            spot_files=small_dataset.spot_files,
        )
        assert compute_statistics(shuffled) == compute_statistics(small_dataset)


class TestTruncate:
    def test_five_turns_is_ten_utterances(self):
        ds = make_dataset(n_dialogues=1, n_utterances=22)
        out = truncate_dialogue(ds.dialogues[0], turns=5)
        assert len(out.utterances) == 10

    def test_saturation(self, small_dataset):
        d = small_dataset.dialogues[0]
        assert truncate_dialogue(d, turns=1000) == d

    def test_boundary_one_turn(self, small_dataset):
        d = small_dataset.dialogues[0]
        out = truncate_dialogue(d, turns=1)
        assert [u.index for u in out.utterances] == [1, 2]

    def test_idempotent(self, small_dataset):
        d = small_dataset.dialogues[0]
        once = truncate_dialogue(d, turns=5)
        assert truncate_dialogue(once, turns=5) == once

    def test_scores_unchanged(self, small_dataset):
        d = small_dataset.dialogues[0]
        out = truncate_dialogue(d, turns=3)
        assert out.scores_a == d.scores_a
        assert out.scores_b == d.scores_b
