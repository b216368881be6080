"""Analytics golden tests. Expected numbers are hand counts over the
bundled 3-dialogue fixture (tokens, turns and outcomes tallied by hand)."""

import json
from pathlib import Path

import pytest

from seqref.agents import TemplateAgent
from seqref.analytics import (
    Corpus,
    DialogueRecord,
    IngestError,
    ModifierLexicon,
    TokenModel,
    TurnRecord,
    default_lexicon,
    export_corpus,
    ingest,
    modifier_rates,
    overall_stats,
    tag_spatiotemporal,
    turn_level_stats,
    vocab_overlap,
    vocab_overlap_detail,
    write_reports,
)
from seqref.scenario import ScenarioConfig, generate_scenario
from seqref.selfplay import play_game

FIXTURES = Path(__file__).parent / "fixtures"


@pytest.fixture(scope="module")
def corpus3():
    return ingest(FIXTURES / "corpus3.jsonl", fmt="jsonl-dialogues")


class TestTokenModel:
    def test_lowercase_and_punctuation_dropped(self):
        tm = TokenModel()
        assert tm.tokenize("I lost it, NEW one!") == ["i", "lost", "it", "new", "one"]

    def test_deterministic(self):
        tm = TokenModel()
        text = "Same dot, again; slightly up."
        assert tm.tokenize(text) == tm.tokenize(text)

    def test_numbers_kept(self):
        assert TokenModel().tokenize("2 dots") == ["2", "dots"]


class TestIngest:
    def test_fixture_has_three_dialogues(self, corpus3):
        assert len(corpus3) == 3
        assert [d.id for d in corpus3.dialogues] == ["d1", "d2", "d3"]

    def test_lst_and_completed_turns(self, corpus3):
        by_id = {d.id: d for d in corpus3.dialogues}
        assert (by_id["d1"].lst, by_id["d1"].completed_turns) == (2, 3)
        assert (by_id["d2"].lst, by_id["d2"].completed_turns) == (5, 5)
        assert (by_id["d3"].lst, by_id["d3"].completed_turns) == (0, 1)

    def test_malformed_line_names_line_number(self, tmp_path):
        bad = tmp_path / "bad.jsonl"
        bad.write_text('{"id": "ok", "turns": []}\n{oops\n', encoding="utf-8")
        with pytest.raises(IngestError, match="2"):
            ingest(bad, fmt="jsonl-dialogues")

    def test_unknown_format_rejected(self, tmp_path):
        f = tmp_path / "x.jsonl"
        f.write_text("{}\n")
        with pytest.raises(IngestError):
            ingest(f, fmt="parquet")

    def test_missing_path_rejected(self):
        with pytest.raises(IngestError):
            ingest("/nonexistent/corpus.jsonl")


@pytest.fixture(scope="module")
def game_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("games")
    scenario = generate_scenario(77, ScenarioConfig())
    for i in range(2):
        record = play_game(TemplateAgent(), TemplateAgent(), scenario)
        corpus = Corpus(
            [
                DialogueRecord(
                    id=f"game{i}",
                    turns=[],
                    lst=0,
                    completed_turns=0,
                    scenario=scenario,
                    events=record.events,
                )
            ]
        )
        export_corpus(corpus, out)
    return out


class TestNativeTranscripts:
    def test_ingest_directory(self, game_dir):
        corpus = ingest(game_dir, fmt="native")
        assert len(corpus) == 2
        for d in corpus.dialogues:
            assert d.completed_turns == len(d.turns) >= 1
            assert d.scenario is not None
            assert d.events

    def test_round_trip_structurally_identical(self, game_dir, tmp_path):
        first = ingest(game_dir, fmt="native")
        export_corpus(first, tmp_path / "again")
        second = ingest(tmp_path / "again", fmt="native")
        assert len(first) == len(second)
        for d1, d2 in zip(first.dialogues, second.dialogues):
            assert d1.lst == d2.lst
            assert d1.completed_turns == d2.completed_turns
            assert [t.utterances for t in d1.turns] == [t.utterances for t in d2.turns]
            assert [t.success for t in d1.turns] == [t.success for t in d2.turns]

    def test_malformed_event_line_reported(self, tmp_path):
        f = tmp_path / "t.jsonl"
        f.write_text('{"kind": "utterance"}\n', encoding="utf-8")
        with pytest.raises(IngestError, match="t.jsonl:1"):
            ingest(f, fmt="native")


class TestOverallStats:
    def test_hand_counted_fixture(self, corpus3):
        stats = overall_stats(corpus3)
        assert stats["dialogues"] == 3
        # 18 utterances, 71 tokens, counted by hand.
        assert stats["utterances_per_dialogue"] == pytest.approx(6.0)
        assert stats["tokens_per_utterance"] == pytest.approx(71 / 18)
        assert stats["avg_lst"] == pytest.approx(7 / 3)
        assert stats["avg_completed_turns"] == pytest.approx(3.0)
        assert stats["unique_tokens"] == 43
        # every token occurs fewer than 10 times
        assert stats["rare_token_occupancy_pct"] == pytest.approx(100.0)

    def test_single_dialogue_lst(self):
        corpus = Corpus(
            [
                DialogueRecord(
                    id="solo",
                    turns=[
                        TurnRecord(k, [("A", "hi")], True, 4, "first")
                        for k in range(1, 6)
                    ],
                    lst=5,
                    completed_turns=5,
                )
            ]
        )
        stats = overall_stats(corpus)
        assert stats["avg_lst"] == 5.0
        assert stats["avg_completed_turns"] == 5.0

    def test_empty_corpus_rejected(self):
        with pytest.raises(ValueError):
            overall_stats(Corpus([]))


class TestVocabOverlap:
    def test_self_overlap_is_100(self, corpus3):
        assert vocab_overlap(corpus3, corpus3) == pytest.approx(100.0)
        assert vocab_overlap(corpus3, corpus3, drop_rare=True) == pytest.approx(100.0)

    def test_disjoint_is_0(self):
        a = Corpus([DialogueRecord("a", [TurnRecord(1, [("A", "alpha beta")], True)], 1, 1)])
        b = Corpus([DialogueRecord("b", [TurnRecord(1, [("A", "gamma delta")], True)], 1, 1)])
        assert vocab_overlap(a, b) == 0.0

    def test_detail_includes_both_definitions(self, corpus3):
        detail = vocab_overlap_detail(corpus3, corpus3)
        assert detail["jaccard_pct"] == pytest.approx(100.0)
        assert detail["coverage_a_in_b_pct"] == pytest.approx(100.0)

    def test_empty_corpus_rejected(self, corpus3):
        with pytest.raises(ValueError):
            vocab_overlap(corpus3, Corpus([]))


class TestModifierRates:
    def test_slightly_curves_up_counts_one_diminisher(self):
        corpus = Corpus(
            [DialogueRecord("u", [TurnRecord(1, [("A", "slightly curves up")], True)], 1, 1)]
        )
        rates = modifier_rates(corpus)
        assert rates["diminishers"] == pytest.approx(100.0)
        assert rates["moderators"] == 0.0
        assert rates["boosters"] == 0.0

    def test_fixture_rates_hand_counted(self, corpus3):
        # 18 utterances; "slightly" + "a bit" = 2 diminishers, "very" = 1
        # booster, "maybe" = 1 approximator, "exactly" = 1 maximizer.
        rates = modifier_rates(corpus3)
        assert rates["diminishers"] == pytest.approx(200 / 18)
        assert rates["boosters"] == pytest.approx(100 / 18)
        assert rates["approximators"] == pytest.approx(100 / 18)
        assert rates["maximizers"] == pytest.approx(100 / 18)
        assert rates["moderators"] == 0.0

    def test_bigram_matched_before_unigram_non_overlapping(self):
        # "a bit" must consume both tokens and not double count.
        lex = ModifierLexicon(
            diminishers=("a bit",),
            moderators=(),
            boosters=("bit",),
            approximators=(),
            maximizers=(),
        )
        corpus = Corpus(
            [DialogueRecord("u", [TurnRecord(1, [("A", "a bit darker")], True)], 1, 1)]
        )
        rates = modifier_rates(corpus, lex)
        assert rates["diminishers"] == pytest.approx(100.0)
        assert rates["boosters"] == 0.0

    def test_empty_lexicon_all_zero(self, corpus3):
        lex = ModifierLexicon((), (), (), (), ())
        assert all(v == 0.0 for v in modifier_rates(corpus3, lex).values())

    def test_default_lexicon_sizes_and_disjointness(self):
        lex = default_lexicon()
        sizes = [len(kw) for _, kw in lex.items()]
        assert sizes == [10, 6, 27, 34, 37]

    def test_overlapping_lexicon_rejected(self):
        with pytest.raises(ValueError):
            ModifierLexicon(("very",), (), ("very",), (), ())

    def test_additive_over_concatenation(self, corpus3):
        doubled = Corpus(corpus3.dialogues + corpus3.dialogues)
        r1 = modifier_rates(corpus3)
        r2 = modifier_rates(doubled)
        for cat in r1:
            assert r2[cat] == pytest.approx(r1[cat])


class TestTurnLevelStats:
    def test_hand_counted_fixture(self, corpus3):
        stats = turn_level_stats(corpus3)
        rates = stats["success_rate_pct"]
        assert rates["first"][4] == pytest.approx(200 / 3)
        assert rates["first"][5] is None
        assert rates["later_stay"][5] == pytest.approx(100.0)
        assert rates["later_stay"][4] == pytest.approx(100.0)
        assert rates["later_leave"][6] == pytest.approx(50.0)
        assert stats["stay_pct"] == pytest.approx(200 / 3)
        assert stats["leave_pct"] == pytest.approx(100 / 3)
        assert stats["utterances_per_turn"]["first"] == pytest.approx(2.0)
        assert stats["tokens_per_utterance"]["first"] == pytest.approx(28 / 6)
        assert stats["tokens_per_utterance"]["later_stay"] == pytest.approx(2.0)
        assert stats["tokens_per_utterance"]["later_leave"] == pytest.approx(6.75)

    def test_all_success_fixture(self):
        corpus = Corpus(
            [
                DialogueRecord(
                    "w",
                    [
                        TurnRecord(1, [("A", "x")], True, 4, "first"),
                        TurnRecord(2, [("A", "y")], True, 5, "later_stay"),
                    ],
                    2,
                    2,
                )
            ]
        )
        stats = turn_level_stats(corpus)
        assert stats["success_rate_pct"]["first"][4] == pytest.approx(100.0)
        assert stats["success_rate_pct"]["later_stay"][5] == pytest.approx(100.0)

    def test_dialogues_without_categories_excluded(self, corpus3):
        extra = DialogueRecord(
            "nocat", [TurnRecord(1, [("A", "hi")], True, None, None)], 1, 1
        )
        stats = turn_level_stats(Corpus(corpus3.dialogues + [extra]))
        assert stats["excluded_dialogues"] == 1
        assert stats["success_rate_pct"]["first"][4] == pytest.approx(200 / 3)

    def test_permutation_invariance(self, corpus3):
        reversed_corpus = Corpus(list(reversed(corpus3.dialogues)))
        assert turn_level_stats(corpus3) == turn_level_stats(reversed_corpus)


class TestSpatioTemporalTagger:
    @pytest.mark.parametrize(
        "text,expected",
        [
            ("moves very quickly", {"state_change"}),
            ("started out below it to the left", {"previous_state"}),
            ("hello", set()),
            ("now i see another one", {"current_state"}),
            ("it ends up near the top", {"current_state"}),
            ("it was next to it before it moves", {"previous_state"}),
        ],
    )
    def test_flags(self, text, expected):
        assert expected <= tag_spatiotemporal(text)
        if not expected:
            assert tag_spatiotemporal(text) == set()

    def test_multiple_flags(self):
        flags = tag_spatiotemporal("it started out left and now drifts south")
        assert {"previous_state", "current_state", "state_change"} <= flags


class TestReports:
    def test_write_selected_tables(self, corpus3, tmp_path):
        files = write_reports(corpus3, ["2", "4", "5", "6"], tmp_path)
        names = sorted(f.name for f in files)
        assert names == [
            "modifiers.json",
            "modifiers.tsv",
            "overall.json",
            "overall.tsv",
            "stay_leave.json",
            "stay_leave.tsv",
            "turn_level.json",
            "turn_level.tsv",
        ]
        overall = json.loads((tmp_path / "overall.json").read_text())
        assert overall["dialogues"] == 3

    def test_named_ids_accepted(self, corpus3, tmp_path):
        files = write_reports(corpus3, ["overall"], tmp_path)
        assert len(files) == 2

    def test_unknown_table_rejected(self, corpus3, tmp_path):
        with pytest.raises(ValueError):
            write_reports(corpus3, ["9"], tmp_path)
