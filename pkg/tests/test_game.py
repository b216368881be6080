import dataclasses
import json

import pytest

from seqref.game import (
    GameError,
    GameRules,
    IllegalSelection,
    Phase,
    PhaseError,
    TurnCategory,
    advance_animation,
    apply_event,
    classify_turn,
    make_event,
    new_game,
    observation,
    outcome_payload,
    replay_events,
    resolve_turn,
    submit_selection,
    submit_utterance,
)
from seqref.scenario import ScenarioConfig, generate_scenario

CONFIG = ScenarioConfig()


@pytest.fixture(scope="module")
def scenario():
    return generate_scenario(42, CONFIG)


@pytest.fixture()
def game(scenario):
    return new_game(scenario)


def shared_id(scenario, k, exclude=()):
    for eid in sorted(scenario.shared_sets[k - 1]):
        if eid not in exclude:
            return eid
    raise AssertionError("no shared entity available")


def play_successful_turn(g, pick=None):
    g = advance_animation(g)
    pick = pick or shared_id(g.scenario, g.turn)
    g = submit_selection(g, "A", pick)
    g = submit_selection(g, "B", pick)
    return resolve_turn(g)


class TestLifecycle:
    def test_initial_state(self, game):
        assert game.turn == 1
        assert game.phase == Phase.ANIMATING
        assert game.lst == 0
        assert game.transcript == ()

    def test_invalid_scenario_rejected(self, scenario):
        broken = dataclasses.replace(scenario, shared_sets=(frozenset(),) * 5)
        with pytest.raises(GameError):
            new_game(broken)

    def test_advance_animation_once(self, game):
        g = advance_animation(game)
        assert g.phase == Phase.DIALOGUE
        with pytest.raises(PhaseError):
            advance_animation(g)

    def test_full_win(self, game):
        g = game
        for _ in range(5):
            g = play_successful_turn(g)
        assert g.lst == 5
        assert g.phase == Phase.ENDED
        assert g.completed_turns == 5

    def test_fail_at_first_turn(self, game, scenario):
        g = advance_animation(game)
        a_pick = sorted(scenario.visible_ids("A", 1))[0]
        b_pick = next(
            eid for eid in sorted(scenario.visible_ids("B", 1)) if eid != a_pick
        )
        g = submit_selection(g, "A", a_pick)
        g = submit_selection(g, "B", b_pick)
        g = resolve_turn(g)
        assert g.lst == 0
        assert g.phase == Phase.ENDED
        assert g.completed_turns == 1

    def test_three_wins_then_loss(self, game):
        g = game
        for _ in range(3):
            g = play_successful_turn(g)
        g = advance_animation(g)
        vis_a = sorted(g.scenario.visible_ids("A", 4))
        vis_b = sorted(g.scenario.visible_ids("B", 4))
        a_pick = vis_a[0]
        b_pick = next(e for e in vis_b if e != a_pick)
        g = submit_selection(g, "A", a_pick)
        g = submit_selection(g, "B", b_pick)
        g = resolve_turn(g)
        assert g.lst == 3
        assert g.completed_turns == 4
        assert g.phase == Phase.ENDED

    def test_lst_counts_leading_successes_only(self, game):
        g = play_successful_turn(game)
        assert g.lst == 1
        assert g.previous_target is not None


class TestUtterances:
    def test_appends_with_sequence(self, game):
        g = advance_animation(game)
        g = submit_utterance(g, "A", "i see a large dark dot")
        g = submit_utterance(g, "B", "same here")
        assert [u.text for u in g.transcript] == ["i see a large dark dot", "same here"]
        assert [u.seq for u in g.transcript] == [1, 2]

    def test_empty_rejected(self, game):
        g = advance_animation(game)
        with pytest.raises(GameError):
            submit_utterance(g, "A", "   ")

    def test_oversized_rejected(self, game):
        g = advance_animation(game)
        submit_utterance(g, "A", "x" * 5000)
        with pytest.raises(GameError):
            submit_utterance(g, "A", "x" * 5001)

    def test_wrong_phase_rejected(self, game):
        with pytest.raises(PhaseError):
            submit_utterance(game, "A", "hello")

    def test_soft_cap(self, scenario):
        rules = GameRules(max_utterances_per_turn=2)
        g = advance_animation(new_game(scenario, rules))
        g = submit_utterance(g, "A", "one")
        g = submit_utterance(g, "B", "two")
        with pytest.raises(GameError):
            submit_utterance(g, "A", "three")


class TestSelections:
    def test_pending_recorded(self, game):
        g = advance_animation(game)
        pick = shared_id(g.scenario, 1)
        g = submit_selection(g, "A", pick)
        assert g.pending_of("A") == pick
        assert g.phase == Phase.DIALOGUE

    def test_partner_only_entity_rejected(self, game, scenario):
        g = advance_animation(game)
        only_b = sorted(
            scenario.visible_ids("B", 1) - scenario.visible_ids("A", 1)
        )[0]
        with pytest.raises(IllegalSelection):
            submit_selection(g, "A", only_b)

    def test_resubmission_overwrites(self, game, scenario):
        g = advance_animation(game)
        vis = sorted(scenario.visible_ids("A", 1))
        g = submit_selection(g, "A", vis[0])
        g = submit_selection(g, "A", vis[1])
        assert g.pending_of("A") == vis[1]
        assert len(g.pending) == 1

    def test_both_in_makes_resolution_eligible(self, game):
        g = advance_animation(game)
        pick = shared_id(g.scenario, 1)
        g = submit_selection(g, "A", pick)
        g = submit_selection(g, "B", pick)
        assert g.phase == Phase.RESOLVED

    def test_resolution_requires_both(self, game):
        g = advance_animation(game)
        g = submit_selection(g, "A", shared_id(g.scenario, 1))
        with pytest.raises(PhaseError):
            resolve_turn(g)

    def test_chat_allowed_after_one_selection(self, game):
        g = advance_animation(game)
        g = submit_selection(g, "A", shared_id(g.scenario, 1))
        g = submit_utterance(g, "B", "hold on, which one?")
        assert len(g.transcript) == 1


class TestClassifyTurn:
    def test_first(self, scenario):
        assert classify_turn(scenario, 1, None) == TurnCategory.FIRST

    def test_later_without_target_rejected(self, scenario):
        with pytest.raises(GameError):
            classify_turn(scenario, 2, None)

    def test_stay_and_leave(self, scenario):
        stay = (
            scenario.shared_sets[0] & scenario.shared_sets[1]
        )
        left = scenario.shared_sets[0] - (
            scenario.visible_ids("A", 2) & scenario.visible_ids("B", 2)
        )
        for eid in stay:
            assert classify_turn(scenario, 2, eid) == TurnCategory.LATER_STAY
        for eid in left:
            assert classify_turn(scenario, 2, eid) == TurnCategory.LATER_LEAVE

    def test_outcome_category_recorded(self, game):
        g = play_successful_turn(game)
        assert g.outcomes[0].category == TurnCategory.FIRST
        g = play_successful_turn(g)
        assert g.outcomes[1].category in (
            TurnCategory.LATER_STAY,
            TurnCategory.LATER_LEAVE,
        )


class TestObservation:
    def test_current_turn_after_animation(self, game):
        g = advance_animation(game)
        obs = observation(g, "A", 1)
        assert len(obs.frames) == 10
        assert len(obs.selectable_ids) == 7

    def test_animating_turn_not_viewable(self, game):
        with pytest.raises(GameError):
            observation(game, "A", 1)

    def test_future_turn_rejected(self, game):
        g = advance_animation(game)
        with pytest.raises(GameError):
            observation(g, "A", 2)

    def test_history_reviewable(self, game):
        g = play_successful_turn(game)
        g = advance_animation(g)
        obs1 = observation(g, "A", 1)
        obs2 = observation(g, "A", 2)
        assert len(obs1.frames) == 10
        assert len(obs2.frames) == 15

    def test_final_frame_matches_trajectory_endpoints(self, game):
        g = advance_animation(game)
        obs = observation(g, "A", 1)
        final = obs.frames[-1].positions
        for eid, p in final.items():
            assert p == g.scenario.turns[0][eid].p2

    def test_selectables_visible_in_final_frame(self, game):
        g = advance_animation(game)
        obs = observation(g, "A", 1)
        assert obs.selectable_ids <= set(obs.frames[-1].positions)

    def test_no_partner_view_leak(self, game):
        # Serialized observation must not contain the partner's view center.
        g = advance_animation(game)
        obs = observation(g, "A", 1)
        partner_center = g.scenario.views["B"][0].center
        blob = json.dumps(
            {
                "frames": [
                    {
                        "view": [f.view.center.x, f.view.center.y],
                        "pos": {k: list(v) for k, v in f.positions.items()},
                    }
                    for f in obs.frames
                ],
                "selectable": sorted(obs.selectable_ids),
            }
        )
        assert f"{partner_center.x:.12g}" not in blob
        assert f"{partner_center.y:.12g}" not in blob


class TestReplay:
    def scripted_events(self, scenario):
        g = new_game(scenario)
        events = []
        seq = 0

        def emit(kind, turn, payload, agent=None):
            nonlocal seq
            seq += 1
            events.append(make_event(seq, kind, turn, payload, agent, wallclock=0.0))

        while not g.ended:
            g = advance_animation(g)
            emit("shift", g.turn, {})
            g = submit_utterance(g, "A", f"turn {g.turn} proposal")
            emit("utterance", g.turn, {"text": f"turn {g.turn} proposal"}, "A")
            pick = shared_id(scenario, g.turn)
            g = submit_selection(g, "A", pick)
            emit("selection", g.turn, {"entity_id": pick}, "A")
            g = submit_selection(g, "B", pick)
            emit("selection", g.turn, {"entity_id": pick}, "B")
            g = resolve_turn(g)
            emit("resolution", g.outcomes[-1].turn, outcome_payload(g.outcomes[-1], g.lst))
        return g, events

    def test_replay_reconstructs_state(self, scenario):
        final, events = self.scripted_events(scenario)
        replayed = replay_events(scenario, events)
        assert replayed.lst == final.lst
        assert replayed.outcomes == final.outcomes
        assert replayed.transcript == final.transcript
        assert replayed.phase == final.phase

    def test_replay_detects_outcome_mismatch(self, scenario):
        final, events = self.scripted_events(scenario)
        tampered = [dict(e) for e in events]
        for e in tampered:
            if e["kind"] == "resolution":
                e["payload"] = dict(e["payload"], success=False)
                break
        with pytest.raises(GameError):
            replay_events(scenario, tampered)

    def test_unknown_event_kind_rejected(self, scenario):
        g = new_game(scenario)
        with pytest.raises(GameError):
            apply_event(g, {"kind": "teleport", "turn": 1, "payload": {}})
