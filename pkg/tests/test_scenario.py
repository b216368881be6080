"""Scenario generation and validation tests.

The validator is the executable definition of scenario validity, so most
generation tests assert through it; targeted counterexamples check that the
validator itself catches each constraint violation.
"""

import dataclasses
import math

import numpy as np
import pytest
from scipy.stats import chisquare

from seqref.geometry import Point, Trajectory, View, build_trajectory, min_separation
from seqref.rng import substream
from seqref.scenario import (
    AGENTS,
    Entity,
    GenerationExhausted,
    Scenario,
    ScenarioConfig,
    TurnRejected,
    _TurnState,
    dumps_scenario,
    generate_scenario,
    parse_scenario,
    sample_entities,
    sample_turn,
    sample_view_shift,
    validate_scenario,
)

DEFAULT = ScenarioConfig()


@pytest.fixture(scope="module")
def scenario42():
    return generate_scenario(42, DEFAULT)


class TestConfig:
    def test_default_is_valid(self):
        DEFAULT.validate()

    def test_zero_view_diameter_rejected(self):
        with pytest.raises(ValueError):
            dataclasses.replace(DEFAULT, view_diameter=0.0).validate()

    def test_empty_range_rejected(self):
        with pytest.raises(ValueError):
            dataclasses.replace(DEFAULT, color_range=(0.9, 0.1)).validate()

    def test_too_few_entities_rejected(self):
        with pytest.raises(ValueError):
            dataclasses.replace(DEFAULT, n_entities=9).validate()


class TestSampleViewShift:
    def test_degenerate_magnitude(self):
        config = dataclasses.replace(DEFAULT, shift_magnitude_range=(0.3, 0.3))
        vec = sample_view_shift(substream(1, 0), config)
        assert math.hypot(*vec) == pytest.approx(0.3, abs=1e-12)

    def test_seeded_stream_reproducible(self):
        a = sample_view_shift(substream(9, 4), DEFAULT)
        b = sample_view_shift(substream(9, 4), DEFAULT)
        assert a == b

    def test_direction_uniformity_chi_square(self):
        # 10,000 draws bucketed into 16 direction bins; accept at the 99%
        # band of the chi-square distribution.
        rng = substream(5, 0)
        angles = []
        for _ in range(10_000):
            dx, dy = sample_view_shift(rng, DEFAULT)
            angles.append(math.atan2(dy, dx) % (2 * math.pi))
        counts, _ = np.histogram(angles, bins=16, range=(0.0, 2 * math.pi))
        stat, p = chisquare(counts)
        assert p > 0.01

    def test_magnitude_within_range(self):
        rng = substream(6, 0)
        lo, hi = DEFAULT.shift_magnitude_range
        for _ in range(500):
            mag = math.hypot(*sample_view_shift(rng, DEFAULT))
            assert lo <= mag <= hi


class TestSampleEntities:
    def views(self):
        return (
            View(Point(0.0, 0.0), 1.0),
            View(Point(0.45, 0.0), 1.0),
        )

    def test_degenerate_color_range(self):
        config = dataclasses.replace(DEFAULT, color_range=(0.5, 0.5))
        ents = sample_entities(substream(7, 0), config, self.views())
        assert all(e.color == 0.5 for e in ents)

    def test_attribute_ranges_and_unique_ids(self):
        ents = sample_entities(substream(7, 1), DEFAULT, self.views())
        assert len({e.id for e in ents}) == DEFAULT.n_entities
        for e in ents:
            assert DEFAULT.color_range[0] <= e.color <= DEFAULT.color_range[1]
            assert DEFAULT.size_range[0] <= e.size <= DEFAULT.size_range[1]

    def test_pairwise_gaps_respected(self):
        ents = sample_entities(substream(7, 2), DEFAULT, self.views())
        for i in range(len(ents)):
            for j in range(i + 1, len(ents)):
                need = ents[i].size + ents[j].size + DEFAULT.min_center_gap_margin
                d = ents[i].initial_pos.distance_to(ents[j].initial_pos)
                assert d >= need

    def test_positions_inside_inflated_union(self):
        ents = sample_entities(substream(7, 3), DEFAULT, self.views())
        va, vb = self.views()
        reach = DEFAULT.view_radius + DEFAULT.max_travel
        for e in ents:
            da = e.initial_pos.distance_to(va.center)
            db = e.initial_pos.distance_to(vb.center)
            assert min(da, db) <= reach

    def test_overcrowding_exhausts(self):
        config = dataclasses.replace(
            DEFAULT,
            n_entities=200,
            min_center_gap_margin=0.2,
            per_entity_attempts=30,
        )
        with pytest.raises(GenerationExhausted):
            sample_entities(substream(7, 4), config, self.views())


class TestSampleTurn:
    def entities(self, positions):
        return [
            Entity(f"e{i:02d}", 0.5, 0.02, Point(*p), 0.0)
            for i, p in enumerate(positions)
        ]

    def state(self, ents):
        return _TurnState(
            positions={e.id: e.initial_pos for e in ents},
            headings={e.id: e.initial_heading for e in ents},
        )

    def test_single_entity_accepted_first_draw(self):
        ents = self.entities([(0.0, 0.0)])
        streams = [substream(3, 0, 0)]
        trajs = sample_turn(streams, self.state(ents), DEFAULT, ents)
        lo, hi = DEFAULT.r1_range
        assert lo <= trajs["e00"].r1 <= hi

    def test_coincident_starts_rejected_immediately(self):
        ents = self.entities([(0.1, 0.1), (0.1, 0.1)])
        streams = [substream(3, 0, i) for i in range(2)]
        with pytest.raises(TurnRejected):
            sample_turn(streams, self.state(ents), DEFAULT, ents)

    def test_pairwise_clearance_holds(self):
        rng = substream(11, 0)
        positions = []
        while len(positions) < 16:
            p = (float(rng.uniform(-0.6, 0.6)), float(rng.uniform(-0.6, 0.6)))
            if all(math.hypot(p[0] - q[0], p[1] - q[1]) > 0.06 for q in positions):
                positions.append(p)
        ents = self.entities(positions)
        streams = [substream(11, 1, i) for i in range(16)]
        trajs = sample_turn(streams, self.state(ents), DEFAULT, ents)
        ids = [e.id for e in ents]
        for i in range(len(ids)):
            for j in range(i + 1, len(ids)):
                sep = min_separation(trajs[ids[i]], trajs[ids[j]], DEFAULT.overlap_samples)
                assert sep >= ents[i].size + ents[j].size

    def test_rejection_leaves_other_streams_untouched(self):
        # Entity 1 with a clear field accepts its first draw no matter what
        # entity 0 consumed, because streams are independent per entity.
        far = self.entities([(0.0, 0.0), (5.0, 5.0)])
        streams = [substream(13, 0, i) for i in range(2)]
        trajs_pair = sample_turn(streams, self.state(far), DEFAULT, far)
        solo = [far[1]]
        solo_state = _TurnState(
            positions={far[1].id: far[1].initial_pos},
            headings={far[1].id: far[1].initial_heading},
        )
        trajs_solo = sample_turn([substream(13, 0, 1)], solo_state, DEFAULT, solo)
        assert trajs_pair["e01"] == trajs_solo["e01"]


class TestGenerateScenario:
    def test_seed42_validates_clean(self, scenario42):
        assert validate_scenario(scenario42).empty

    def test_deterministic_byte_identical(self, scenario42):
        again = generate_scenario(42, DEFAULT)
        assert dumps_scenario(scenario42) == dumps_scenario(again)

    def test_round_trip_byte_stable(self, scenario42):
        text = dumps_scenario(scenario42)
        assert dumps_scenario(parse_scenario(text)) == text

    def test_parsed_scenario_still_validates(self, scenario42):
        parsed = parse_scenario(dumps_scenario(scenario42))
        assert validate_scenario(parsed).empty

    def test_shared_sets_match_schedule_choices(self, scenario42):
        for shared in scenario42.shared_sets:
            assert len(shared) in DEFAULT.shared_choices

    def test_visible_exactly_seven(self, scenario42):
        for agent in AGENTS:
            for k in range(1, DEFAULT.max_turns + 1):
                assert len(scenario42.visible_ids(agent, k)) == 7

    def test_heading_persistence_through_turns(self, scenario42):
        for e in scenario42.entities:
            theta = e.initial_heading
            for turn in scenario42.turns:
                tr = turn[e.id]
                assert tr.theta_prev == pytest.approx(theta, abs=1e-12)
                theta = tr.theta_next

    def test_zero_view_diameter_config_error(self):
        with pytest.raises(ValueError):
            generate_scenario(1, dataclasses.replace(DEFAULT, view_diameter=0.0))

    def test_infeasible_config_exhausts_with_diagnostics(self):
        config = dataclasses.replace(
            DEFAULT,
            n_entities=10,
            per_turn_attempts=5,
            scenario_restarts=2,
            per_entity_attempts=10,
            # huge dots cannot keep the gaps
            size_range=(0.2, 0.2),
        )
        with pytest.raises(GenerationExhausted) as exc:
            generate_scenario(1, config)
        assert "restarts" in exc.value.diagnostics


class TestValidateScenario:
    def test_hand_broken_visibility_reported(self, scenario42):
        # Move one entity of turn 2 onto agent A's view center: A sees 8.
        s = scenario42
        target_view = s.views["A"][1]
        turn2 = dict(s.turns[1])
        outside = next(
            eid for eid in turn2 if eid not in s.visible_ids("A", 2)
        )
        old = turn2[outside]
        turn2[outside] = Trajectory(
            old.p0, old.p1, target_view.center, old.r1, old.r2, old.theta_prev, old.delta_theta
        )
        broken = dataclasses.replace(s, turns=(s.turns[0], turn2) + s.turns[2:])
        rep = validate_scenario(broken)
        names = {v.constraint for v in rep.violations}
        assert "visible_count" in names

    def test_consecutive_shared_violation_detected(self):
        # Synthetic scenario shell: one entity shared five times.
        config = dataclasses.replace(DEFAULT, n_entities=10, max_turns=2)
        s = generate_scenario(7, dataclasses.replace(config, max_turns=2))
        stays = dataclasses.replace(
            s, shared_sets=(s.shared_sets[0], s.shared_sets[0])
        )
        rep = validate_scenario(stays)
        assert not rep.empty  # stored sets no longer match geometry

    def test_gap_violation_detected(self, scenario42):
        s = scenario42
        vis = sorted(s.visible_ids("A", 1))
        a, b = vis[0], vis[1]
        turn1 = dict(s.turns[0])
        ta, tb = turn1[a], turn1[b]
        turn1[a] = Trajectory(
            ta.p0, ta.p1, tb.p2.translated(0.001, 0.0), ta.r1, ta.r2, ta.theta_prev, ta.delta_theta
        )
        broken = dataclasses.replace(s, turns=(turn1,) + s.turns[1:])
        rep = validate_scenario(broken)
        names = {v.constraint for v in rep.violations}
        assert "min_center_gap" in names

    def test_heading_break_detected(self, scenario42):
        s = scenario42
        turn2 = dict(s.turns[1])
        eid = s.entities[0].id
        tr = turn2[eid]
        turn2[eid] = dataclasses.replace(tr, theta_prev=tr.theta_prev + 0.5)
        broken = dataclasses.replace(s, turns=(s.turns[0], turn2) + s.turns[2:])
        rep = validate_scenario(broken)
        names = {v.constraint for v in rep.violations}
        assert "heading_persistence" in names or "control_point_construction" in names


class TestScheduleUniformity:
    def test_shared_counts_uniform_over_seeds(self):
        # Realized shared counts pooled over turns and seeds stay within 3
        # sigma of the uniform draw over {4, 5, 6}.
        counts = {4: 0, 5: 0, 6: 0}
        seeds = range(1, 61)
        for seed in seeds:
            s = generate_scenario(seed, DEFAULT)
            for shared in s.shared_sets:
                counts[len(shared)] += 1
        total = sum(counts.values())
        expect = total / 3
        sigma = math.sqrt(total * (1 / 3) * (2 / 3))
        for value in counts.values():
            assert abs(value - expect) <= 3 * sigma
