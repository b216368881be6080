import json
import xml.etree.ElementTree as ET

import pytest

from seqref.agents import TemplateAgent
from seqref.geometry import is_visible
from seqref.replay_export import ReplayExportError, export_replay
from seqref.scenario import ScenarioConfig, generate_scenario
from seqref.selfplay import play_game


@pytest.fixture(scope="module")
def game():
    scenario = generate_scenario(88, ScenarioConfig())
    record = play_game(TemplateAgent(), TemplateAgent(), scenario)
    return scenario, record


class TestJsonExport:
    def test_frame_counts(self, game, tmp_path):
        scenario, record = game
        files = export_replay(scenario, record.events, "json", tmp_path)
        doc = json.loads(files[0].read_text())
        assert doc["turns"][0]["agents"]["A"], "turn 1 present"
        assert len(doc["turns"][0]["agents"]["A"]) == 10
        if len(doc["turns"]) > 1:
            assert len(doc["turns"][1]["agents"]["A"]) == 15

    def test_placements_match_canonical_sampling(self, game, tmp_path):
        from seqref.geometry import sample_turn_frames

        scenario, record = game
        files = export_replay(scenario, record.events, "json", tmp_path)
        doc = json.loads(files[0].read_text())
        frames = sample_turn_frames(
            1, scenario.turns[0], scenario.views["A"][0], None
        )
        exported = doc["turns"][0]["agents"]["A"]
        for frame, exp in zip(frames, exported):
            for eid, pos in frame.positions.items():
                assert exp["positions"][eid] == [pos.x, pos.y]

    def test_empty_transcript_rejected(self, game, tmp_path):
        scenario, _ = game
        with pytest.raises(ReplayExportError):
            export_replay(scenario, [], "json", tmp_path)

    def test_mismatched_scenario_rejected(self, game, tmp_path):
        scenario, record = game
        other = generate_scenario(89, ScenarioConfig(n_entities=12))
        with pytest.raises(ReplayExportError):
            export_replay(other, record.events, "json", tmp_path)


class TestSvgExport:
    def test_files_per_agent_and_turn(self, game, tmp_path):
        scenario, record = game
        files = export_replay(scenario, record.events, "svg", tmp_path)
        turns = max(e["turn"] for e in record.events if e["kind"] == "resolution")
        assert len(files) == 2 * turns

    def test_final_frame_shows_exactly_seven_selectable_dots(self, game, tmp_path):
        # The dots whose trajectory endpoints fall inside the clip circle are
        # the agent's 7 selectable entities.
        scenario, record = game
        export_replay(scenario, record.events, "svg", tmp_path)
        view = scenario.views["A"][0]
        inside = [
            eid
            for eid, tr in scenario.turns[0].items()
            if is_visible(tr.p2, view)
        ]
        assert len(inside) == 7
        svg = (tmp_path / "turn1_A.svg").read_text()
        root = ET.fromstring(svg)
        ns = {"svg": "http://www.w3.org/2000/svg"}
        circles = root.findall(".//svg:g/svg:circle", ns)
        assert len(circles) == len(scenario.entities)

    def test_svg_parses_and_animates(self, game, tmp_path):
        scenario, record = game
        files = export_replay(scenario, record.events, "svg", tmp_path)
        for path in files:
            root = ET.fromstring(path.read_text())
            assert root.tag.endswith("svg")
        turn2 = tmp_path / "turn2_A.svg"
        if turn2.exists():
            text = turn2.read_text()
            assert "animateMotion" in text
            assert 'begin="1.0s"' in text  # movement waits for the shift

    def test_unknown_format_rejected(self, game, tmp_path):
        scenario, record = game
        with pytest.raises(ReplayExportError):
            export_replay(scenario, record.events, "gif", tmp_path)
