import numpy as np
import pytest

from seqref.features import (
    META_IS_PREVIOUS_TARGET,
    META_VISIBLE_AT_TK,
    META_VISIBLE_IN_FRAME,
    SUBSET_ALL,
    SUBSET_SEL,
    expected_frame_count,
    featurize,
)
from seqref.game import advance_animation, new_game, observation, resolve_turn, submit_selection
from seqref.geometry import is_visible
from seqref.scenario import ScenarioConfig, generate_scenario


@pytest.fixture(scope="module")
def scenario():
    return generate_scenario(42, ScenarioConfig())


@pytest.fixture(scope="module")
def turn1_obs(scenario):
    g = advance_animation(new_game(scenario))
    return observation(g, "A", 1)


@pytest.fixture(scope="module")
def turn2_state(scenario):
    g = advance_animation(new_game(scenario))
    pick = sorted(scenario.shared_sets[0])[0]
    g = submit_selection(g, "A", pick)
    g = submit_selection(g, "B", pick)
    g = resolve_turn(g)
    return advance_animation(g), pick


def test_frame_counts(turn1_obs, turn2_state):
    fs1 = featurize(turn1_obs)
    assert fs1.frame_count == expected_frame_count(1) == 10
    g, _ = turn2_state
    fs2 = featurize(observation(g, "A", 2))
    assert fs2.frame_count == expected_frame_count(2) == 15


def test_invisible_entity_gets_zero_location_and_bit(turn1_obs):
    fs = featurize(turn1_obs)
    found = False
    for f, frame in enumerate(turn1_obs.frames):
        for i, eid in enumerate(fs.entity_ids):
            pos = frame.positions.get(eid)
            visible = pos is not None and is_visible(pos, frame.view)
            assert fs.meta[f, i, META_VISIBLE_IN_FRAME] == int(visible)
            if not visible:
                assert fs.vectors[f, i, 2] == 0.0
                assert fs.vectors[f, i, 3] == 0.0
                found = True
    assert found, "expected at least one invisible entity-frame pair"


def test_visible_location_scaled_to_unit_view(turn1_obs):
    fs = featurize(turn1_obs)
    radius = turn1_obs.view.diameter / 2.0
    frame = turn1_obs.frames[-1]
    for i, eid in enumerate(fs.entity_ids):
        pos = frame.positions.get(eid)
        if pos is None or not is_visible(pos, frame.view):
            continue
        assert fs.vectors[-1, i, 2] == pytest.approx(
            (pos.x - frame.view.center.x) / radius
        )
        assert np.hypot(fs.vectors[-1, i, 2], fs.vectors[-1, i, 3]) <= 1.0 + 1e-12


def test_color_and_size_kept_when_invisible(turn1_obs):
    fs = featurize(turn1_obs)
    for i, eid in enumerate(fs.entity_ids):
        color, size = turn1_obs.attributes[eid]
        assert np.all(fs.vectors[:, i, 0] == color)
        assert np.all(fs.vectors[:, i, 1] == size)


def test_previous_target_bit(turn2_state):
    g, pick = turn2_state
    obs = observation(g, "A", 2)
    fs = featurize(obs, previous_target=pick)
    for i, eid in enumerate(fs.entity_ids):
        assert fs.meta[0, i, META_IS_PREVIOUS_TARGET] == int(eid == pick)


def test_selectable_bit_matches_selectable_set(turn1_obs):
    fs = featurize(turn1_obs)
    for i, eid in enumerate(fs.entity_ids):
        assert fs.meta[0, i, META_VISIBLE_AT_TK] == int(
            eid in turn1_obs.selectable_ids
        )


def test_difference_tensor_antisymmetric_on_subset(turn1_obs):
    fs = featurize(turn1_obs, subset=SUBSET_SEL)
    rows = [fs.entity_ids.index(eid) for eid in fs.subset_ids]
    block = fs.diffs[:, rows, :, :]
    assert np.allclose(block, -np.swapaxes(block, 1, 2))


def test_subset_all_covers_every_entity(turn1_obs):
    fs = featurize(turn1_obs, subset=SUBSET_ALL)
    assert fs.subset_ids == fs.entity_ids
    assert fs.diffs.shape[2] == len(fs.entity_ids)


def test_diff_values(turn1_obs):
    fs = featurize(turn1_obs)
    i, j = 0, 1
    col = fs.entity_ids.index(fs.subset_ids[j])
    assert np.allclose(fs.diffs[:, i, j, :], fs.vectors[:, i, :] - fs.vectors[:, col, :])


def test_unknown_subset_rejected(turn1_obs):
    with pytest.raises(ValueError):
        featurize(turn1_obs, subset="everything")
