"""Model-ready featurization of per-turn observations.

Turns an Observation into per-frame entity vectors (color, size, location in
view-centered coordinates scaled so the view radius is 1), per-entity meta
bits, and the pairwise difference tensor a relation module consumes. Purely
deterministic; the numbers here are the semantic reference for any learned
agent plugged into the engine.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, Optional, Tuple

import numpy as np

from .game import Observation
from .geometry import MOVEMENT_FRAMES, SHIFT_FRAMES, is_visible

SUBSET_ALL = "all"
SUBSET_SEL = "sel"

# Meta bit columns.
META_VISIBLE_IN_FRAME = 0
META_VISIBLE_AT_TK = 1
META_VISIBLE_AT_TK_MINUS_1 = 2
META_IS_PREVIOUS_TARGET = 3


@dataclass(frozen=True)
class FeatureSet:
    """Arrays are indexed (frame, entity, ...) over `entity_ids`;
    `diffs[f, i, j]` is vectors[f, i] - vectors[f, subset[j]]."""

    entity_ids: Tuple[str, ...]
    subset_ids: Tuple[str, ...]
    vectors: np.ndarray  # (frames, n, 4) float
    meta: np.ndarray  # (frames, n, 4) int
    diffs: np.ndarray  # (frames, n, m, 4) float

    @property
    def frame_count(self) -> int:
        return self.vectors.shape[0]


def featurize(
    obs: Observation,
    previous_target: Optional[str] = None,
    subset: str = SUBSET_SEL,
) -> FeatureSet:
    """Build the feature arrays for one observation.

    Entities observable at any point of the turn form the row universe.
    Entities not visible in a frame keep their color and size but get the
    default location (0, 0) and a zero visible-in-frame bit. The difference
    tensor runs against either the whole universe or just the selectable
    entities.
    """
    if subset not in (SUBSET_ALL, SUBSET_SEL):
        raise ValueError(f"subset must be '{SUBSET_ALL}' or '{SUBSET_SEL}'")

    frames = obs.frames
    observed = set()
    for frame in frames:
        for eid, p in frame.positions.items():
            if is_visible(p, frame.view):
                observed.add(eid)
    observed |= set(obs.selectable_ids)
    entity_ids = tuple(sorted(observed))
    index = {eid: i for i, eid in enumerate(entity_ids)}
    n = len(entity_ids)
    f_count = len(frames)

    vectors = np.zeros((f_count, n, 4), dtype=float)
    meta = np.zeros((f_count, n, 4), dtype=int)

    visible_prev = {
        eid
        for eid, p in obs.prev_placements.items()
        if is_visible(p, obs.prev_view)
    }

    for i, eid in enumerate(entity_ids):
        color, size = obs.attributes[eid]
        vectors[:, i, 0] = color
        vectors[:, i, 1] = size
        meta[:, i, META_VISIBLE_AT_TK] = int(eid in obs.selectable_ids)
        meta[:, i, META_VISIBLE_AT_TK_MINUS_1] = int(eid in visible_prev)
        meta[:, i, META_IS_PREVIOUS_TARGET] = int(eid == previous_target)

    for f, frame in enumerate(frames):
        scale = frame.view.diameter / 2.0
        cx, cy = frame.view.center
        for eid, p in frame.positions.items():
            i = index.get(eid)
            if i is None:
                continue
            if is_visible(p, frame.view):
                vectors[f, i, 2] = (p.x - cx) / scale
                vectors[f, i, 3] = (p.y - cy) / scale
                meta[f, i, META_VISIBLE_IN_FRAME] = 1

    subset_ids = (
        entity_ids if subset == SUBSET_ALL else tuple(sorted(obs.selectable_ids))
    )
    cols = [index[eid] for eid in subset_ids]
    diffs = vectors[:, :, None, :] - vectors[:, None, cols, :]

    return FeatureSet(
        entity_ids=entity_ids,
        subset_ids=subset_ids,
        vectors=vectors,
        meta=meta,
        diffs=diffs,
    )


def expected_frame_count(turn: int) -> int:
    return MOVEMENT_FRAMES if turn == 1 else SHIFT_FRAMES + MOVEMENT_FRAMES
