"""Scripted players: a silent uniform-random baseline and a geometric
template-talker.

The template agent grounds a small closed grammar in observation geometry:
it describes its most distinctive selectable dot (size and shade terciles,
movement octant, speed tercile, view cell), the partner scores its own
candidates against the parsed description, and both re-select the previous
target whenever it survives in view.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from typing import Callable, Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from .game import Observation
from .geometry import Point, Trajectory, trajectory_length
from .rng import substream

SIZE_TERMS = ("small", "medium", "large")
SHADE_TERMS = ("dark", "gray", "light")  # low color value renders dark
SPEED_TERMS = ("slow", "steady", "fast")
DIRECTION_TERMS = (
    "east",
    "northeast",
    "north",
    "northwest",
    "west",
    "southwest",
    "south",
    "southeast",
)
POSITION_TERMS = (
    "top left",
    "top",
    "top right",
    "left",
    "center",
    "right",
    "bottom left",
    "bottom",
    "bottom right",
)
PREV_PHRASES = {
    "same": "the same one as before",
    "near_prev": "near our previous pick",
    "prev_gone": "our previous one is gone",
}


@dataclass(frozen=True)
class Descriptor:
    size_term: str
    shade_term: str
    direction_term: str
    speed_term: str
    position_term: str
    prev_relation: Optional[str] = None

    def terms(self) -> Tuple[str, str, str, str, str]:
        return (
            self.size_term,
            self.shade_term,
            self.direction_term,
            self.speed_term,
            self.position_term,
        )


def agreement(a: Descriptor, b: Descriptor) -> int:
    """Number of matching core terms (0..5); prev_relation not counted."""
    return sum(x == y for x, y in zip(a.terms(), b.terms()))


# ---------------------------------------------------------------------------
# Template grammar: render and parse are inverse bijections on the domain.
# ---------------------------------------------------------------------------

def render(d: Descriptor) -> str:
    text = (
        f"a {d.size_term} {d.shade_term} dot moving {d.direction_term} "
        f"at {d.speed_term} pace, ending {d.position_term}"
    )
    if d.prev_relation is not None:
        text += f"; {PREV_PHRASES[d.prev_relation]}"
    return text


def _alts(terms: Iterable[str]) -> str:
    return "|".join(sorted(terms, key=len, reverse=True))


_GRAMMAR = re.compile(
    rf"^a ({_alts(SIZE_TERMS)}) ({_alts(SHADE_TERMS)}) dot"
    rf" moving ({_alts(DIRECTION_TERMS)}) at ({_alts(SPEED_TERMS)}) pace,"
    rf" ending ({_alts(POSITION_TERMS)})"
    rf"(?:; ({_alts(PREV_PHRASES.values())}))?$"
)


def parse(text: str) -> Optional[Descriptor]:
    """Parse a grammar utterance; None when the text is outside the grammar."""
    m = _GRAMMAR.match(text.strip())
    if not m:
        return None
    prev = None
    if m.group(6):
        prev = next(k for k, v in PREV_PHRASES.items() if v == m.group(6))
    return Descriptor(
        size_term=m.group(1),
        shade_term=m.group(2),
        direction_term=m.group(3),
        speed_term=m.group(4),
        position_term=m.group(5),
        prev_relation=prev,
    )


def _tercile(rank: int, count: int) -> int:
    return min(2, rank * 3 // count)


def _octant(dx: float, dy: float) -> str:
    angle = math.atan2(dy, dx) % (2.0 * math.pi)
    return DIRECTION_TERMS[int((angle + math.pi / 8) // (math.pi / 4)) % 8]


def _view_cell(p: Point, obs: Observation) -> str:
    radius = obs.view.diameter / 2.0
    x = (p.x - obs.view.center.x) / radius
    y = (p.y - obs.view.center.y) / radius
    col = 0 if x < -1 / 3 else (2 if x > 1 / 3 else 1)
    row = 0 if y > 1 / 3 else (2 if y < -1 / 3 else 1)
    return POSITION_TERMS[row * 3 + col]


def describe(
    entity_id: str,
    obs: Observation,
    distractors: Optional[Iterable[str]] = None,
    prev_relation: Optional[str] = None,
) -> Descriptor:
    """Descriptor of a selectable entity relative to its distractors.

    Size, shade and speed terms are terciles within the comparison group
    (language in this game is relative, not absolute); direction is the
    octant of the net displacement; position is the view cell of the final
    location.
    """
    if entity_id not in obs.selectable_ids:
        raise ValueError(f"{entity_id!r} is not selectable in this observation")
    if distractors is not None:
        group = sorted(set(distractors) | {entity_id})
    else:
        group = sorted(obs.selectable_ids)

    def rank_term(key: Callable[[str], float], terms: Tuple[str, str, str]) -> str:
        ordered = sorted(group, key=lambda e: (key(e), e))
        return terms[_tercile(ordered.index(entity_id), len(ordered))]

    def length_of(eid: str) -> float:
        p0, p1, p2 = obs.paths[eid]
        return trajectory_length(
            Trajectory(p0, p1, p2, 0.0, 0.0, 0.0, 0.0)
        )

    p0, _, p2 = obs.paths[entity_id]
    return Descriptor(
        size_term=rank_term(lambda e: obs.attributes[e][1], SIZE_TERMS),
        shade_term=rank_term(lambda e: obs.attributes[e][0], SHADE_TERMS),
        direction_term=_octant(p2.x - p0.x, p2.y - p0.y),
        speed_term=rank_term(length_of, SPEED_TERMS),
        position_term=_view_cell(p2, obs),
        prev_relation=prev_relation,
    )


def distinctiveness(entity_id: str, obs: Observation) -> Tuple[int, int]:
    """(min, total) descriptor distance of an entity to its 6 distractors."""
    mine = describe(entity_id, obs)
    distances = []
    for other in sorted(obs.selectable_ids):
        if other == entity_id:
            continue
        d = 5 - agreement(mine, describe(other, obs))
        distances.append(d)
    return (min(distances), sum(distances))


# ---------------------------------------------------------------------------
# Policies
# ---------------------------------------------------------------------------

class AgentPolicy:
    """Per-game player. The instance is the memory: fresh instance per game."""

    name = "base"
    #: whether the policy waits for a partner utterance before speaking
    responds_only = False

    def start_game(self, seat: str) -> None:
        self.seat = seat
        self.previous_target: Optional[str] = None

    def on_observation(self, obs: Observation) -> List[str]:
        raise NotImplementedError

    def on_partner_utterance(self, text: str) -> None:
        pass

    def decide_selection(self) -> str:
        raise NotImplementedError

    def on_turn_result(self, success: bool, own_selection: str) -> None:
        self.previous_target = own_selection if success else None


class RandomAgent(AgentPolicy):
    """Silent chance baseline: uniform over the 7 selectable ids."""

    name = "random"

    def __init__(self, seed: int = 0):
        self.rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))

    def on_observation(self, obs: Observation) -> List[str]:
        ids = sorted(obs.selectable_ids)
        self._choice = ids[int(self.rng.integers(len(ids)))]
        return []

    def decide_selection(self) -> str:
        return self._choice


class TemplateAgent(AgentPolicy):
    """Deterministic proposer/responder over the template grammar.

    Seat A proposes its most distinctive candidate; seat B matches the
    parsed descriptor against its own candidates and confirms or counters.
    Whenever the previous target survives in view, it is re-proposed and
    re-selected outright.
    """

    name = "template"
    responds_only = True  # as seat B, speak after hearing the proposal

    def __init__(self, agree_threshold: int = 3, confirm_threshold: int = 2):
        self.agree_threshold = agree_threshold
        self.confirm_threshold = confirm_threshold

    def start_game(self, seat: str) -> None:
        super().start_game(seat)
        self.responds_only = seat != "A"
        self.heard: List[str] = []
        self.planned: Optional[str] = None
        self.my_descriptor: Optional[Descriptor] = None

    def _most_distinctive(self) -> str:
        ids = sorted(self.obs.selectable_ids)
        return max(ids, key=lambda e: (distinctiveness(e, self.obs), _neg_id(e)))

    def _best_match(self, target: Descriptor) -> Tuple[str, int]:
        ids = sorted(self.obs.selectable_ids)
        best = max(
            ids, key=lambda e: (agreement(describe(e, self.obs), target), _neg_id(e))
        )
        return best, agreement(describe(best, self.obs), target)

    def on_observation(self, obs: Observation) -> List[str]:
        self.obs = obs
        retained = (
            self.previous_target is not None
            and self.previous_target in obs.selectable_ids
        )
        if self.seat == "A" or not self.heard:
            # Propose: retention first, else the most distinctive candidate.
            if retained:
                self.planned = self.previous_target
                d = describe(self.planned, obs, prev_relation="same")
            else:
                self.planned = self._most_distinctive()
                prev = "prev_gone" if self.previous_target is not None else None
                d = describe(self.planned, obs, prev_relation=prev)
            self.my_descriptor = d
            return [render(d)]
        # Responder: follow a retained target, match a parseable proposal,
        # or counter with our own proposal when nothing usable arrived.
        parsed = next(
            (d for d in (parse(t) for t in self.heard) if d is not None), None
        )
        if parsed is not None and parsed.prev_relation == "same" and retained:
            self.planned = self.previous_target
            return [render(describe(self.planned, obs, prev_relation="same"))]
        if parsed is None:
            self.planned = self._most_distinctive()
            return [render(describe(self.planned, obs))]
        best, score = self._best_match(parsed)
        if score >= self.agree_threshold:
            self.planned = best
            return [render(describe(best, obs))]
        self.planned = self._most_distinctive()
        return [render(describe(self.planned, obs))]

    def on_partner_utterance(self, text: str) -> None:
        self.heard.append(text)
        if self.seat != "A" or self.planned is None:
            return
        # As the proposer, decide whether the reply confirms or counters.
        parsed = parse(text)
        if parsed is None or self.my_descriptor is None:
            return
        if parsed.prev_relation == "same":
            return  # partner retained with us
        if agreement(parsed, self.my_descriptor) >= self.confirm_threshold:
            return  # close enough: the reply describes our proposal
        retained = (
            self.previous_target is not None
            and self.previous_target in self.obs.selectable_ids
        )
        if retained:
            return  # never abandon a surviving previous target
        best, score = self._best_match(parsed)
        if score >= self.agree_threshold:
            self.planned = best

    def on_turn_result(self, success: bool, own_selection: str) -> None:
        super().on_turn_result(success, own_selection)
        self.heard = []
        self.planned = None
        self.my_descriptor = None

    def decide_selection(self) -> str:
        assert self.planned is not None
        return self.planned


def _neg_id(eid: str) -> Tuple[int, ...]:
    # Ties break toward the smallest id under max().
    return tuple(-ord(c) for c in eid)


POLICY_REGISTRY: Dict[str, Callable[[int], AgentPolicy]] = {
    "random": lambda seed: RandomAgent(seed),
    "template": lambda seed: TemplateAgent(),
}


def make_policy(name: str, seed: int = 0) -> AgentPolicy:
    try:
        factory = POLICY_REGISTRY[name]
    except KeyError:
        raise ValueError(
            f"unknown policy {name!r}; registered: {sorted(POLICY_REGISTRY)}"
        ) from None
    return factory(seed)
