"""Sequential collaborative reference game: phase machine, dialogue,
selections, scoring, per-agent observations, and transcript replay.

A game walks a pre-generated scenario through up to five turns. Each turn
animates, opens a dialogue window, and resolves once both agents have
selected; matching selections extend the score (the count of leading
successful turns), a mismatch ends the game. All operations are pure
functions over immutable state so a persisted event log replays to the
exact same state.
"""

from __future__ import annotations

import enum
import json
import time
from dataclasses import dataclass, field, replace
from typing import Dict, Iterable, List, Mapping, Optional, Tuple

from .geometry import Frame, Point, View, is_visible, sample_turn_frames
from .scenario import AGENTS, Scenario, validate_scenario

MAX_TURNS = 5


class Phase(enum.Enum):
    ANIMATING = "animating"
    DIALOGUE = "dialogue"
    RESOLVED = "resolved"
    ENDED = "ended"


class TurnCategory(enum.Enum):
    FIRST = "first"
    LATER_STAY = "later_stay"
    LATER_LEAVE = "later_leave"


class GameError(Exception):
    """Contract violation against the game state machine."""


class PhaseError(GameError):
    pass


class IllegalSelection(GameError):
    pass


@dataclass(frozen=True)
class GameRules:
    max_utterance_length: int = 5000
    max_utterances_per_turn: int = 50
    render_margin: float = 0.15
    allow_selection_overwrite: bool = True


@dataclass(frozen=True)
class Utterance:
    speaker: str
    turn: int
    text: str
    seq: int


@dataclass(frozen=True)
class TurnOutcome:
    turn: int
    selections: Tuple[Tuple[str, str], ...]
    success: bool
    shared_count: int
    category: TurnCategory

    def selection_of(self, agent: str) -> str:
        return dict(self.selections)[agent]


@dataclass(frozen=True)
class Observation:
    """One agent's animation data for one turn. Contains nothing derived
    from the partner's view or selections.

    `paths` carries the Bezier control points of every entity that enters
    the rendering margin during the turn, which is what clients animate;
    `frames` is the canonical 10/15-frame sampling of the same motion.
    """

    agent: str
    turn: int
    frames: Tuple[Frame, ...]
    view: View
    prev_view: View
    prev_placements: Dict[str, Point]
    selectable_ids: frozenset
    attributes: Dict[str, Tuple[float, float]]
    paths: Dict[str, Tuple[Point, Point, Point]]


@dataclass(frozen=True)
class GameState:
    scenario: Scenario
    rules: GameRules
    turn: int
    phase: Phase
    transcript: Tuple[Utterance, ...]
    pending: Tuple[Tuple[str, str], ...]
    outcomes: Tuple[TurnOutcome, ...]
    lst: int
    previous_target: Optional[str]
    next_seq: int

    def pending_of(self, agent: str) -> Optional[str]:
        return dict(self.pending).get(agent)

    @property
    def ended(self) -> bool:
        return self.phase == Phase.ENDED

    @property
    def completed_turns(self) -> int:
        return len(self.outcomes)


def selectable_ids(scenario: Scenario, agent: str, turn: int) -> frozenset:
    return scenario.visible_ids(agent, turn)


def classify_turn(
    scenario: Scenario, k: int, previous_target: Optional[str]
) -> TurnCategory:
    """First for turn 1; otherwise whether the previous target stayed in
    both agents' selectable sets or left at least one view."""
    if not 1 <= k <= scenario.config.max_turns:
        raise GameError(f"turn {k} out of range")
    if k == 1:
        return TurnCategory.FIRST
    if previous_target is None:
        raise GameError("turns after the first need the previous target")
    for agent in AGENTS:
        if previous_target not in selectable_ids(scenario, agent, k):
            return TurnCategory.LATER_LEAVE
    return TurnCategory.LATER_STAY


def new_game(scenario: Scenario, rules: Optional[GameRules] = None) -> GameState:
    report = validate_scenario(scenario)
    if not report.empty:
        raise GameError(f"scenario is invalid:\n{report.summary()}")
    return GameState(
        scenario=scenario,
        rules=rules or GameRules(),
        turn=1,
        phase=Phase.ANIMATING,
        transcript=(),
        pending=(),
        outcomes=(),
        lst=0,
        previous_target=None,
        next_seq=1,
    )


def advance_animation(g: GameState) -> GameState:
    if g.phase != Phase.ANIMATING:
        raise PhaseError(f"cannot finish animation in phase {g.phase.value}")
    return replace(g, phase=Phase.DIALOGUE)


def submit_utterance(g: GameState, agent: str, text: str) -> GameState:
    if g.phase != Phase.DIALOGUE:
        raise PhaseError(f"cannot chat in phase {g.phase.value}")
    if agent not in AGENTS:
        raise GameError(f"unknown agent {agent!r}")
    if not text.strip():
        raise GameError("utterance is empty")
    if len(text) > g.rules.max_utterance_length:
        raise GameError(
            f"utterance length {len(text)} exceeds cap {g.rules.max_utterance_length}"
        )
    this_turn = sum(1 for u in g.transcript if u.turn == g.turn)
    if this_turn >= g.rules.max_utterances_per_turn:
        raise GameError("utterance cap for this turn reached")
    u = Utterance(speaker=agent, turn=g.turn, text=text, seq=g.next_seq)
    return replace(g, transcript=g.transcript + (u,), next_seq=g.next_seq + 1)


def submit_selection(g: GameState, agent: str, entity_id: str) -> GameState:
    if g.phase != Phase.DIALOGUE:
        raise PhaseError(f"cannot select in phase {g.phase.value}")
    if agent not in AGENTS:
        raise GameError(f"unknown agent {agent!r}")
    if entity_id not in selectable_ids(g.scenario, agent, g.turn):
        raise IllegalSelection(
            f"{entity_id!r} is not among agent {agent}'s selectable entities"
        )
    pending = dict(g.pending)
    if agent in pending and not g.rules.allow_selection_overwrite:
        raise GameError("selection already submitted")
    pending[agent] = entity_id
    phase = Phase.RESOLVED if len(pending) == len(AGENTS) else g.phase
    return replace(g, pending=tuple(sorted(pending.items())), phase=phase)


def resolve_turn(g: GameState) -> GameState:
    if g.phase != Phase.RESOLVED:
        raise PhaseError("both agents must have selections pending")
    pending = dict(g.pending)
    if set(pending) != set(AGENTS):
        raise GameError("missing selection")
    picks = [pending[a] for a in AGENTS]
    success = picks[0] == picks[1]
    shared_count = len(g.scenario.shared_sets[g.turn - 1])
    category = classify_turn(g.scenario, g.turn, g.previous_target)
    outcome = TurnOutcome(
        turn=g.turn,
        selections=tuple(sorted(pending.items())),
        success=success,
        shared_count=shared_count,
        category=category,
    )
    outcomes = g.outcomes + (outcome,)
    if not success:
        return replace(g, phase=Phase.ENDED, outcomes=outcomes, pending=())
    lst = g.lst + 1
    if g.turn >= g.scenario.config.max_turns:
        return replace(
            g,
            phase=Phase.ENDED,
            outcomes=outcomes,
            pending=(),
            lst=lst,
            previous_target=picks[0],
        )
    return replace(
        g,
        turn=g.turn + 1,
        phase=Phase.ANIMATING,
        outcomes=outcomes,
        pending=(),
        lst=lst,
        previous_target=picks[0],
    )


def observation(g: GameState, agent: str, turn: int) -> Observation:
    """Frames and the selectable set for `turn` from this agent's
    perspective; history is always re-viewable, the current turn only once
    its animation has been delivered."""
    if agent not in AGENTS:
        raise GameError(f"unknown agent {agent!r}")
    if turn < 1 or turn > g.turn:
        raise GameError(f"turn {turn} is not viewable yet")
    if turn == g.turn and g.phase == Phase.ANIMATING:
        raise GameError(f"turn {turn} animation not delivered yet")

    scenario = g.scenario
    view = scenario.views[agent][turn - 1]
    shift = scenario.shifts[agent][turn - 2] if turn >= 2 else None
    frames = sample_turn_frames(turn, scenario.turns[turn - 1], view, shift)
    margin = g.rules.render_margin

    def within_margin(p: Point, v: View) -> bool:
        return p.distance_to(v.center) <= v.diameter / 2.0 + margin

    trimmed: List[Frame] = []
    seen: set = set()
    for frame in frames:
        placements = {
            eid: p for eid, p in frame.positions.items() if within_margin(p, frame.view)
        }
        seen.update(placements)
        trimmed.append(Frame(frame.view, placements))

    prev_view = scenario.views[agent][turn - 2] if turn >= 2 else view
    prev_positions = scenario.positions_at(turn - 1)
    prev_placements = {
        eid: p for eid, p in prev_positions.items() if within_margin(p, prev_view)
    }
    seen.update(prev_placements)

    attributes = {
        e.id: (e.color, e.size) for e in scenario.entities if e.id in seen
    }
    paths = {
        eid: (tr.p0, tr.p1, tr.p2)
        for eid, tr in scenario.turns[turn - 1].items()
        if eid in seen
    }
    return Observation(
        agent=agent,
        turn=turn,
        frames=tuple(trimmed),
        view=view,
        prev_view=prev_view,
        prev_placements=prev_placements,
        selectable_ids=selectable_ids(scenario, agent, turn),
        attributes=attributes,
        paths=paths,
    )


def observation_payload(obs: Observation) -> dict:
    """JSON-able form of an observation, for wire transport and external
    predictors."""
    return {
        "agent": obs.agent,
        "turn": obs.turn,
        "view": {
            "cx": obs.view.center.x,
            "cy": obs.view.center.y,
            "diameter": obs.view.diameter,
        },
        "prev_view": {
            "cx": obs.prev_view.center.x,
            "cy": obs.prev_view.center.y,
            "diameter": obs.prev_view.diameter,
        },
        "prev_placements": {eid: [p.x, p.y] for eid, p in obs.prev_placements.items()},
        "selectable_ids": sorted(obs.selectable_ids),
        "attributes": {
            eid: {"color": c, "size": s} for eid, (c, s) in obs.attributes.items()
        },
        "paths": {
            eid: {"p0": list(p0), "p1": list(p1), "p2": list(p2)}
            for eid, (p0, p1, p2) in obs.paths.items()
        },
        "frames": [
            {
                "view": {
                    "cx": f.view.center.x,
                    "cy": f.view.center.y,
                    "diameter": f.view.diameter,
                },
                "positions": {eid: [p.x, p.y] for eid, p in f.positions.items()},
            }
            for f in obs.frames
        ],
    }


# ---------------------------------------------------------------------------
# Transcript events: JSON lines, one event per line, replayable.
# ---------------------------------------------------------------------------

EVENT_KINDS = ("shift", "utterance", "selection", "resolution")


def make_event(
    seq: int,
    kind: str,
    turn: int,
    payload: dict,
    agent: Optional[str] = None,
    wallclock: Optional[float] = None,
) -> dict:
    if kind not in EVENT_KINDS:
        raise GameError(f"unknown event kind {kind!r}")
    return {
        "seq": seq,
        "kind": kind,
        "agent": agent,
        "turn": turn,
        "payload": payload,
        "wallclock": time.time() if wallclock is None else wallclock,
    }


def apply_event(g: GameState, event: Mapping) -> GameState:
    kind = event["kind"]
    if kind == "shift":
        return advance_animation(g)
    if kind == "utterance":
        return submit_utterance(g, event["agent"], event["payload"]["text"])
    if kind == "selection":
        return submit_selection(g, event["agent"], event["payload"]["entity_id"])
    if kind == "resolution":
        resolved = resolve_turn(g)
        payload = event.get("payload", {})
        if "success" in payload and payload["success"] != resolved.outcomes[-1].success:
            raise GameError(
                f"replay mismatch at turn {event['turn']}: recorded "
                f"success={payload['success']} but replay resolved "
                f"success={resolved.outcomes[-1].success}"
            )
        return resolved
    raise GameError(f"unknown event kind {kind!r}")


def replay_events(
    scenario: Scenario, events: Iterable[Mapping], rules: Optional[GameRules] = None
) -> GameState:
    g = new_game(scenario, rules)
    for event in events:
        g = apply_event(g, event)
    return g


def outcome_payload(outcome: TurnOutcome, lst: int) -> dict:
    return {
        "selections": dict(outcome.selections),
        "success": outcome.success,
        "lst": lst,
        "shared_count": outcome.shared_count,
        "turn_category": outcome.category.value,
    }
