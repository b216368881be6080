"""Selfplay runner and evaluation harnesses.

One game = two policies driven through a scenario in a fixed exchange
order (seat A speaks, seat B replies, both select). The same loop backs the
live service's bot seats, so in-process results and served games agree for
identical seeds.
"""

from __future__ import annotations

import json
import logging
import subprocess
from dataclasses import dataclass, field
from typing import Callable, Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

from .agents import AgentPolicy, make_policy
from .game import (
    GameRules,
    GameState,
    IllegalSelection,
    TurnCategory,
    advance_animation,
    classify_turn,
    make_event,
    new_game,
    observation,
    observation_payload,
    outcome_payload,
    resolve_turn,
    submit_selection,
    submit_utterance,
)
from .rng import substream
from .scenario import AGENTS, Scenario

logger = logging.getLogger(__name__)

PolicyFactory = Callable[[int], AgentPolicy]


@dataclass
class GameRecord:
    scenario: Scenario
    events: List[dict]
    final: Optional[GameState]
    protocol_violation: Optional[str] = None

    @property
    def lst(self) -> int:
        return self.final.lst if self.final else 0


@dataclass
class SelfplayReport:
    """Success tallies by turn category and shared count, plus average score."""

    games: int = 0
    protocol_violations: int = 0
    lst_values: List[int] = field(default_factory=list)
    cells: Dict[Tuple[str, int], List[int]] = field(default_factory=dict)

    def record_turn(self, category: TurnCategory, shared: int, success: bool) -> None:
        cell = self.cells.setdefault((category.value, shared), [0, 0])
        cell[0] += int(success)
        cell[1] += 1

    @property
    def avg_lst(self) -> float:
        return sum(self.lst_values) / len(self.lst_values) if self.lst_values else 0.0

    def success_rate(self, category: str, shared: int) -> Optional[float]:
        cell = self.cells.get((category, shared))
        if not cell or cell[1] == 0:
            return None
        return cell[0] / cell[1]

    def as_dict(self) -> dict:
        rows = {}
        for category in ("first", "later_stay", "later_leave"):
            row = {}
            for shared in (4, 5, 6):
                cell = self.cells.get((category, shared))
                row[str(shared)] = (
                    {"successes": cell[0], "turns": cell[1], "rate": cell[0] / cell[1]}
                    if cell and cell[1]
                    else None
                )
            rows[category] = row
        return {
            "games": self.games,
            "protocol_violations": self.protocol_violations,
            "avg_lst": self.avg_lst,
            "success_by_category_and_shared": rows,
        }


def play_game(
    policy_a: AgentPolicy,
    policy_b: AgentPolicy,
    scenario: Scenario,
    rules: Optional[GameRules] = None,
    wallclock: float = 0.0,
    stop_after_turn: Optional[int] = None,
) -> GameRecord:
    """Drive one full game; utterances flow A then B each turn. Returns the
    transcript events alongside the final state; an illegal selection from a
    policy aborts the game and flags a protocol violation. `stop_after_turn`
    cuts the game off early for single-turn studies."""
    policies = {"A": policy_a, "B": policy_b}
    for seat, policy in policies.items():
        policy.start_game(seat)
    g = new_game(scenario, rules)
    events: List[dict] = []
    seq = 0

    def emit(kind: str, turn: int, payload: dict, agent: Optional[str] = None) -> None:
        nonlocal seq
        seq += 1
        events.append(make_event(seq, kind, turn, payload, agent, wallclock=wallclock))

    try:
        while not g.ended:
            g = advance_animation(g)
            emit("shift", g.turn, {})
            views = {a: observation(g, a, g.turn) for a in AGENTS}
            for speaker in AGENTS:
                partner = "B" if speaker == "A" else "A"
                for text in policies[speaker].on_observation(views[speaker]):
                    g = submit_utterance(g, speaker, text)
                    emit("utterance", g.turn, {"text": text}, speaker)
                    policies[partner].on_partner_utterance(text)
            for agent in AGENTS:
                pick = policies[agent].decide_selection()
                g = submit_selection(g, agent, pick)
                emit("selection", g.turn, {"entity_id": pick}, agent)
            g = resolve_turn(g)
            outcome = g.outcomes[-1]
            emit("resolution", outcome.turn, outcome_payload(outcome, g.lst))
            for agent in AGENTS:
                policies[agent].on_turn_result(
                    outcome.success, outcome.selection_of(agent)
                )
            if stop_after_turn is not None and outcome.turn >= stop_after_turn:
                break
    except IllegalSelection as exc:
        logger.warning("protocol violation: %s", exc)
        return GameRecord(scenario, events, None, protocol_violation=str(exc))
    return GameRecord(scenario, events, g)


def run_selfplay(
    policy_a: PolicyFactory | str,
    policy_b: PolicyFactory | str,
    scenarios: Sequence[Scenario],
    seeds: Sequence[int],
    rules: Optional[GameRules] = None,
    max_turn: Optional[int] = None,
) -> SelfplayReport:
    """Play len(seeds) games, cycling scenarios, aggregating success by turn
    category and shared count. Deterministic for fixed inputs. `max_turn`
    truncates games early (useful for first-turn studies)."""
    if not scenarios:
        raise ValueError("need at least one scenario")
    factory_a = _as_factory(policy_a)
    factory_b = _as_factory(policy_b)
    report = SelfplayReport()
    for i, seed in enumerate(seeds):
        scenario = scenarios[i % len(scenarios)]
        pa = factory_a(int(substream(seed, 0).integers(1 << 32)))
        pb = factory_b(int(substream(seed, 1).integers(1 << 32)))
        record = play_game(pa, pb, scenario, rules, stop_after_turn=max_turn)
        report.games += 1
        if record.protocol_violation:
            report.protocol_violations += 1
            report.lst_values.append(0)
            continue
        assert record.final is not None
        outcomes = record.final.outcomes
        if max_turn is not None:
            outcomes = tuple(o for o in outcomes if o.turn <= max_turn)
        for outcome in outcomes:
            report.record_turn(outcome.category, outcome.shared_count, outcome.success)
        report.lst_values.append(
            record.final.lst if max_turn is None else min(record.final.lst, max_turn)
        )
    return report


def _as_factory(policy: PolicyFactory | str) -> PolicyFactory:
    if callable(policy):
        return policy
    return lambda seed: make_policy(policy, seed)


# ---------------------------------------------------------------------------
# Target selection evaluation
# ---------------------------------------------------------------------------

Predictor = Callable[[dict], str]


class SubprocessPredictor:
    """Adapter for external predictors: JSON request on stdin, one JSON
    object {"entity_id": ...} on stdout."""

    def __init__(self, command: Sequence[str], timeout: float = 30.0):
        self.command = list(command)
        self.timeout = timeout

    def __call__(self, payload: dict) -> str:
        proc = subprocess.run(
            self.command,
            input=json.dumps(payload).encode(),
            stdout=subprocess.PIPE,
            timeout=self.timeout,
            check=True,
        )
        return json.loads(proc.stdout.decode())["entity_id"]


@dataclass
class TargetSelectionResult:
    per_category: Dict[str, Tuple[int, int]]

    def accuracy(self, category: str) -> Optional[float]:
        hit, total = self.per_category.get(category, (0, 0))
        return hit / total if total else None

    def as_dict(self) -> dict:
        return {
            cat: {"correct": hit, "total": total, "accuracy": hit / total if total else None}
            for cat, (hit, total) in self.per_category.items()
        }


def target_selection_eval(
    games: Iterable[Tuple[Scenario, Sequence[Mapping]]],
    predictor: Predictor | Sequence[str],
    rules: Optional[GameRules] = None,
) -> TargetSelectionResult:
    """Replay recorded games and ask the predictor, per (agent, turn), which
    entity that agent selected, given only that agent's observation history
    and the transcript up to the resolution. Accuracy is grouped by turn
    category; illegal predictions count as wrong."""
    if not callable(predictor):
        predictor = SubprocessPredictor(predictor)
    per_category: Dict[str, List[int]] = {}

    for scenario, events in games:
        g = new_game(scenario, rules)
        transcript: List[dict] = []
        obs_history: Dict[str, List[dict]] = {a: [] for a in AGENTS}
        previous_target: Optional[str] = None
        for event in events:
            kind = event["kind"]
            if kind == "shift":
                g = advance_animation(g)
                for a in AGENTS:
                    obs_history[a].append(
                        observation_payload(observation(g, a, g.turn))
                    )
            elif kind == "utterance":
                g = submit_utterance(g, event["agent"], event["payload"]["text"])
                transcript.append(
                    {
                        "speaker": event["agent"],
                        "turn": event["turn"],
                        "text": event["payload"]["text"],
                    }
                )
            elif kind == "selection":
                g = submit_selection(g, event["agent"], event["payload"]["entity_id"])
            elif kind == "resolution":
                pending = dict(g.pending)
                for agent in AGENTS:
                    payload = {
                        "agent": agent,
                        "turn": g.turn,
                        "selectable_ids": sorted(
                            observation(g, agent, g.turn).selectable_ids
                        ),
                        "observations": obs_history[agent],
                        "transcript": list(transcript),
                        "previous_target": previous_target,
                    }
                    category = classify_turn(scenario, g.turn, previous_target).value
                    truth = pending[agent]
                    try:
                        guess = predictor(payload)
                    except Exception as exc:
                        logger.warning("predictor error: %s", exc)
                        guess = ""
                    if guess not in payload["selectable_ids"]:
                        logger.info(
                            "illegal prediction %r for agent %s turn %d",
                            guess,
                            agent,
                            g.turn,
                        )
                        correct = False
                    else:
                        correct = guess == truth
                    cell = per_category.setdefault(category, [0, 0])
                    cell[0] += int(correct)
                    cell[1] += 1
                g = resolve_turn(g)
                outcome = g.outcomes[-1]
                previous_target = (
                    outcome.selection_of("A") if outcome.success else None
                )
    return TargetSelectionResult(
        per_category={k: (v[0], v[1]) for k, v in per_category.items()}
    )
