"""Transport-free session engine for the live game service.

A SessionCore owns one game between two seats (humans over a wire, scripted
bots, or both), applies every incoming message in one total order, emits
per-seat outgoing messages, and appends transcript events as they happen.
The network layer is a thin adapter around `handle`; scripted seats run
synchronously inside it, so bot-bot sessions equal the in-process selfplay
runner move for move.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

from .agents import AgentPolicy, make_policy
from .game import (
    GameError,
    GameRules,
    GameState,
    IllegalSelection,
    Phase,
    PhaseError,
    advance_animation,
    make_event,
    new_game,
    observation,
    outcome_payload,
    resolve_turn,
    submit_selection,
    submit_utterance,
)
from .scenario import AGENTS, Scenario, scenario_to_doc

logger = logging.getLogger(__name__)

PROTOCOL_VERSION = 1

CLIENT_TYPES = ("join", "utterance", "select", "replay_request", "leave")

REWARD_PER_TURN = 0.25
BONUS_PER_LST = 0.05


@dataclass
class Outgoing:
    seat: str
    message: dict


@dataclass
class Seat:
    kind: str  # "human" or "bot:<policy>"
    policy: Optional[AgentPolicy] = None
    last_seq_in: int = 0
    seen_select_seqs: set = field(default_factory=set)
    next_seq_out: int = 1
    spoke_this_turn: bool = False
    selected_this_turn: bool = False
    heard_this_turn: int = 0
    partner_acted: bool = False  # partner selected; a waiting bot may respond

    def may_speak(self) -> bool:
        if self.policy is None or self.spoke_this_turn:
            return False
        if getattr(self.policy, "responds_only", False):
            return self.heard_this_turn > 0 or self.partner_acted
        return True

    def done_speaking(self) -> bool:
        if self.policy is None or self.spoke_this_turn:
            return True
        return not self.may_speak()


class SessionCore:
    """One session: seat binding, message handling, bot driving,
    transcript accumulation."""

    def __init__(
        self,
        session_id: str,
        scenario: Scenario,
        rules: Optional[GameRules] = None,
        wallclock=time.time,
    ):
        self.session_id = session_id
        self.scenario = scenario
        self.rules = rules or GameRules()
        self.wallclock = wallclock
        self.seats: Dict[str, Seat] = {}
        self.game: Optional[GameState] = None
        self.status = "waiting"
        self.events: List[dict] = []
        self.new_records: List[dict] = []  # drained by the persistence layer
        # Written to the transcript when the game starts (seats then known).
        self.header = {
            "kind": "header",
            "payload": {
                "session_id": session_id,
                "scenario": scenario_to_doc(scenario),
                "seats": {},
            },
        }

    # -- persistence hooks ---------------------------------------------------

    def _record(self, record: dict) -> None:
        if record.get("kind") in ("shift", "utterance", "selection", "resolution"):
            self.events.append(record)
        self.new_records.append(record)

    def drain_records(self) -> List[dict]:
        out, self.new_records = self.new_records, []
        return out

    def _emit_event(self, kind: str, turn: int, payload: dict, agent=None) -> None:
        seq = len(self.events) + 1
        self._record(
            make_event(seq, kind, turn, payload, agent, wallclock=self.wallclock())
        )

    # -- seat management -----------------------------------------------------

    def free_seats(self) -> List[str]:
        return [a for a in AGENTS if a not in self.seats]

    def occupy(self, seat: str, kind: str, policy: Optional[AgentPolicy] = None) -> List[Outgoing]:
        """Bind a seat. When the second seat arrives the game starts and
        both seats receive the first turn."""
        if seat not in AGENTS:
            raise GameError(f"unknown seat {seat!r}")
        if seat in self.seats:
            raise GameError(f"seat {seat} already occupied")
        self.seats[seat] = Seat(kind=kind, policy=policy)
        if policy is not None:
            policy.start_game(seat)
        self.header["payload"]["seats"][seat] = kind
        out: List[Outgoing] = []
        if not self.free_seats():
            out.extend(self._start_game())
        return out

    def pair_with_bot(self, seat: str, policy_name: str, seed: int = 0) -> List[Outgoing]:
        policy = make_policy(policy_name, seed)
        return self.occupy(seat, f"bot:{policy_name}", policy)

    # -- game flow -----------------------------------------------------------

    def _start_game(self) -> List[Outgoing]:
        self._record(self.header)
        self.game = new_game(self.scenario, self.rules)
        self.status = "active"
        out = [self._session_state(a) for a in AGENTS]
        out.extend(self._begin_turn())
        return out

    def _begin_turn(self) -> List[Outgoing]:
        assert self.game is not None
        self.game = advance_animation(self.game)
        self._emit_event("shift", self.game.turn, {})
        for seat in self.seats.values():
            seat.spoke_this_turn = False
            seat.selected_this_turn = False
            seat.heard_this_turn = 0
            seat.partner_acted = False
        out = [
            self._message(a, "turn_start", self._turn_payload(a, self.game.turn))
            for a in AGENTS
        ]
        out.extend(self._drive_bots())
        return out

    def _turn_payload(self, agent: str, turn: int, replay: bool = False) -> dict:
        assert self.game is not None
        obs = observation(self.game, agent, turn)
        shift = (
            self.scenario.shifts[agent][turn - 2] if turn >= 2 else None
        )
        return {
            "turn": turn,
            "replay": replay,
            "view": {
                "cx": obs.view.center.x,
                "cy": obs.view.center.y,
                "diameter": obs.view.diameter,
            },
            "shift": {"dx": shift[0], "dy": shift[1]} if shift else None,
            "entities": [
                {
                    "id": eid,
                    "color": obs.attributes[eid][0],
                    "size": obs.attributes[eid][1],
                    "path": {
                        "p0": list(obs.paths[eid][0]),
                        "p1": list(obs.paths[eid][1]),
                        "p2": list(obs.paths[eid][2]),
                    },
                }
                for eid in sorted(obs.paths)
            ],
            "prev_placements": {
                eid: list(p) for eid, p in sorted(obs.prev_placements.items())
            },
            "selectable_ids": sorted(obs.selectable_ids),
        }

    def _session_state(self, agent: str) -> Outgoing:
        payload = {
            "session_id": self.session_id,
            "seat": agent,
            "status": self.status,
            "turn": self.game.turn if self.game else None,
            "phase": self.game.phase.value if self.game else None,
            "lst": self.game.lst if self.game else 0,
        }
        return self._message(agent, "session_state", payload)

    def _message(self, seat: str, msg_type: str, payload: dict) -> Outgoing:
        seat_state = self.seats.get(seat)
        seq = seat_state.next_seq_out if seat_state else 0
        if seat_state:
            seat_state.next_seq_out += 1
        return Outgoing(
            seat, {"v": PROTOCOL_VERSION, "type": msg_type, "seq": seq, "payload": payload}
        )

    def _error(self, seat: str, code: str, message: str) -> Outgoing:
        return self._message(seat, "error", {"code": code, "message": message})

    # -- incoming messages ----------------------------------------------------

    def handle(self, seat: str, msg: dict) -> List[Outgoing]:
        """Apply one client message; returns everything to deliver. Unknown
        types and contract violations produce error replies, never state
        changes or disconnects."""
        if seat not in self.seats:
            return [Outgoing(seat, {"v": PROTOCOL_VERSION, "type": "error", "seq": 0,
                                    "payload": {"code": "no_seat", "message": "seat not joined"}})]
        seat_state = self.seats[seat]
        if not isinstance(msg, dict):
            return [self._error(seat, "bad_message", "message must be a JSON object")]
        msg_type = msg.get("type")
        seq = msg.get("seq")
        if not isinstance(seq, int):
            return [self._error(seat, "bad_seq", "missing integer seq")]
        if seq <= seat_state.last_seq_in:
            if msg_type == "select" and seq in seat_state.seen_select_seqs:
                return []  # duplicate delivery, idempotent
            return [self._error(seat, "bad_seq", f"seq {seq} not increasing")]
        seat_state.last_seq_in = seq
        if msg_type == "select":
            seat_state.seen_select_seqs.add(seq)

        if msg_type not in CLIENT_TYPES:
            return [self._error(seat, "unknown_type", f"unknown type {msg_type!r}")]
        payload = msg.get("payload") or {}

        if msg_type == "join":
            return [self._session_state(seat)]
        if msg_type == "leave":
            return self._abandon(by_seat=seat)
        if self.game is None or self.status != "active":
            return [self._error(seat, "not_active", "session is not active")]

        if msg_type == "utterance":
            return self._handle_utterance(seat, payload)
        if msg_type == "select":
            return self._handle_select(seat, payload)
        if msg_type == "replay_request":
            return self._handle_replay(seat, payload)
        return [self._error(seat, "unknown_type", f"unknown type {msg_type!r}")]

    def _handle_utterance(self, seat: str, payload: dict) -> List[Outgoing]:
        text = payload.get("text", "")
        try:
            self.game = submit_utterance(self.game, seat, text)
        except GameError as exc:
            return [self._error(seat, "bad_utterance", str(exc))]
        self._emit_event("utterance", self.game.turn, {"text": text}, seat)
        out = [
            self._message(a, "utterance", {"seat": seat, "text": text, "turn": self.game.turn})
            for a in AGENTS
        ]
        partner = "B" if seat == "A" else "A"
        partner_seat = self.seats[partner]
        partner_seat.heard_this_turn += 1
        if partner_seat.policy is not None:
            partner_seat.policy.on_partner_utterance(text)
        out.extend(self._drive_bots())
        return out

    def _handle_select(self, seat: str, payload: dict) -> List[Outgoing]:
        entity_id = payload.get("entity_id")
        try:
            self.game = submit_selection(self.game, seat, entity_id)
        except IllegalSelection as exc:
            return [self._error(seat, "illegal_selection", str(exc))]
        except (PhaseError, GameError) as exc:
            return [self._error(seat, "bad_selection", str(exc))]
        self.seats[seat].selected_this_turn = True
        partner = "B" if seat == "A" else "A"
        self.seats[partner].partner_acted = True
        self._emit_event("selection", self.game.turn, {"entity_id": entity_id}, seat)
        out = [self._message(seat, "selection_ack", {"entity_id": entity_id})]
        out.extend(self._maybe_resolve())
        if self.status == "active" and self.game is not None and not self.game.ended:
            out.extend(self._drive_bots())
        return out

    def _handle_replay(self, seat: str, payload: dict) -> List[Outgoing]:
        turn = payload.get("turn")
        if not isinstance(turn, int) or turn < 1 or turn > (self.game.turn if self.game else 0):
            return [self._error(seat, "bad_turn", f"turn {turn!r} not replayable")]
        if turn == self.game.turn and self.game.phase == Phase.ANIMATING:
            return [self._error(seat, "bad_turn", f"turn {turn} not delivered yet")]
        return [self._message(seat, "turn_start", self._turn_payload(seat, turn, replay=True))]

    # -- resolution and bots ---------------------------------------------------

    def _maybe_resolve(self) -> List[Outgoing]:
        assert self.game is not None
        if self.game.phase != Phase.RESOLVED:
            return []
        self.game = resolve_turn(self.game)
        outcome = self.game.outcomes[-1]
        self._emit_event(
            "resolution", outcome.turn, outcome_payload(outcome, self.game.lst)
        )
        out = [
            self._message(
                a,
                "turn_result",
                {"turn": outcome.turn, "success": outcome.success, "lst": self.game.lst},
            )
            for a in AGENTS
        ]
        for a in AGENTS:
            policy = self.seats[a].policy
            if policy is not None:
                policy.on_turn_result(outcome.success, outcome.selection_of(a))
        if self.game.ended:
            out.extend(self._finish())
        else:
            out.extend(self._begin_turn())
        return out

    def _finish(self) -> List[Outgoing]:
        assert self.game is not None
        self.status = "finished"
        lst = self.game.lst
        reward = {
            "per_turn": REWARD_PER_TURN,
            "turn_total": round(REWARD_PER_TURN * lst, 10),
            "bonus": round(BONUS_PER_LST * lst, 10),
            "total": round((REWARD_PER_TURN + BONUS_PER_LST) * lst, 10),
        }
        self._record(
            {
                "kind": "footer",
                "payload": {
                    "lst": lst,
                    "completed_turns": self.game.completed_turns,
                    "status": self.status,
                    "reward": reward,
                },
            }
        )
        return [self._message(a, "game_over", {"lst": lst, "reward": reward}) for a in AGENTS]

    def _abandon(self, by_seat: Optional[str] = None) -> List[Outgoing]:
        if self.status in ("finished", "abandoned"):
            return []
        self.status = "abandoned"
        self._record(
            {
                "kind": "footer",
                "payload": {
                    "lst": self.game.lst if self.game else 0,
                    "completed_turns": self.game.completed_turns if self.game else 0,
                    "status": "abandoned",
                    "left_by": by_seat,
                },
            }
        )
        return [self._session_state(a) for a in AGENTS if a in self.seats]

    def _drive_bots(self) -> List[Outgoing]:
        """Let scripted seats act whenever their conditions are met: seat
        order preserved, speakers before selectors, so bot-bot sessions
        reproduce the selfplay runner exactly."""
        assert self.game is not None
        out: List[Outgoing] = []
        progressed = True
        while progressed and self.status == "active" and not self.game.ended:
            progressed = False
            if self.game.phase != Phase.DIALOGUE:
                break
            for agent in AGENTS:
                seat_state = self.seats[agent]
                if not seat_state.may_speak():
                    continue
                policy = seat_state.policy
                seat_state.spoke_this_turn = True
                obs = observation(self.game, agent, self.game.turn)
                for text in policy.on_observation(obs):
                    self.game = submit_utterance(self.game, agent, text)
                    self._emit_event("utterance", self.game.turn, {"text": text}, agent)
                    out.extend(
                        self._message(a, "utterance", {"seat": agent, "text": text, "turn": self.game.turn})
                        for a in AGENTS
                    )
                    partner = "B" if agent == "A" else "A"
                    partner_state = self.seats[partner]
                    partner_state.heard_this_turn += 1
                    if partner_state.policy is not None:
                        partner_state.policy.on_partner_utterance(text)
                progressed = True
            # Selection pass once no bot still has something to say.
            if all(s.done_speaking() for s in self.seats.values()):
                for agent in AGENTS:
                    seat_state = self.seats[agent]
                    policy = seat_state.policy
                    if (
                        policy is None
                        or seat_state.selected_this_turn
                        or not seat_state.spoke_this_turn
                    ):
                        continue
                    if self.game.phase != Phase.DIALOGUE:
                        break
                    pick = policy.decide_selection()
                    self.game = submit_selection(self.game, agent, pick)
                    seat_state.selected_this_turn = True
                    partner = "B" if agent == "A" else "A"
                    self.seats[partner].partner_acted = True
                    self._emit_event(
                        "selection", self.game.turn, {"entity_id": pick}, agent
                    )
                    out.append(self._message(agent, "selection_ack", {"entity_id": pick}))
                    progressed = True
                resolved = self._maybe_resolve()
                if resolved:
                    out.extend(resolved)
                    break
        return out


def run_bot_session(
    session_id: str,
    scenario: Scenario,
    policy_a: str | AgentPolicy,
    policy_b: str | AgentPolicy,
    seed_a: int = 0,
    seed_b: int = 0,
    rules: Optional[GameRules] = None,
) -> SessionCore:
    """Convenience: play a full bot-bot session through the service path."""
    core = SessionCore(session_id, scenario, rules, wallclock=lambda: 0.0)
    pa = make_policy(policy_a, seed_a) if isinstance(policy_a, str) else policy_a
    pb = make_policy(policy_b, seed_b) if isinstance(policy_b, str) else policy_b
    core.occupy("A", f"bot:{getattr(pa, 'name', 'custom')}", pa)
    core.occupy("B", f"bot:{getattr(pb, 'name', 'custom')}", pb)
    return core
