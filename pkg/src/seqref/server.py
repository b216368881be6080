"""WebSocket game service.

Thin async adapter around SessionCore: pairs connections into sessions,
funnels each session's messages through one lock (single writer), persists
transcript records as JSON lines, and recovers unfinished sessions from
disk on startup. Browsers speak the same JSON protocol over `/ws`.
"""

import asyncio
import itertools
import json
import logging
import os
import time
from pathlib import Path
from typing import Dict, List, Optional, Tuple

from fastapi import FastAPI, WebSocket, WebSocketDisconnect

from .game import GameRules, replay_events
from .scenario import Scenario, parse_scenario, scenario_from_doc
from .session import Outgoing, SessionCore

logger = logging.getLogger(__name__)

ENV_LOG_DIR = "SEQREF_LOG_DIR"
ENV_SCENARIO_DIR = "SEQREF_SCENARIO_DIR"
ENV_UI_DIR = "SEQREF_UI_DIR"

IDLE_TIMEOUT_S = 600.0  # sessions idle this long are marked abandoned


class ScenarioSource:
    """Sorted scenario files consumed one per session; refuses when empty."""

    def __init__(self, directory):
        self.directory = Path(directory)
        self._files = sorted(self.directory.glob("*.json"))
        self._next = 0

    def remaining(self) -> int:
        return len(self._files) - self._next

    def take(self) -> Optional[Scenario]:
        while self._next < len(self._files):
            path = self._files[self._next]
            self._next += 1
            try:
                return parse_scenario(path.read_text(encoding="utf-8"))
            except Exception as exc:
                logger.warning("skipping unreadable scenario %s: %s", path, exc)
        return None


class GameService:
    """Session registry, pairing, persistence and recovery."""

    def __init__(
        self,
        scenario_source: ScenarioSource,
        log_dir,
        pairing: str = "human_human",
        rules: Optional[GameRules] = None,
        bot_seed: int = 0,
    ):
        self.scenarios = scenario_source
        self.log_dir = Path(log_dir)
        self.log_dir.mkdir(parents=True, exist_ok=True)
        self.pairing = pairing
        self.rules = rules
        self.bot_seed = itertools.count(bot_seed)
        self.sessions: Dict[str, SessionCore] = {}
        self.locks: Dict[str, asyncio.Lock] = {}
        self.last_activity: Dict[str, float] = {}
        self.waiting_session: Optional[str] = None
        self._counter = itertools.count(1)

    # -- pairing -------------------------------------------------------------

    def _new_session(self) -> Optional[SessionCore]:
        scenario = self.scenarios.take()
        if scenario is None:
            return None
        session_id = f"s{next(self._counter):06d}-{int(time.time())}"
        core = SessionCore(session_id, scenario, self.rules)
        self.sessions[session_id] = core
        self.locks[session_id] = asyncio.Lock()
        self.last_activity[session_id] = time.time()
        return core

    def join(self, requested_session: Optional[str] = None) -> Tuple[Optional[SessionCore], Optional[str], List[Outgoing]]:
        """Bind one human connection to (session, seat). Returns the session,
        the seat, and any messages produced by game start."""
        if requested_session:
            core = self.sessions.get(requested_session)
            if core is None or not core.free_seats():
                return None, None, []
            seat = core.free_seats()[0]
            out = core.occupy(seat, "human")
            self._persist(core)
            return core, seat, out

        if self.pairing.startswith("human_bot"):
            core = self._new_session()
            if core is None:
                return None, None, []
            policy_name = (
                self.pairing.split(":", 1)[1] if ":" in self.pairing else "template"
            )
            out = core.occupy("A", "human")
            out += core.pair_with_bot("B", policy_name, next(self.bot_seed))
            self._persist(core)
            return core, "A", out

        # human_human matchmaking through a waiting room
        if self.waiting_session:
            core = self.sessions.get(self.waiting_session)
            self.waiting_session = None
            if core is not None and core.free_seats():
                seat = core.free_seats()[0]
                out = core.occupy(seat, "human")
                self._persist(core)
                return core, seat, out
        core = self._new_session()
        if core is None:
            return None, None, []
        out = core.occupy("A", "human")
        self.waiting_session = core.session_id
        self._persist(core)
        return core, "A", out

    # -- persistence ----------------------------------------------------------

    def transcript_path(self, session_id: str) -> Path:
        return self.log_dir / f"{session_id}.jsonl"

    def _persist(self, core: SessionCore) -> None:
        records = core.drain_records()
        if not records:
            return
        with open(self.transcript_path(core.session_id), "a", encoding="utf-8") as fh:
            for record in records:
                fh.write(json.dumps(record, ensure_ascii=False) + "\n")

    def handle(self, core: SessionCore, seat: str, msg: dict) -> List[Outgoing]:
        out = core.handle(seat, msg)
        self.last_activity[core.session_id] = time.time()
        self._persist(core)
        return out

    def sweep_idle(self, now: Optional[float] = None) -> List[str]:
        """Mark sessions idle beyond the timeout abandoned; returns their ids."""
        now = now if now is not None else time.time()
        abandoned = []
        for sid, core in self.sessions.items():
            if core.status in ("finished", "abandoned"):
                continue
            if now - self.last_activity.get(sid, now) > IDLE_TIMEOUT_S:
                core._abandon()
                self._persist(core)
                abandoned.append(sid)
        return abandoned

    def recover(self) -> int:
        """Rebuild unfinished sessions from persisted transcripts. Returns
        how many sessions were reconstructed."""
        count = 0
        for path in sorted(self.log_dir.glob("*.jsonl")):
            try:
                lines = [
                    json.loads(line)
                    for line in path.read_text(encoding="utf-8").splitlines()
                    if line.strip()
                ]
            except json.JSONDecodeError:
                logger.warning("skipping corrupt transcript %s", path)
                continue
            if not lines or lines[0].get("kind") != "header":
                continue
            if any(r.get("kind") == "footer" for r in lines):
                continue  # finished or abandoned
            header = lines[0]
            events = [r for r in lines if r.get("kind") in ("shift", "utterance", "selection", "resolution")]
            try:
                scenario = scenario_from_doc(header["payload"]["scenario"])
                core = SessionCore(header["payload"]["session_id"], scenario, self.rules)
                core.drain_records()  # header already on disk
                # Seats rebind on reconnect; bots do not resume mid-game.
                for seat, kind in header["payload"].get("seats", {}).items():
                    core.seats[seat] = _fresh_seat(kind)
                if not core.free_seats():
                    core.game = replay_events(scenario, events, self.rules)
                    core.events = list(events)
                    core.status = "finished" if core.game.ended else "active"
                self.sessions[core.session_id] = core
                self.locks[core.session_id] = asyncio.Lock()
                self.last_activity[core.session_id] = time.time()
                count += 1
            except Exception as exc:
                logger.warning("could not recover %s: %s", path, exc)
        return count


def _fresh_seat(kind: str):
    from .session import Seat

    return Seat(kind=kind)


# ---------------------------------------------------------------------------
# FastAPI application
# ---------------------------------------------------------------------------

def create_app(service: GameService) -> FastAPI:
    app = FastAPI(title="seqref game service")
    connections: Dict[Tuple[str, str], WebSocket] = {}

    ui_dir = os.environ.get(ENV_UI_DIR)
    if ui_dir and Path(ui_dir).is_dir():
        from fastapi.staticfiles import StaticFiles

        app.mount("/ui", StaticFiles(directory=ui_dir, html=True), name="ui")

    @app.get("/healthz")
    async def healthz():
        return {"ok": True, "sessions": len(service.sessions),
                "scenarios_remaining": service.scenarios.remaining()}

    async def deliver(session_id: str, outgoing: List[Outgoing], ws_by_seat) -> None:
        for item in outgoing:
            ws = ws_by_seat.get(item.seat)
            if ws is None:
                continue
            try:
                await ws.send_text(json.dumps(item.message, ensure_ascii=False))
            except Exception:
                logger.debug("send to %s/%s failed", session_id, item.seat)

    @app.websocket("/ws")
    async def ws_endpoint(websocket: WebSocket):
        await websocket.accept()
        requested = websocket.query_params.get("session")
        core, seat, pending = None, None, []
        async with asyncio.Lock():
            core, seat, pending = service.join(requested)
        if core is None:
            await websocket.send_text(
                json.dumps(
                    {
                        "v": 1,
                        "type": "error",
                        "seq": 0,
                        "payload": {
                            "code": "no_session",
                            "message": "no scenarios left or session full",
                        },
                    }
                )
            )
            await websocket.close()
            return
        connections[(core.session_id, seat)] = websocket
        ws_by_seat = lambda: {
            s: connections.get((core.session_id, s)) for s in ("A", "B")
        }
        hello = {
            "v": 1,
            "type": "session_state",
            "seq": 0,
            "payload": {
                "session_id": core.session_id,
                "seat": seat,
                "status": core.status,
                "turn": core.game.turn if core.game else None,
                "phase": core.game.phase.value if core.game else None,
                "lst": core.game.lst if core.game else 0,
            },
        }
        await websocket.send_text(json.dumps(hello))
        await deliver(core.session_id, pending, ws_by_seat())
        try:
            while True:
                raw = await websocket.receive_text()
                try:
                    msg = json.loads(raw)
                except json.JSONDecodeError:
                    await websocket.send_text(
                        json.dumps(
                            {
                                "v": 1,
                                "type": "error",
                                "seq": 0,
                                "payload": {"code": "bad_json", "message": "not JSON"},
                            }
                        )
                    )
                    continue
                async with service.locks[core.session_id]:
                    out = service.handle(core, seat, msg)
                await deliver(core.session_id, out, ws_by_seat())
        except WebSocketDisconnect:
            connections.pop((core.session_id, seat), None)
            if core.status == "active":
                async with service.locks[core.session_id]:
                    out = core._abandon(by_seat=seat)
                    service._persist(core)
                await deliver(core.session_id, out, ws_by_seat())

    return app


def serve(
    port: int = 8765,
    scenario_dir: Optional[str] = None,
    log_dir: Optional[str] = None,
    pairing: str = "human_bot:template",
    host: str = "127.0.0.1",
) -> None:
    """Run the service until interrupted."""
    import uvicorn

    scenario_dir = scenario_dir or os.environ.get(ENV_SCENARIO_DIR)
    log_dir = log_dir or os.environ.get(ENV_LOG_DIR) or "logs"
    if not scenario_dir:
        raise SystemExit(f"no scenario directory (flag or {ENV_SCENARIO_DIR})")
    source = ScenarioSource(scenario_dir)
    if source.remaining() == 0:
        raise SystemExit(f"no scenario files in {scenario_dir}")
    service = GameService(source, log_dir, pairing=pairing)
    recovered = service.recover()
    if recovered:
        logger.info("recovered %d sessions", recovered)
    app = create_app(service)
    uvicorn.run(app, host=host, port=port, log_level="info")
