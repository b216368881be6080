"""Offline replay export: animated SVG per agent perspective per turn, or
frame-by-frame JSON matching the canonical turn sampling."""

from __future__ import annotations

import json
from pathlib import Path
from typing import Dict, List, Optional, Sequence

from .geometry import MOVEMENT_FRAMES, SHIFT_FRAMES, sample_turn_frames
from .scenario import AGENTS, Scenario

SHIFT_SECONDS = 1.0
MOVE_SECONDS = 2.0
VIEW_STROKE = "#888"
GRID_PAD = 0.1


class ReplayExportError(ValueError):
    pass


def _played_turns(events: Sequence[dict]) -> int:
    turns = [e["turn"] for e in events if e.get("kind") in ("shift", "resolution")]
    if not turns:
        raise ReplayExportError("transcript contains no playable events")
    return max(turns)


def _check_consistency(scenario: Scenario, events: Sequence[dict]) -> None:
    for e in events:
        if e.get("kind") in ("shift", "resolution") and e.get("turn", 1) > scenario.config.max_turns:
            raise ReplayExportError("transcript has more turns than the scenario")
        if e.get("kind") == "selection":
            eid = e.get("payload", {}).get("entity_id")
            agent = e.get("agent")
            turn = e.get("turn", 1)
            # A recorded selection must have been legal against this
            # scenario; a mismatch means the transcript belongs elsewhere.
            if (
                eid is None
                or agent not in scenario.views
                or eid not in scenario.visible_ids(agent, turn)
            ):
                raise ReplayExportError(
                    f"selection {eid!r} by {agent} at turn {turn} is not legal "
                    "for this scenario; transcript/scenario mismatch?"
                )


def export_replay(
    scenario: Scenario,
    events: Sequence[dict],
    fmt: str,
    out_dir,
) -> List[Path]:
    """Write replay files for every (agent, played turn). `fmt` is "svg"
    (animated documents) or "json" (canonical frame placements)."""
    _check_consistency(scenario, events)
    turns = _played_turns(events)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written: List[Path] = []
    if fmt == "json":
        doc = {"turns": []}
        for k in range(1, turns + 1):
            row = {"turn": k, "agents": {}}
            for agent in AGENTS:
                frames = _agent_frames(scenario, agent, k)
                row["agents"][agent] = frames
            doc["turns"].append(row)
        path = out / "replay.json"
        path.write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")
        written.append(path)
    elif fmt == "svg":
        selections = _selections_by_turn(events)
        for k in range(1, turns + 1):
            for agent in AGENTS:
                path = out / f"turn{k}_{agent}.svg"
                path.write_text(_turn_svg(scenario, agent, k, selections.get((k, agent))),
                                encoding="utf-8")
                written.append(path)
    else:
        raise ReplayExportError(f"unknown format {fmt!r}; use svg or json")
    return written


def _selections_by_turn(events: Sequence[dict]) -> Dict:
    out = {}
    for e in events:
        if e.get("kind") == "selection":
            out[(e["turn"], e.get("agent"))] = e["payload"]["entity_id"]
    return out


def _agent_frames(scenario: Scenario, agent: str, k: int) -> List[dict]:
    view = scenario.views[agent][k - 1]
    shift = scenario.shifts[agent][k - 2] if k >= 2 else None
    frames = sample_turn_frames(k, scenario.turns[k - 1], view, shift)
    return [
        {
            "view": {"cx": f.view.center.x, "cy": f.view.center.y, "diameter": f.view.diameter},
            "positions": {eid: [p.x, p.y] for eid, p in sorted(f.positions.items())},
        }
        for f in frames
    ]


def _gray(color: float) -> str:
    v = max(0, min(255, round(color * 255)))
    return f"rgb({v},{v},{v})"


def _turn_svg(scenario: Scenario, agent: str, k: int, selected: Optional[str]) -> str:
    """One animated SVG: dots clip to the agent's view circle and run their
    Bezier arcs after the (optional) view shift slides in. The y axis is
    flipped so plane-up renders up."""
    view = scenario.views[agent][k - 1]
    radius = view.diameter / 2.0
    shift = scenario.shifts[agent][k - 2] if k >= 2 else None
    cx, cy = view.center.x, -view.center.y
    prev_cx = cx - (shift[0] if shift else 0.0)
    prev_cy = cy + (shift[1] if shift else 0.0)

    lo_x = min(cx, prev_cx) - radius - GRID_PAD
    hi_x = max(cx, prev_cx) + radius + GRID_PAD
    lo_y = min(cy, prev_cy) - radius - GRID_PAD
    hi_y = max(cy, prev_cy) + radius + GRID_PAD

    shift_dur = SHIFT_SECONDS if shift else 0.0
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" viewBox="{lo_x:.4f} {lo_y:.4f} '
        f'{hi_x - lo_x:.4f} {hi_y - lo_y:.4f}">',
        "<defs><clipPath id=\"viewclip\">",
        _clip_circle(prev_cx, prev_cy, cx, cy, radius, shift_dur),
        "</clipPath></defs>",
        f'<rect x="{lo_x:.4f}" y="{lo_y:.4f}" width="{(hi_x - lo_x):.4f}" '
        f'height="{(hi_y - lo_y):.4f}" fill="white"/>',
        _view_circle(prev_cx, prev_cy, cx, cy, radius, shift_dur),
        '<g clip-path="url(#viewclip)">',
    ]
    for entity in scenario.entities:
        tr = scenario.turns[k - 1][entity.id]
        x0, y0 = tr.p0.x, -tr.p0.y
        dx1, dy1 = tr.p1.x - tr.p0.x, -(tr.p1.y - tr.p0.y)
        dx2, dy2 = tr.p2.x - tr.p0.x, -(tr.p2.y - tr.p0.y)
        stroke = ' stroke="#d33" stroke-width="0.005"' if entity.id == selected else ""
        parts.append(
            f'<circle id="{entity.id}" cx="{x0:.6f}" cy="{y0:.6f}" '
            f'r="{entity.size:.6f}" fill="{_gray(entity.color)}"{stroke}>'
        )
        parts.append(
            f'<animateMotion begin="{shift_dur}s" dur="{MOVE_SECONDS}s" fill="freeze" '
            f'path="M 0 0 Q {dx1:.6f} {dy1:.6f} {dx2:.6f} {dy2:.6f}"/>'
        )
        parts.append("</circle>")
    parts.append("</g>")
    parts.append("</svg>")
    return "\n".join(parts)


def _clip_circle(prev_cx, prev_cy, cx, cy, radius, shift_dur) -> str:
    circle = f'<circle cx="{prev_cx:.6f}" cy="{prev_cy:.6f}" r="{radius:.6f}">'
    anim = ""
    if shift_dur:
        anim = (
            f'<animate attributeName="cx" from="{prev_cx:.6f}" to="{cx:.6f}" '
            f'dur="{shift_dur}s" fill="freeze"/>'
            f'<animate attributeName="cy" from="{prev_cy:.6f}" to="{cy:.6f}" '
            f'dur="{shift_dur}s" fill="freeze"/>'
        )
    return circle + anim + "</circle>"


def _view_circle(prev_cx, prev_cy, cx, cy, radius, shift_dur) -> str:
    circle = (
        f'<circle cx="{prev_cx:.6f}" cy="{prev_cy:.6f}" r="{radius:.6f}" '
        f'fill="none" stroke="{VIEW_STROKE}" stroke-width="0.004">'
    )
    anim = ""
    if shift_dur:
        anim = (
            f'<animate attributeName="cx" from="{prev_cx:.6f}" to="{cx:.6f}" '
            f'dur="{shift_dur}s" fill="freeze"/>'
            f'<animate attributeName="cy" from="{prev_cy:.6f}" to="{cy:.6f}" '
            f'dur="{shift_dur}s" fill="freeze"/>'
        )
    return circle + anim + "</circle>"
