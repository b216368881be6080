"""Constrained procedural generation and validation of 5-turn scenarios.

A scenario fixes everything random about one game up front: entity
attributes, per-turn Bezier movements, per-agent view shifts, and the
resulting shared sets at every selection timestep. Movement and shift
parameters are always drawn forward from their configured uniform
distributions; the constraints (exactly `visible_count` entities per agent
at each selection timestep, a scheduled shared count, bounded consecutive
sharing, center gaps, no mid-movement overlap) are enforced purely by
rejection, never by distorting those distributions. Initial placement seeds
the process with a view profile that matches the selection-timestep profile
so rejection converges quickly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, asdict
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .geometry import (
    Point,
    Trajectory,
    View,
    bezier_points,
    build_trajectory,
    is_visible,
    min_separation,
)
from .rng import substream
from .serialize import dumps_canonical, loads

AGENTS = ("A", "B")

# Safety band against 12-significant-digit serialization jitter: accepted
# scenarios keep every inequality slack by at least this much, so a parsed
# scenario re-validates cleanly.
_EDGE = 1e-9

# Stream path tags under (seed, restart, ...)
_SCHEDULE, _LAYOUT, _ENTITIES, _TURN, _SHIFT, _PLAN = 0, 1, 2, 3, 4, 5


class GenerationExhausted(RuntimeError):
    """Raised when attempt caps run out; carries diagnostics."""

    def __init__(self, message: str, diagnostics: Optional[dict] = None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class TurnRejected(Exception):
    """Internal signal: a turn's movement set cannot satisfy overlap limits."""


@dataclass(frozen=True)
class Entity:
    id: str
    color: float
    size: float
    initial_pos: Point
    initial_heading: float


@dataclass(frozen=True)
class ScenarioConfig:
    view_diameter: float = 1.0
    n_entities: int = 16
    color_range: Tuple[float, float] = (0.2, 0.8)
    size_range: Tuple[float, float] = (0.0125, 0.03)
    r1_range: Tuple[float, float] = (0.08, 0.25)
    r2_range: Tuple[float, float] = (0.08, 0.25)
    delta_theta_range: Tuple[float, float] = (-math.pi / 2, math.pi / 2)
    shift_magnitude_range: Tuple[float, float] = (0.25, 0.45)
    view_center_distance_range: Tuple[float, float] = (0.35, 0.55)
    min_center_gap_margin: float = 0.02
    visible_count: int = 7
    shared_choices: Tuple[int, ...] = (4, 5, 6)
    max_turns: int = 5
    max_consecutive_shared: int = 3
    independent_shifts: bool = True
    halo_ring_width: float = 0.35
    view_distance_band: Tuple[float, float] = (0.29, 0.59)
    overlap_samples: int = 64
    per_entity_attempts: int = 200
    per_turn_attempts: int = 500
    scenario_restarts: int = 50

    @property
    def view_radius(self) -> float:
        return self.view_diameter / 2.0

    @property
    def max_travel(self) -> float:
        return self.r1_range[1] + self.r2_range[1]

    def validate(self) -> None:
        if self.view_diameter <= 0:
            raise ValueError("view_diameter must be positive")
        if self.n_entities < 1:
            raise ValueError("need at least one entity")
        for name in (
            "color_range",
            "size_range",
            "r1_range",
            "r2_range",
            "delta_theta_range",
            "shift_magnitude_range",
            "view_center_distance_range",
        ):
            lo, hi = getattr(self, name)
            if not (math.isfinite(lo) and math.isfinite(hi)) or lo > hi:
                raise ValueError(f"{name} must be a nonempty finite range, got ({lo}, {hi})")
        if self.size_range[0] <= 0:
            raise ValueError("entity size must be positive")
        if self.r1_range[0] < 0 or self.r2_range[0] < 0:
            raise ValueError("leg distance ranges must be non-negative")
        if self.shift_magnitude_range[0] < 0:
            raise ValueError("shift magnitudes must be non-negative")
        if not self.shared_choices:
            raise ValueError("shared_choices must be nonempty")
        if max(self.shared_choices) > self.visible_count:
            raise ValueError("cannot share more entities than are visible")
        if self.n_entities < 2 * self.visible_count - min(self.shared_choices):
            raise ValueError(
                "n_entities too small to show visible_count entities per agent "
                "at the smallest shared count"
            )
        if self.max_turns < 1:
            raise ValueError("max_turns must be >= 1")
        if self.max_consecutive_shared < 1:
            raise ValueError("max_consecutive_shared must be >= 1")
        if self.overlap_samples < 2:
            raise ValueError("overlap_samples must be >= 2")


@dataclass(frozen=True)
class Scenario:
    """A complete pre-generated game world.

    `views[agent][k-1]` is active during turn k; `shifts[agent][k-2]` is the
    displacement applied to that agent's view before turn k (k >= 2).
    """

    config: ScenarioConfig
    seed: int
    entities: Tuple[Entity, ...]
    turns: Tuple[Dict[str, Trajectory], ...]
    views: Dict[str, Tuple[View, ...]]
    shifts: Dict[str, Tuple[Tuple[float, float], ...]]
    shared_sets: Tuple[frozenset, ...]

    def entity(self, entity_id: str) -> Entity:
        for e in self.entities:
            if e.id == entity_id:
                return e
        raise KeyError(entity_id)

    def positions_at(self, k: int) -> Dict[str, Point]:
        """Entity positions at selection timestep t_k (k=0 gives t_0)."""
        if k == 0:
            return {e.id: e.initial_pos for e in self.entities}
        return {eid: tr.p2 for eid, tr in self.turns[k - 1].items()}

    def visible_ids(self, agent: str, k: int) -> frozenset:
        """Ids visible to `agent` at selection timestep t_k (k >= 1)."""
        view = self.views[agent][k - 1]
        pos = self.positions_at(k)
        return frozenset(eid for eid, p in pos.items() if is_visible(p, view))


@dataclass
class Violation:
    constraint: str
    turn: Optional[int]
    entity_ids: Tuple[str, ...]
    measured: object


@dataclass
class ValidationReport:
    violations: List[Violation] = field(default_factory=list)

    @property
    def empty(self) -> bool:
        return not self.violations

    def add(self, constraint, turn, entity_ids, measured):
        self.violations.append(Violation(constraint, turn, tuple(entity_ids), measured))

    def summary(self) -> str:
        if self.empty:
            return "ok"
        lines = [
            f"{v.constraint} turn={v.turn} entities={list(v.entity_ids)} measured={v.measured}"
            for v in self.violations
        ]
        return "\n".join(lines)


def _uniform(rng: np.random.Generator, rng_range: Tuple[float, float]) -> float:
    # Always consumes exactly one draw, so batched and scalar paths stay
    # stream-compatible; degenerate ranges return their endpoint exactly.
    lo, hi = rng_range
    return float(lo + (hi - lo) * rng.random())


def _point_in_disc(rng: np.random.Generator, center: Point, radius: float) -> Point:
    r = radius * math.sqrt(float(rng.random()))
    a = float(rng.uniform(0.0, 2.0 * math.pi))
    return Point(center.x + r * math.cos(a), center.y + r * math.sin(a))


def _in_disc(p: Point, center: Point, radius: float) -> bool:
    dx, dy = p.x - center.x, p.y - center.y
    return dx * dx + dy * dy <= radius * radius


def sample_view_shift(rng: np.random.Generator, config: ScenarioConfig) -> Tuple[float, float]:
    """Draw one agent's perspective shift: uniform direction, uniform magnitude."""
    angle = float(rng.uniform(0.0, 2.0 * math.pi))
    mag = _uniform(rng, config.shift_magnitude_range)
    return (mag * math.cos(angle), mag * math.sin(angle))


def _point_in_annulus(
    rng: np.random.Generator, center: Point, r_lo: float, r_hi: float
) -> Point:
    r = math.sqrt(float(rng.uniform(r_lo * r_lo, r_hi * r_hi)))
    a = float(rng.uniform(0.0, 2.0 * math.pi))
    return Point(center.x + r * math.cos(a), center.y + r * math.sin(a))


def sample_entities(
    rng: np.random.Generator,
    config: ScenarioConfig,
    views: Tuple[View, View],
    shared_target: Optional[int] = None,
) -> List[Entity]:
    """Sample entity attributes and initial placement.

    Color, size and heading are uniform over their configured ranges. All
    positions land inside the union of the two initial views inflated by the
    maximum single-turn travel distance. Within that region, entities are
    laid out so the initial visibility profile already looks like a selection
    timestep (visible_count per agent, a shared-choice sized intersection,
    remaining entities in a ring just outside the views where they can drift
    in later); that keeps the per-turn rejection converging fast. Pairwise
    center gaps are enforced at placement time.
    """
    config.validate()
    view_a, view_b = views
    radius = config.view_radius
    n = config.n_entities
    v = config.visible_count

    if shared_target is None:
        shared_initial = int(rng.choice(np.asarray(config.shared_choices)))
    else:
        shared_initial = int(shared_target)
    ring_outer = radius + min(config.halo_ring_width, config.max_travel)

    # Region plan: shared lens block, per-agent-only blocks, near-ring halo.
    regions: List[str] = []
    regions += ["lens"] * shared_initial
    regions += ["a_only"] * (v - shared_initial)
    regions += ["b_only"] * (v - shared_initial)
    regions += ["halo"] * (n - len(regions))

    colors = [_uniform(rng, config.color_range) for _ in range(n)]
    sizes = [_uniform(rng, config.size_range) for _ in range(n)]
    headings = [float(rng.uniform(0.0, 2.0 * math.pi)) for _ in range(n)]

    placed: List[Point] = []
    entities: List[Entity] = []
    for i in range(n):
        size_i = sizes[i]
        ok = None
        for attempt in range(config.per_entity_attempts):
            region = regions[i]
            if region == "lens":
                p = _point_in_disc(rng, view_a.center, radius)
                if not _in_disc(p, view_b.center, radius):
                    continue
            elif region == "a_only":
                p = _point_in_disc(rng, view_a.center, radius)
                if _in_disc(p, view_b.center, radius):
                    continue
            elif region == "b_only":
                p = _point_in_disc(rng, view_b.center, radius)
                if _in_disc(p, view_a.center, radius):
                    continue
            else:
                anchor = view_a.center if (i + attempt) % 2 == 0 else view_b.center
                p = _point_in_annulus(rng, anchor, radius, ring_outer)
                if _in_disc(p, view_a.center, radius) or _in_disc(p, view_b.center, radius):
                    continue
            gap_ok = True
            for j, q in enumerate(placed):
                need = size_i + sizes[j] + config.min_center_gap_margin + _EDGE
                if p.distance_to(q) < need:
                    gap_ok = False
                    break
            if gap_ok:
                ok = p
                break
        if ok is None:
            raise GenerationExhausted(
                f"could not place entity {i} after {config.per_entity_attempts} attempts",
                {"entity_index": i, "placed": len(placed)},
            )
        placed.append(ok)
        entities.append(
            Entity(
                id=f"e{i:02d}",
                color=colors[i],
                size=sizes[i],
                initial_pos=ok,
                initial_heading=headings[i],
            )
        )
    return entities


@dataclass
class _TurnState:
    positions: Dict[str, Point]
    headings: Dict[str, float]


def _curve_grid(
    starts: np.ndarray, headings: np.ndarray, params: np.ndarray, ts: np.ndarray
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Control points and sampled positions for a batch of trajectories.

    starts (n,2), headings (n,), params (n,3) as (r1, r2, delta_theta);
    returns (p1 (n,2), p2 (n,2), grid (n,S,2)).
    """
    r1 = params[:, 0]
    r2 = params[:, 1]
    theta = headings + params[:, 2]
    p1 = starts + np.stack([r1 * np.cos(headings), r1 * np.sin(headings)], axis=1)
    p2 = p1 + np.stack([r2 * np.cos(theta), r2 * np.sin(theta)], axis=1)
    b = (2.0 * (1.0 - ts) * ts)[None, :, None]
    c = (ts * ts)[None, :, None]
    s = starts[:, None, :]
    grid = s + b * (p1[:, None, :] - s) + c * (p2[:, None, :] - s)
    grid[:, ts == 0.0, :] = starts[:, None, :]
    grid[:, ts == 1.0, :] = p2[:, None, :]
    return p1, p2, grid


def _pair_min_d2(grid: np.ndarray) -> np.ndarray:
    """Minimum squared distance over synchronized samples for every pair;
    grid (n,S,2) -> (n,n)."""
    diff = grid[:, None, :, :] - grid[None, :, :, :]
    return np.min(np.einsum("ijkl,ijkl->ijk", diff, diff), axis=2)


def _draw_params(rng: np.random.Generator, config: ScenarioConfig) -> np.ndarray:
    u = rng.random(3)
    lo1, hi1 = config.r1_range
    lo2, hi2 = config.r2_range
    lod, hid = config.delta_theta_range
    return np.array(
        [lo1 + (hi1 - lo1) * u[0], lo2 + (hi2 - lo2) * u[1], lod + (hid - lod) * u[2]]
    )


def sample_turn(
    streams: Sequence[np.random.Generator],
    prior: _TurnState,
    config: ScenarioConfig,
    entities: Sequence[Entity],
    predrawn: Optional[np.ndarray] = None,
) -> Dict[str, Trajectory]:
    """Draw one turn of movements: r1, r2 and delta_theta uniform per entity,
    resampled per entity (bounded) until the trajectory keeps clear of every
    already-fixed trajectory of this turn. Raises TurnRejected when an entity
    runs out of attempts.

    Each entity consumes only its own stream, so one entity's rejections
    never shift another entity's draws. Candidates are processed in entity
    order; the first draw for every entity happens up front in one batch,
    which consumes the streams identically to the sequential description.
    `predrawn` lets the caller supply that first batch when it has already
    drawn it (e.g. for cheap pre-checks).
    """
    ids = [e.id for e in entities]
    n = len(ids)
    sizes = np.array([e.size for e in entities])
    ts = np.linspace(0.0, 1.0, config.overlap_samples)
    starts = np.array([prior.positions[eid] for eid in ids])
    headings = np.array([prior.headings[eid] for eid in ids])

    # Start-position conflicts cannot be fixed by resampling (curves include
    # t=0), so reject the turn outright.
    need = sizes[:, None] + sizes[None, :] + _EDGE
    d0 = starts[:, None, :] - starts[None, :, :]
    d0_norm2 = np.einsum("ijk,ijk->ij", d0, d0)
    conflict0 = d0_norm2 < need * need
    np.fill_diagonal(conflict0, False)
    if conflict0.any():
        i, j = np.argwhere(conflict0)[0]
        raise TurnRejected(f"start positions of {ids[i]} and {ids[j]} overlap")

    if predrawn is None:
        params = np.array([_draw_params(rng, config) for rng in streams])
    else:
        params = np.array(predrawn, dtype=float, copy=True)
    p1, p2, grid = _curve_grid(starts, headings, params, ts)
    min_d2 = _pair_min_d2(grid)
    need2 = need * need

    for i in range(n):
        ok = not any(min_d2[i, j] < need2[i, j] for j in range(i))
        attempts_left = config.per_entity_attempts - 1
        while not ok:
            if attempts_left <= 0:
                raise TurnRejected(
                    f"entity {ids[i]} exhausted {config.per_entity_attempts} movement draws"
                )
            attempts_left -= 1
            params[i] = _draw_params(streams[i], config)
            c_p1, c_p2, c_grid = _curve_grid(
                starts[i : i + 1], headings[i : i + 1], params[i : i + 1], ts
            )
            p1[i], p2[i] = c_p1[0], c_p2[0]
            grid[i] = c_grid[0]
            diff = grid - grid[i]
            min_d2[i, :] = np.min(np.einsum("jkl,jkl->jk", diff, diff), axis=1)
            min_d2[:, i] = min_d2[i, :]
            ok = not any(min_d2[i, j] < need2[i, j] for j in range(i))

    out: Dict[str, Trajectory] = {}
    for i, eid in enumerate(ids):
        out[eid] = Trajectory(
            p0=Point(float(starts[i, 0]), float(starts[i, 1])),
            p1=Point(float(p1[i, 0]), float(p1[i, 1])),
            p2=Point(float(p2[i, 0]), float(p2[i, 1])),
            r1=float(params[i, 0]),
            r2=float(params[i, 1]),
            theta_prev=float(headings[i]),
            delta_theta=float(params[i, 2]),
        )
    return out


# Endpoint visibility classes used by the turn planner.
_AB, _ONLY_A, _ONLY_B, _OUT = 0, 1, 2, 3


def _wrap_angle(a: float) -> float:
    return (a + math.pi) % (2.0 * math.pi) - math.pi


def _class_feasibility(
    starts: np.ndarray,
    headings: np.ndarray,
    centers: Dict[str, Point],
    config: ScenarioConfig,
) -> np.ndarray:
    """(n, 4) boolean matrix: can entity i plausibly end the turn in class c.

    Probes a lattice of movement parameter combinations (endpoints live in a
    forward cone around the heading, so reachability is heading-dependent)
    and requires a 0.02 safety margin to either side of the view boundary so
    planned classes stay fillable by actual draws.
    """
    lo1, hi1 = config.r1_range
    lo2, hi2 = config.r2_range
    lod, hid = config.delta_theta_range
    r1s = np.array([lo1, (lo1 + hi1) / 2, hi1])
    r2s = np.array([lo2, (lo2 + hi2) / 2, hi2])
    dts = np.linspace(lod, hid, 5)
    r1g, r2g, dtg = np.meshgrid(r1s, r2s, dts, indexing="ij")
    r1g, r2g, dtg = r1g.ravel(), r2g.ravel(), dtg.ravel()

    h = headings[:, None]
    ex = starts[:, 0:1] + r1g[None, :] * np.cos(h) + r2g[None, :] * np.cos(h + dtg[None, :])
    ey = starts[:, 1:2] + r1g[None, :] * np.sin(h) + r2g[None, :] * np.sin(h + dtg[None, :])

    pad = 0.02
    radius = config.view_radius
    da = np.hypot(ex - centers["A"].x, ey - centers["A"].y)
    db = np.hypot(ex - centers["B"].x, ey - centers["B"].y)
    in_a, out_a = da <= radius - pad, da >= radius + pad
    in_b, out_b = db <= radius - pad, db >= radius + pad

    feas = np.empty((len(starts), 4), dtype=bool)
    feas[:, _AB] = (in_a & in_b).any(axis=1)
    feas[:, _ONLY_A] = (in_a & out_b).any(axis=1)
    feas[:, _ONLY_B] = (in_b & out_a).any(axis=1)
    feas[:, _OUT] = (out_a & out_b).any(axis=1)
    return feas


def _plan_assignment(
    rng: np.random.Generator,
    starts: np.ndarray,
    headings: np.ndarray,
    centers: Dict[str, Point],
    consecutive: np.ndarray,
    want_shared: int,
    config: ScenarioConfig,
) -> Optional[np.ndarray]:
    """Pick which entity ends up shared / A-only / B-only / outside at t_k.

    Greedy assignment over the feasibility matrix, scarcest classes first,
    with a one-step augmenting swap as repair. Entities that have been
    shared for a while score worse for re-sharing, which rotates the shared
    set ahead of the hard consecutive cap. Jitter from `rng` varies choices
    between attempts. Returns a class per entity or None when the drawn
    shift admits no assignment.
    """
    n = len(starts)
    v = config.visible_count
    feas = _class_feasibility(starts, headings, centers, config)
    feas_ab = feas[:, _AB] & (consecutive < config.max_consecutive_shared)

    da = np.hypot(starts[:, 0] - centers["A"].x, starts[:, 1] - centers["A"].y)
    db = np.hypot(starts[:, 0] - centers["B"].x, starts[:, 1] - centers["B"].y)
    jitter = rng.random(n)
    # Prefer entities near the lens for sharing, rotate long-shared ones out.
    score = {
        _AB: np.maximum(da, db)
        + 0.25 * (consecutive / max(config.max_consecutive_shared, 1))
        + 0.2 * jitter,
        _ONLY_A: da + 0.2 * jitter,
        _ONLY_B: db + 0.2 * jitter,
        _OUT: -np.minimum(da, db) + 0.2 * jitter,
    }
    capacity = {
        _AB: want_shared,
        _ONLY_A: v - want_shared,
        _ONLY_B: v - want_shared,
        _OUT: n - (2 * v - want_shared),
    }
    feasible_for = {
        _AB: feas_ab,
        _ONLY_A: feas[:, _ONLY_A],
        _ONLY_B: feas[:, _ONLY_B],
        _OUT: feas[:, _OUT],
    }

    classes = np.full(n, -1, dtype=int)
    for cls in sorted(capacity, key=lambda c: int(feasible_for[c].sum())):
        cand = np.flatnonzero((classes == -1) & feasible_for[cls])
        pick = cand[np.argsort(score[cls][cand])][: capacity[cls]]
        classes[pick] = cls

    # Repair pass: an unassigned entity takes a held slot it can fill when
    # the holder fits into some under-filled class.
    for e in np.flatnonzero(classes == -1):
        placed = False
        for cls in (_OUT, _ONLY_A, _ONLY_B, _AB):
            if not feasible_for[cls][e]:
                continue
            if int((classes == cls).sum()) < capacity[cls]:
                classes[e] = cls
                placed = True
                break
            for f in np.flatnonzero(classes == cls):
                swap_to = next(
                    (
                        c
                        for c in (_OUT, _ONLY_A, _ONLY_B, _AB)
                        if c != cls
                        and feasible_for[c][f]
                        and int((classes == c).sum()) < capacity[c]
                    ),
                    None,
                )
                if swap_to is not None:
                    classes[f] = swap_to
                    classes[e] = cls
                    placed = True
                    break
            if placed:
                break
        if not placed:
            return None

    for cls, cap in capacity.items():
        if int((classes == cls).sum()) != cap:
            return None
    return classes


def _class_of_endpoint(p: Point, centers: Dict[str, Point], radius: float) -> Optional[int]:
    """Endpoint class with boundary hysteresis; None when too close to a
    view edge to survive serialization rounding."""
    da = math.hypot(p.x - centers["A"].x, p.y - centers["A"].y)
    db = math.hypot(p.x - centers["B"].x, p.y - centers["B"].y)
    if abs(da - radius) < _EDGE or abs(db - radius) < _EDGE:
        return None
    in_a = da < radius
    in_b = db < radius
    if in_a and in_b:
        return _AB
    if in_a:
        return _ONLY_A
    if in_b:
        return _ONLY_B
    return _OUT


def _guided_turn(
    streams: Sequence[np.random.Generator],
    starts: np.ndarray,
    headings: np.ndarray,
    sizes: np.ndarray,
    classes: np.ndarray,
    centers: Dict[str, Point],
    config: ScenarioConfig,
) -> Optional[List[Tuple[float, float, float]]]:
    """Per-entity rejection against the planned classes: each entity draws
    movement parameters from its own stream until its endpoint lands in its
    assigned class, keeps the visible center gaps, and its whole curve stays
    clear of the already-fixed ones. Returns accepted (r1, r2, delta_theta)
    per entity, or None when some entity runs out of attempts."""
    n = len(starts)
    radius = config.view_radius
    ts = np.linspace(0.0, 1.0, config.overlap_samples)
    bb = 2.0 * (1.0 - ts) * ts
    cc = ts * ts
    margin = config.min_center_gap_margin
    ring_outer = radius + config.halo_ring_width

    grids = np.empty((n, config.overlap_samples, 2))
    endpoints = np.empty((n, 2))
    params_out: List[Optional[Tuple[float, float, float]]] = [None] * n
    fixed: List[int] = []

    # Lens dwellers claim their corridor first, outside entities last.
    order = sorted(range(n), key=lambda i: (classes[i], i))

    for i in order:
        rng = streams[i]
        sx, sy = starts[i]
        heading = headings[i]
        visible_i = classes[i] != _OUT
        fixed_arr = np.array(fixed, dtype=int)
        fixed_visible = (
            fixed_arr[classes[fixed_arr] != _OUT] if len(fixed_arr) else fixed_arr
        )
        # Keep drifters in the ring around a view while draws allow it, so
        # later turns still have entities in reach; relax if it proves hard.
        ring_tries = 0 if visible_i else config.per_entity_attempts // 3
        ok = False
        for attempt in range(config.per_entity_attempts):
            u = rng.random(3)
            r1 = config.r1_range[0] + (config.r1_range[1] - config.r1_range[0]) * u[0]
            r2 = config.r2_range[0] + (config.r2_range[1] - config.r2_range[0]) * u[1]
            dth = (
                config.delta_theta_range[0]
                + (config.delta_theta_range[1] - config.delta_theta_range[0]) * u[2]
            )
            p1x = sx + r1 * math.cos(heading)
            p1y = sy + r1 * math.sin(heading)
            theta = heading + dth
            p2x = p1x + r2 * math.cos(theta)
            p2y = p1y + r2 * math.sin(theta)
            cls = _class_of_endpoint(Point(p2x, p2y), centers, radius)
            if cls != classes[i]:
                continue
            if attempt < ring_tries:
                near = min(
                    math.hypot(p2x - centers["A"].x, p2y - centers["A"].y),
                    math.hypot(p2x - centers["B"].x, p2y - centers["B"].y),
                )
                if near > ring_outer:
                    continue
            if visible_i and len(fixed_visible):
                dx = endpoints[fixed_visible, 0] - p2x
                dy = endpoints[fixed_visible, 1] - p2y
                need = sizes[fixed_visible] + sizes[i] + margin + _EDGE
                if np.any(dx * dx + dy * dy < need * need):
                    continue
            # Whole-curve clearance against already-fixed trajectories.
            gx = sx + bb * (p1x - sx) + cc * (p2x - sx)
            gy = sy + bb * (p1y - sy) + cc * (p2y - sy)
            if len(fixed_arr):
                ddx = grids[fixed_arr, :, 0] - gx[None, :]
                ddy = grids[fixed_arr, :, 1] - gy[None, :]
                pair_min = np.min(ddx * ddx + ddy * ddy, axis=1)
                need = sizes[fixed_arr] + sizes[i] + _EDGE
                if np.any(pair_min < need * need):
                    continue
            params_out[i] = (r1, r2, dth)
            grids[i, :, 0] = gx
            grids[i, :, 1] = gy
            grids[i, 0] = starts[i]
            grids[i, -1] = (p2x, p2y)
            endpoints[i] = (p2x, p2y)
            fixed.append(i)
            ok = True
            break
        if not ok:
            return None
    return [p for p in params_out]  # type: ignore[return-value]


def _distance_band(config: ScenarioConfig, want_shared: int) -> Tuple[float, float]:
    """View-center distance window where `want_shared` of visible_count has
    realistic mass: bigger shared counts need closer views. Sub-window of
    config.view_distance_band, linear in the shared choice."""
    lo, hi = config.view_distance_band
    smin, smax = min(config.shared_choices), max(config.shared_choices)
    width = min(0.14, hi - lo)
    f = (smax - want_shared) / (smax - smin) if smax > smin else 0.5
    start = lo + f * (hi - lo - width)
    return (start, start + width)


def _place_initial_views(
    rng: np.random.Generator,
    config: ScenarioConfig,
    distance_range: Optional[Tuple[float, float]] = None,
) -> Tuple[View, View]:
    d = _uniform(rng, distance_range or config.view_center_distance_range)
    angle = float(rng.uniform(0.0, 2.0 * math.pi))
    a = View(Point(0.0, 0.0), config.view_diameter)
    b = View(Point(d * math.cos(angle), d * math.sin(angle)), config.view_diameter)
    return a, b


def _visible_set(positions: Dict[str, Point], view: View, radius: float) -> Optional[frozenset]:
    """Ids inside the view, or None when any entity sits too close to the
    boundary to survive serialization rounding."""
    inside = []
    r_lo = (radius - _EDGE) ** 2
    r_hi = (radius + _EDGE) ** 2
    for eid, p in positions.items():
        dx, dy = p.x - view.center.x, p.y - view.center.y
        d2 = dx * dx + dy * dy
        if r_lo < d2 < r_hi:
            return None
        if d2 <= r_lo:
            inside.append(eid)
    return frozenset(inside)


def _endpoints(starts: np.ndarray, headings: np.ndarray, params: np.ndarray) -> np.ndarray:
    """Final positions (n,2) a parameter batch would reach, without sampling
    the full curves."""
    r1 = params[:, 0]
    r2 = params[:, 1]
    theta = headings + params[:, 2]
    p1 = starts + np.stack([r1 * np.cos(headings), r1 * np.sin(headings)], axis=1)
    return p1 + np.stack([r2 * np.cos(theta), r2 * np.sin(theta)], axis=1)


def _selection_ok(
    pos: np.ndarray,
    sizes: np.ndarray,
    views: Dict[str, View],
    radius: float,
    want_shared: int,
    consecutive: np.ndarray,
    config: ScenarioConfig,
) -> Optional[np.ndarray]:
    """Test the selection-timestep constraints on candidate endpoints.

    Returns the shared-entity boolean mask when every check passes, else
    None. Checks: boundary hysteresis, exact visible counts per agent, the
    scheduled shared count, the consecutive-sharing cap, and center gaps
    among entities visible to either agent.
    """
    r_lo2 = (radius - _EDGE) ** 2
    r_hi2 = (radius + _EDGE) ** 2
    inside = {}
    for agent, view in views.items():
        delta = pos - np.array(view.center)
        d2 = np.einsum("ij,ij->i", delta, delta)
        if np.any((d2 > r_lo2) & (d2 < r_hi2)):
            return None
        mask = d2 <= r_lo2
        if int(mask.sum()) != config.visible_count:
            return None
        inside[agent] = mask
    shared = inside["A"] & inside["B"]
    if int(shared.sum()) != want_shared:
        return None
    if np.any(consecutive[shared] + 1 > config.max_consecutive_shared):
        return None
    union = inside["A"] | inside["B"]
    idx = np.flatnonzero(union)
    sub = pos[idx]
    diff = sub[:, None, :] - sub[None, :, :]
    dist = np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))
    need = sizes[idx][:, None] + sizes[idx][None, :] + config.min_center_gap_margin + _EDGE
    np.fill_diagonal(need, 0.0)
    if np.any(dist < need):
        return None
    return shared


def generate_scenario(seed: int, config: Optional[ScenarioConfig] = None) -> Scenario:
    """Generate a complete scenario as a pure function of (seed, config).

    The shared-count schedule is drawn up front, uniformly per timestep.
    Turns are then generated forward: shifts and movements are sampled from
    their distributions and the whole turn is rejected until both agents see
    exactly `visible_count` entities, the shared set has the scheduled size,
    no entity overstays `max_consecutive_shared`, and visible center gaps
    hold. Caps bound the work; exhausting the scenario restart cap raises
    GenerationExhausted with diagnostics.
    """
    config = config or ScenarioConfig()
    config.validate()
    radius = config.view_radius
    diag = {"restarts": 0, "turn_attempts": []}

    for restart in range(config.scenario_restarts):
        diag["restarts"] = restart
        sched_rng = substream(seed, restart, _SCHEDULE)
        choices = np.asarray(config.shared_choices)
        schedule = [int(sched_rng.choice(choices)) for _ in range(config.max_turns)]

        layout_rng = substream(seed, restart, _LAYOUT)
        lo1, hi1 = _distance_band(config, schedule[0])
        lo2, hi2 = config.view_center_distance_range
        d_range = (max(lo1, lo2), min(hi1, hi2))
        if d_range[0] > d_range[1]:
            d_range = config.view_center_distance_range
        initial_views = _place_initial_views(layout_rng, config, d_range)
        try:
            entities = sample_entities(
                substream(seed, restart, _ENTITIES),
                config,
                initial_views,
                shared_target=schedule[0],
            )
        except GenerationExhausted:
            continue

        ids = [e.id for e in entities]
        sizes_arr = np.array([e.size for e in entities])
        state = _TurnState(
            positions={e.id: e.initial_pos for e in entities},
            headings={e.id: e.initial_heading for e in entities},
        )
        views_now: Dict[str, View] = {"A": initial_views[0], "B": initial_views[1]}
        turns: List[Dict[str, Trajectory]] = []
        views_hist: Dict[str, List[View]] = {a: [] for a in AGENTS}
        shifts_hist: Dict[str, List[Tuple[float, float]]] = {a: [] for a in AGENTS}
        shared_hist: List[frozenset] = []
        consecutive = np.zeros(len(ids), dtype=int)

        scenario_ok = True
        for k in range(1, config.max_turns + 1):
            turn_streams = [substream(seed, restart, _TURN, k, i) for i in range(len(ids))]
            shift_streams = {
                a: substream(seed, restart, _SHIFT, k, ai) for ai, a in enumerate(AGENTS)
            }
            starts = np.array([state.positions[eid] for eid in ids])
            headings = np.array([state.headings[eid] for eid in ids])
            want_shared = schedule[k - 1]
            band_lo, band_hi = _distance_band(config, want_shared)

            plan_rng = substream(seed, restart, _PLAN, k)
            accepted = None
            attempts = 0
            reasons = {"shift_band": 0, "plan": 0, "fill": 0, "post_check": 0}
            for _ in range(config.per_turn_attempts):
                attempts += 1
                if k >= 2:
                    # Shifts are plain draws from their distributions. Two
                    # cheap gates prune hopeless pairs before any movement
                    # sampling: the views must stay close enough that a
                    # shared-choice sized intersection is achievable, and
                    # each shifted view must have at least visible_count
                    # entities within movement reach (anything farther than
                    # radius + max_travel cannot possibly be visible at t_k).
                    reach = radius + config.max_travel
                    cand_views = None
                    for _ in range(64):
                        shift_a = sample_view_shift(shift_streams["A"], config)
                        if config.independent_shifts:
                            shift_b = sample_view_shift(shift_streams["B"], config)
                        else:
                            shift_b = shift_a
                        ca = views_now["A"].center.translated(*shift_a)
                        cb = views_now["B"].center.translated(*shift_b)
                        if not band_lo <= ca.distance_to(cb) <= band_hi:
                            continue
                        da = starts - np.array(ca)
                        db = starts - np.array(cb)
                        in_reach_a = int(
                            (np.einsum("ij,ij->i", da, da) <= reach * reach).sum()
                        )
                        in_reach_b = int(
                            (np.einsum("ij,ij->i", db, db) <= reach * reach).sum()
                        )
                        if in_reach_a < config.visible_count or in_reach_b < config.visible_count:
                            continue
                        cand_views = {
                            "A": View(ca, config.view_diameter),
                            "B": View(cb, config.view_diameter),
                        }
                        cand_shifts = {"A": shift_a, "B": shift_b}
                        break
                    if cand_views is None:
                        reasons["shift_band"] += 1
                        continue
                else:
                    cand_views = dict(views_now)
                    cand_shifts = None

                centers = {a: cand_views[a].center for a in AGENTS}
                classes = _plan_assignment(
                    plan_rng, starts, headings, centers, consecutive, want_shared, config
                )
                if classes is None:
                    reasons["plan"] += 1
                    continue
                fills = _guided_turn(
                    turn_streams, starts, headings, sizes_arr, classes, centers, config
                )
                if fills is None:
                    reasons["fill"] += 1
                    continue
                trajs = {
                    eid: build_trajectory(
                        state.positions[eid], state.headings[eid], r1, r2, dth
                    )
                    for eid, (r1, r2, dth) in zip(ids, fills)
                }
                # Authoritative re-check of everything the plan promised.
                pos_final = np.array([trajs[eid].p2 for eid in ids])
                shared_mask = _selection_ok(
                    pos_final,
                    sizes_arr,
                    cand_views,
                    radius,
                    want_shared,
                    consecutive,
                    config,
                )
                if shared_mask is None:
                    reasons["post_check"] += 1
                    continue
                accepted = (trajs, cand_views, cand_shifts, shared_mask)
                break
            diag["turn_attempts"].append(
                {"restart": restart, "turn": k, "attempts": attempts, "reasons": reasons}
            )
            if accepted is None:
                scenario_ok = False
                break

            trajs, cand_views, cand_shifts, shared_mask = accepted
            shared = frozenset(ids[i] for i in np.flatnonzero(shared_mask))
            turns.append(trajs)
            for a in AGENTS:
                views_hist[a].append(cand_views[a])
                if cand_shifts is not None:
                    shifts_hist[a].append(cand_shifts[a])
            shared_hist.append(shared)
            views_now = cand_views
            consecutive = np.where(shared_mask, consecutive + 1, 0)
            state = _TurnState(
                positions={eid: trajs[eid].p2 for eid in ids},
                headings={eid: trajs[eid].theta_next for eid in ids},
            )

        if scenario_ok:
            return Scenario(
                config=config,
                seed=seed,
                entities=tuple(entities),
                turns=tuple(turns),
                views={a: tuple(views_hist[a]) for a in AGENTS},
                shifts={a: tuple(shifts_hist[a]) for a in AGENTS},
                shared_sets=tuple(shared_hist),
            )

    raise GenerationExhausted(
        f"seed {seed}: no valid scenario within {config.scenario_restarts} restarts",
        diag,
    )


def validate_scenario(s: Scenario) -> ValidationReport:
    """Re-derive every constraint from raw geometry and report violations.

    This is the executable definition of scenario validity; generate_scenario
    output must come back clean. Tolerances absorb 12-significant-digit
    serialization rounding.
    """
    report = ValidationReport()
    config = s.config
    tol = 1e-9
    ids = [e.id for e in s.entities]
    sizes = {e.id: e.size for e in s.entities}

    if len(set(ids)) != len(ids):
        report.add("entity_ids_unique", None, ids, len(set(ids)))
    for e in s.entities:
        if not (config.color_range[0] - tol <= e.color <= config.color_range[1] + tol):
            report.add("color_in_range", None, [e.id], e.color)
        if not (config.size_range[0] - tol <= e.size <= config.size_range[1] + tol):
            report.add("size_in_range", None, [e.id], e.size)

    if len(s.turns) != config.max_turns:
        report.add("turn_count", None, [], len(s.turns))
        return report

    for a in AGENTS:
        for k, view in enumerate(s.views[a], start=1):
            if abs(view.diameter - config.view_diameter) > tol:
                report.add("view_diameter_constant", k, [], view.diameter)
        for k in range(2, config.max_turns + 1):
            prev = s.views[a][k - 2]
            cur = s.views[a][k - 1]
            dx, dy = s.shifts[a][k - 2]
            if (
                abs(prev.center.x + dx - cur.center.x) > tol
                or abs(prev.center.y + dy - cur.center.y) > tol
            ):
                report.add("view_shift_consistent", k, [], (a, dx, dy))

    # Trajectory chaining: construction invariants, continuity, heading
    # persistence back to the initial heading.
    for k, turn in enumerate(s.turns, start=1):
        for e in s.entities:
            tr = turn.get(e.id)
            if tr is None:
                report.add("trajectory_present", k, [e.id], None)
                continue
            want_p1 = Point(
                tr.p0.x + tr.r1 * math.cos(tr.theta_prev),
                tr.p0.y + tr.r1 * math.sin(tr.theta_prev),
            )
            want_p2 = Point(
                want_p1.x + tr.r2 * math.cos(tr.theta_prev + tr.delta_theta),
                want_p1.y + tr.r2 * math.sin(tr.theta_prev + tr.delta_theta),
            )
            if tr.p1.distance_to(want_p1) > tol or tr.p2.distance_to(want_p2) > tol:
                report.add("control_point_construction", k, [e.id], None)
            if k == 1:
                if tr.p0.distance_to(e.initial_pos) > tol:
                    report.add("turn_start_continuity", k, [e.id], None)
                if abs(tr.theta_prev - e.initial_heading) > tol:
                    report.add("heading_persistence", k, [e.id], tr.theta_prev)
            else:
                prev_tr = s.turns[k - 2][e.id]
                if tr.p0.distance_to(prev_tr.p2) > tol:
                    report.add("turn_start_continuity", k, [e.id], None)
                if abs(tr.theta_prev - prev_tr.theta_next) > tol:
                    report.add("heading_persistence", k, [e.id], tr.theta_prev)

    # Mid-movement overlap: every pair, synchronized sampling.
    for k, turn in enumerate(s.turns, start=1):
        for i in range(len(ids)):
            for j in range(i + 1, len(ids)):
                ea, eb = ids[i], ids[j]
                sep = min_separation(turn[ea], turn[eb], config.overlap_samples)
                if sep < sizes[ea] + sizes[eb]:
                    report.add("no_overlap_during_movement", k, [ea, eb], sep)

    # Selection-timestep constraints.
    consecutive = {eid: 0 for eid in ids}
    for k in range(1, config.max_turns + 1):
        pos = s.positions_at(k)
        vis = {a: s.visible_ids(a, k) for a in AGENTS}
        for a in AGENTS:
            if len(vis[a]) != config.visible_count:
                report.add("visible_count", k, sorted(vis[a]), (a, len(vis[a])))
        shared = vis["A"] & vis["B"]
        if len(shared) not in config.shared_choices:
            report.add("shared_count_choice", k, sorted(shared), len(shared))
        stored = s.shared_sets[k - 1] if k - 1 < len(s.shared_sets) else None
        if stored != shared:
            report.add(
                "shared_set_stored_consistent",
                k,
                sorted(stored or ()),
                sorted(shared),
            )
        for eid in shared:
            consecutive[eid] += 1
            if consecutive[eid] > config.max_consecutive_shared:
                report.add("max_consecutive_shared", k, [eid], consecutive[eid])
        for eid in ids:
            if eid not in shared:
                consecutive[eid] = 0
        visible_union = sorted(vis["A"] | vis["B"])
        for i in range(len(visible_union)):
            for j in range(i + 1, len(visible_union)):
                ea, eb = visible_union[i], visible_union[j]
                need = sizes[ea] + sizes[eb] + config.min_center_gap_margin
                d = pos[ea].distance_to(pos[eb])
                if d < need - tol:
                    report.add("min_center_gap", k, [ea, eb], d)

    return report


# ---------------------------------------------------------------------------
# Scenario file format
# ---------------------------------------------------------------------------

SCENARIO_FORMAT_VERSION = 1


def config_to_doc(config: ScenarioConfig) -> dict:
    doc = asdict(config)
    for key, value in doc.items():
        if isinstance(value, tuple):
            doc[key] = list(value)
    return doc


def config_from_doc(doc: dict) -> ScenarioConfig:
    kwargs = dict(doc)
    for key, value in kwargs.items():
        if isinstance(value, list):
            kwargs[key] = tuple(value)
    return ScenarioConfig(**kwargs)


def scenario_to_doc(s: Scenario) -> dict:
    return {
        "version": SCENARIO_FORMAT_VERSION,
        "seed": s.seed,
        "config": config_to_doc(s.config),
        "entities": [
            {
                "id": e.id,
                "color": e.color,
                "size": e.size,
                "x": e.initial_pos.x,
                "y": e.initial_pos.y,
                "heading": e.initial_heading,
            }
            for e in s.entities
        ],
        "turns": [
            [
                {
                    "id": eid,
                    "p0": [tr.p0.x, tr.p0.y],
                    "p1": [tr.p1.x, tr.p1.y],
                    "p2": [tr.p2.x, tr.p2.y],
                    "r1": tr.r1,
                    "r2": tr.r2,
                    "theta_prev": tr.theta_prev,
                    "delta_theta": tr.delta_theta,
                }
                for eid, tr in sorted(turn.items())
            ]
            for turn in s.turns
        ],
        "views": [
            [
                {"cx": v.center.x, "cy": v.center.y, "diameter": v.diameter}
                for v in s.views[a]
            ]
            for a in AGENTS
        ],
        "shifts": [[[dx, dy] for dx, dy in s.shifts[a]] for a in AGENTS],
        "shared_sets": [sorted(shared) for shared in s.shared_sets],
    }


def scenario_from_doc(doc: dict) -> Scenario:
    if doc.get("version") != SCENARIO_FORMAT_VERSION:
        raise ValueError(f"unsupported scenario format version {doc.get('version')!r}")
    config = config_from_doc(doc["config"])
    entities = tuple(
        Entity(
            id=e["id"],
            color=float(e["color"]),
            size=float(e["size"]),
            initial_pos=Point(float(e["x"]), float(e["y"])),
            initial_heading=float(e["heading"]),
        )
        for e in doc["entities"]
    )
    turns = tuple(
        {
            t["id"]: Trajectory(
                p0=Point(float(t["p0"][0]), float(t["p0"][1])),
                p1=Point(float(t["p1"][0]), float(t["p1"][1])),
                p2=Point(float(t["p2"][0]), float(t["p2"][1])),
                r1=float(t["r1"]),
                r2=float(t["r2"]),
                theta_prev=float(t["theta_prev"]),
                delta_theta=float(t["delta_theta"]),
            )
            for t in turn
        }
        for turn in doc["turns"]
    )
    views = {
        a: tuple(
            View(Point(float(v["cx"]), float(v["cy"])), float(v["diameter"]))
            for v in doc["views"][ai]
        )
        for ai, a in enumerate(AGENTS)
    }
    shifts = {
        a: tuple((float(sv[0]), float(sv[1])) for sv in doc["shifts"][ai])
        for ai, a in enumerate(AGENTS)
    }
    shared_sets = tuple(frozenset(shared) for shared in doc["shared_sets"])
    return Scenario(
        config=config,
        seed=int(doc["seed"]),
        entities=entities,
        turns=turns,
        views=views,
        shifts=shifts,
        shared_sets=shared_sets,
    )


def dumps_scenario(s: Scenario) -> str:
    return dumps_canonical(scenario_to_doc(s)) + "\n"


def parse_scenario(text: str) -> Scenario:
    return scenario_from_doc(loads(text))
