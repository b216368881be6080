"""Planar primitives for dot trajectories and circular agent views.

Entities travel along quadratic Bezier curves. A curve is constructed from
two leg distances (r1, r2) and a heading change (delta_theta) applied to the
heading carried in from the previous turn, so successive trajectories of one
entity chain smoothly. Distances are in plane units; the agent view diameter
is the natural unit of scale.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, NamedTuple, Optional

import numpy as np

# Canonical frame grid: turn animations are sampled at 10 movement frames,
# preceded (turns >= 2) by 5 view-shift frames.
MOVEMENT_FRAMES = 10
SHIFT_FRAMES = 5


class Point(NamedTuple):
    x: float
    y: float

    def distance_to(self, other: "Point") -> float:
        return math.hypot(self.x - other.x, self.y - other.y)

    def translated(self, dx: float, dy: float) -> "Point":
        return Point(self.x + dx, self.y + dy)


class View(NamedTuple):
    """Circular agent view. Every agent keeps the same diameter."""

    center: Point
    diameter: float


@dataclass(frozen=True)
class Trajectory:
    """Quadratic Bezier control points plus the movement parameters that
    produced them.

    p1 sits at distance r1 from p0 along heading theta_prev; p2 sits at
    distance r2 from p1 along heading theta_prev + delta_theta. The heading
    carried to the next turn is theta_prev + delta_theta.
    """

    p0: Point
    p1: Point
    p2: Point
    r1: float
    r2: float
    theta_prev: float
    delta_theta: float

    @property
    def theta_next(self) -> float:
        return self.theta_prev + self.delta_theta


class Frame(NamedTuple):
    """One animation frame: the active view and every entity's position."""

    view: View
    positions: dict


def build_trajectory(
    start: Point, theta_prev: float, r1: float, r2: float, delta_theta: float
) -> Trajectory:
    """Construct the turn trajectory for an entity at `start` with incoming
    heading `theta_prev`. Degenerate r1 = r2 = 0 yields a stationary curve."""
    if r1 < 0 or r2 < 0:
        raise ValueError(f"leg distances must be non-negative, got r1={r1}, r2={r2}")
    p0 = Point(float(start[0]), float(start[1]))
    p1 = Point(p0.x + r1 * math.cos(theta_prev), p0.y + r1 * math.sin(theta_prev))
    theta = theta_prev + delta_theta
    p2 = Point(p1.x + r2 * math.cos(theta), p1.y + r2 * math.sin(theta))
    return Trajectory(p0, p1, p2, r1, r2, theta_prev, delta_theta)


def bezier_point(traj: Trajectory, t: float) -> Point:
    """Evaluate the quadratic Bezier (1-t)^2 p0 + 2(1-t)t p1 + t^2 p2.

    Computed in the equivalent differential form p0 + 2(1-t)t (p1-p0) +
    t^2 (p2-p0) so stationary curves evaluate exactly; endpoints are
    returned verbatim.
    """
    if not 0.0 <= t <= 1.0:
        raise ValueError(f"bezier parameter must lie in [0, 1], got {t}")
    if t == 0.0:
        return traj.p0
    if t == 1.0:
        return traj.p2
    b = 2.0 * (1.0 - t) * t
    c = t * t
    return Point(
        traj.p0.x + b * (traj.p1.x - traj.p0.x) + c * (traj.p2.x - traj.p0.x),
        traj.p0.y + b * (traj.p1.y - traj.p0.y) + c * (traj.p2.y - traj.p0.y),
    )


def bezier_points(traj: Trajectory, ts: np.ndarray) -> np.ndarray:
    """Vectorized curve evaluation; returns an array of shape (len(ts), 2)."""
    b = (2.0 * (1.0 - ts) * ts)[:, None]
    c = (ts * ts)[:, None]
    p0 = np.array(traj.p0, dtype=float)
    p1 = np.array(traj.p1, dtype=float)
    p2 = np.array(traj.p2, dtype=float)
    out = p0 + b * (p1 - p0) + c * (p2 - p0)
    out[ts == 0.0] = p0
    out[ts == 1.0] = p2
    return out


def trajectory_length(traj: Trajectory) -> float:
    """Arc length of the quadratic Bezier, in closed form.

    With B'(t) = a + t*w, the speed is sqrt(A t^2 + B t + C) where A = w.w,
    B = 2 a.w, C = a.a. The discriminant 4AC - B^2 is non-negative by
    Cauchy-Schwarz; it vanishes exactly when the control points are
    collinear, which needs a piecewise branch because the speed may hit
    zero inside (0, 1).
    """
    ax = 2.0 * (traj.p1.x - traj.p0.x)
    ay = 2.0 * (traj.p1.y - traj.p0.y)
    wx = 2.0 * (traj.p0.x - 2.0 * traj.p1.x + traj.p2.x)
    wy = 2.0 * (traj.p0.y - 2.0 * traj.p1.y + traj.p2.y)
    big_a = wx * wx + wy * wy
    big_b = 2.0 * (ax * wx + ay * wy)
    big_c = ax * ax + ay * ay

    scale = max(big_a, big_c, abs(big_b))
    if scale == 0.0:
        return 0.0
    if big_a <= 1e-14 * scale:
        # Nearly uniform velocity: the quadratic term is negligible.
        return math.sqrt(big_c)

    disc = 4.0 * big_a * big_c - big_b * big_b
    if disc <= 1e-12 * (4.0 * big_a * max(big_c, 1e-300)) or disc <= 0.0:
        # Collinear control points: speed is sqrt(A)*|t - t0|.
        sqrt_a = math.sqrt(big_a)
        t0 = -big_b / (2.0 * big_a)
        if 0.0 < t0 < 1.0:
            integral = (t0 * t0 + (1.0 - t0) * (1.0 - t0)) / 2.0
        else:
            integral = abs(0.5 - t0)
        return sqrt_a * integral

    # General case via the asinh antiderivative of sqrt(x^2 + disc)/(8 A^1.5)
    # with x = 2At + B.
    sqrt_disc = math.sqrt(disc)

    def anti(x: float) -> float:
        return x * math.sqrt(x * x + disc) + disc * math.asinh(x / sqrt_disc)

    x0 = big_b
    x1 = 2.0 * big_a + big_b
    return (anti(x1) - anti(x0)) / (8.0 * big_a ** 1.5)


def min_separation(traj_a: Trajectory, traj_b: Trajectory, samples: int = 64) -> float:
    """Minimum distance between the two curves sampled at synchronized
    parameters on a uniform grid over [0, 1] (endpoints included).

    Both entities move simultaneously, so only positions at equal t are
    compared.
    """
    if samples < 2:
        raise ValueError(f"need at least 2 samples, got {samples}")
    ts = np.linspace(0.0, 1.0, samples)
    pa = bezier_points(traj_a, ts)
    pb = bezier_points(traj_b, ts)
    d = pa - pb
    return float(np.sqrt(np.min(np.einsum("ij,ij->i", d, d))))


def is_visible(pos: Point, view: View) -> bool:
    """Entity-center containment in the closed view disc."""
    dx = pos[0] - view.center.x
    dy = pos[1] - view.center.y
    r = view.diameter / 2.0
    return dx * dx + dy * dy <= r * r


def sample_turn_frames(
    turn_index: int,
    moves: Mapping[str, Trajectory],
    view: View,
    view_shift: Optional[tuple] = None,
) -> list:
    """Sample the canonical animation frames of one turn from one agent's
    perspective.

    Turn 1 yields MOVEMENT_FRAMES frames. Turns >= 2 must supply the view
    shift applied at the start of the turn and yield SHIFT_FRAMES frames
    (view center interpolating into place, entities parked at their start
    positions) followed by MOVEMENT_FRAMES movement frames. Movement frame i
    evaluates every trajectory at t = i / MOVEMENT_FRAMES.
    """
    if turn_index < 1:
        raise ValueError(f"turn index must be >= 1, got {turn_index}")
    if turn_index == 1 and view_shift is not None:
        raise ValueError("turn 1 has no view shift")
    if turn_index >= 2 and view_shift is None:
        raise ValueError(f"turn {turn_index} requires a view shift")

    frames = []
    if view_shift is not None:
        dx, dy = float(view_shift[0]), float(view_shift[1])
        start_positions = {eid: traj.p0 for eid, traj in moves.items()}
        prev_center = view.center.translated(-dx, -dy)
        for j in range(1, SHIFT_FRAMES + 1):
            f = j / SHIFT_FRAMES
            center = prev_center.translated(dx * f, dy * f)
            frames.append(Frame(View(center, view.diameter), dict(start_positions)))
    for i in range(1, MOVEMENT_FRAMES + 1):
        t = i / MOVEMENT_FRAMES
        positions = {eid: bezier_point(traj, t) for eid, traj in moves.items()}
        frames.append(Frame(view, positions))
    return frames
