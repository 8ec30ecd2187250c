"""Convex corridors, vehicle footprints and route validation.

A corridor is a bounded convex polygon given as an intersection of
halfplanes a*x + b*y + c <= 0 with unit normals (a, b), so halfplane
residuals are signed distances in meters. Routes chain overlapping
corridors; the validator checks that each overlap can host either vehicle
body on its own.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linprog

from .vehicle import BodyRect, State, VehicleParams

_BIG = 1.0e6


def _clip_polygon(points: np.ndarray, a: float, b: float, c: float) -> np.ndarray:
    """Sutherland-Hodgman clip of a convex polygon by a*x + b*y + c <= 0."""
    out = []
    n = len(points)
    for i in range(n):
        p, q = points[i], points[(i + 1) % n]
        dp = a * p[0] + b * p[1] + c
        dq = a * q[0] + b * q[1] + c
        if dp <= 0.0:
            out.append(p)
        if (dp < 0.0) != (dq < 0.0) and dp != dq:
            t = dp / (dp - dq)
            out.append(p + t * (q - p))
    return np.array(out) if out else np.zeros((0, 2))


def polygon_from_halfplanes(halfplanes: np.ndarray) -> np.ndarray:
    """Vertices (CCW) of the intersection, clipped to a large working box."""
    box = np.array([[-_BIG, -_BIG], [_BIG, -_BIG], [_BIG, _BIG], [-_BIG, _BIG]])
    poly = box
    for a, b, c in halfplanes:
        poly = _clip_polygon(poly, a, b, c)
        if len(poly) == 0:
            return poly
    return poly


@dataclass(frozen=True)
class Corridor:
    """Bounded convex free-space cell with a feasible interior waypoint.

    halfplanes: (H, 3) rows (a, b, c), unit normals, interior where
    a*x + b*y + c <= 0. waypoint: (x, y, theta) pose used by the planner
    as an intermediate target inside this corridor.
    """

    halfplanes: np.ndarray
    waypoint: np.ndarray

    def __post_init__(self):
        hp = np.asarray(self.halfplanes, dtype=float)
        wp = np.asarray(self.waypoint, dtype=float)
        object.__setattr__(self, "halfplanes", hp)
        object.__setattr__(self, "waypoint", wp)
        if hp.ndim != 2 or hp.shape[1] != 3 or hp.shape[0] < 3:
            raise ValueError("need at least 3 halfplanes of the form (a, b, c)")
        norms = np.hypot(hp[:, 0], hp[:, 1])
        if not np.allclose(norms, 1.0, atol=1.0e-9):
            raise ValueError("halfplane normals must have unit length")
        if wp.shape != (3,):
            raise ValueError("waypoint must be (x, y, theta)")
        poly = polygon_from_halfplanes(hp)
        if len(poly) < 3:
            raise ValueError("corridor interior is empty")
        if np.max(np.abs(poly)) >= _BIG * 0.5:
            raise ValueError("corridor is unbounded")
        resid = hp[:, 0] * wp[0] + hp[:, 1] * wp[1] + hp[:, 2]
        if np.max(resid) >= 0.0:
            raise ValueError("waypoint must lie strictly inside the corridor")

    @property
    def vertices(self) -> np.ndarray:
        return polygon_from_halfplanes(self.halfplanes)

    def point_residuals(self, xy) -> np.ndarray:
        xy = np.asarray(xy, dtype=float)
        return self.halfplanes[:, 0] * xy[0] + self.halfplanes[:, 1] * xy[1] + self.halfplanes[:, 2]


def corridor_from_rect(center, size, heading: float, waypoint=None) -> Corridor:
    """Axis-aligned-in-body-frame rectangle corridor.

    size = (extent along heading, extent across); waypoint defaults to the
    rectangle center with the rectangle heading.
    """
    cx, cy = float(center[0]), float(center[1])
    lx, ly = float(size[0]), float(size[1])
    ct, st = math.cos(heading), math.sin(heading)
    # outward unit normals of the four sides in world frame
    normals = np.array([[ct, st], [-st, ct], [-ct, -st], [st, -ct]])
    offsets = np.array([lx / 2.0, ly / 2.0, lx / 2.0, ly / 2.0])
    hp = np.zeros((4, 3))
    for i, (n, d) in enumerate(zip(normals, offsets)):
        hp[i, :2] = n
        hp[i, 2] = -(n[0] * cx + n[1] * cy) - d
    if waypoint is None:
        waypoint = (cx, cy, heading)
    return Corridor(hp, np.asarray(waypoint, dtype=float))


@dataclass(frozen=True)
class Route:
    """Ordered overlapping corridors plus the terminal vehicle pose."""

    corridors: tuple
    terminal: State

    def __post_init__(self):
        object.__setattr__(self, "corridors", tuple(self.corridors))
        if len(self.corridors) < 1:
            raise ValueError("route needs at least one corridor")

    def __len__(self) -> int:
        return len(self.corridors)


def vehicle_vertices(x: State, p: VehicleParams, which: str) -> np.ndarray:
    """World-frame body corners in homogeneous coordinates, shape (4, 3).

    The trailer rectangle sits at the trailer axle; the truck axle is
    reached by walking L1 along theta1 to the hitch and M0 along theta0.
    Corners come out counterclockwise.
    """
    if which == "trailer":
        cx, cy, th = x.px1, x.py1, x.theta1
        body = p.trailer_body
    elif which == "truck":
        cx = x.px1 + p.L1 * math.cos(x.theta1) + p.M0 * math.cos(x.theta0)
        cy = x.py1 + p.L1 * math.sin(x.theta1) + p.M0 * math.sin(x.theta0)
        th = x.theta0
        body = p.truck_body
    else:
        raise ValueError("which must be 'truck' or 'trailer'")
    ct, st = math.cos(th), math.sin(th)
    R = np.array([[ct, -st], [st, ct]])
    pts = body.corners() @ R.T + np.array([cx, cy])
    return np.hstack([pts, np.ones((4, 1))])


def halfplane_residuals(c: Corridor, v: np.ndarray) -> np.ndarray:
    """Signed distances, entry (i, j) = halfplane i evaluated at vertex j."""
    P = np.asarray(v, dtype=float)
    if P.ndim == 1:
        P = P.reshape(1, -1)
    if P.shape[1] == 2:
        P = np.hstack([P, np.ones((P.shape[0], 1))])
    return c.halfplanes @ P.T


def contains(c: Corridor, v: np.ndarray, margin: float = 0.0) -> bool:
    """True iff every vertex is at least `margin` inside every halfplane."""
    if margin < 0.0:
        raise ValueError("margin must be nonnegative")
    return bool(np.max(halfplane_residuals(c, v)) <= -margin)


def state_in_corridor(x: State, p: VehicleParams, c: Corridor, which: str, margin: float = 0.0) -> bool:
    return contains(c, vehicle_vertices(x, p, which), margin)


def _halfplanes_feasible(hp: np.ndarray) -> bool:
    """LP feasibility of {q : a q_x + b q_y + c <= 0} via the Chebyshev radius."""
    # maximize r  s.t.  a x + b y + r <= -c  (unit normals), r >= 0
    A = np.hstack([hp[:, :2], np.ones((hp.shape[0], 1))])
    res = linprog(
        c=[0.0, 0.0, -1.0],
        A_ub=A,
        b_ub=-hp[:, 2],
        bounds=[(-_BIG, _BIG), (-_BIG, _BIG), (0.0, _BIG)],
        method="highs",
    )
    return bool(res.success and res.x is not None and res.x[2] >= 0.0)


def _rect_fits(overlap_hp: np.ndarray, length: float, width: float) -> bool:
    """Whether a length x width axis-aligned rectangle fits inside the region.

    Erodes every halfplane by the rectangle's support in the normal
    direction; the rectangle fits somewhere iff the eroded set is nonempty.
    """
    grow = 0.5 * length * np.abs(overlap_hp[:, 0]) + 0.5 * width * np.abs(overlap_hp[:, 1])
    eroded = overlap_hp.copy()
    eroded[:, 2] += grow
    return _halfplanes_feasible(eroded)


def overlap_halfplanes(c1: Corridor, c2: Corridor, frame_heading: float = 0.0) -> np.ndarray:
    """Joint halfplane set of an overlap, rotated into a local frame."""
    hp = np.vstack([c1.halfplanes, c2.halfplanes])
    if frame_heading != 0.0:
        ct, st = math.cos(frame_heading), math.sin(frame_heading)
        # rotate world by -heading: normal' = R(-h) n, offset unchanged
        rot = np.array([[ct, st], [-st, ct]])
        hp = np.hstack([hp[:, :2] @ rot.T, hp[:, 2:]])
    return hp


def _overlap_local_heading(c1: Corridor, c2: Corridor) -> float:
    """Dominant edge direction of the overlap polygon (its local frame)."""
    poly = polygon_from_halfplanes(np.vstack([c1.halfplanes, c2.halfplanes]))
    if len(poly) < 3:
        return 0.0
    edges = np.roll(poly, -1, axis=0) - poly
    lengths = np.hypot(edges[:, 0], edges[:, 1])
    e = edges[int(np.argmax(lengths))]
    return math.atan2(e[1], e[0])


def overlap_fits_body(c1: Corridor, c2: Corridor, body: BodyRect) -> bool:
    """Inscribed-rectangle test: body bounding box fits in the overlap.

    Tested axis-aligned in the overlap's local frame, in both orientations;
    conservative with respect to arbitrary body headings.
    """
    heading = _overlap_local_heading(c1, c2)
    hp = overlap_halfplanes(c1, c2, heading)
    return _rect_fits(hp, body.length, body.width) or _rect_fits(hp, body.width, body.length)


def validate_route(r: Route, p: VehicleParams) -> list[str]:
    """Check overlap existence and adequacy; returns human-readable violations."""
    violations = []
    for i in range(len(r.corridors) - 1):
        c1, c2 = r.corridors[i], r.corridors[i + 1]
        poly = polygon_from_halfplanes(np.vstack([c1.halfplanes, c2.halfplanes]))
        if len(poly) < 3:
            violations.append(f"corridors {i} and {i + 1}: no overlap")
            continue
        for name, body in (("truck", p.truck_body), ("trailer", p.trailer_body)):
            if not overlap_fits_body(c1, c2, body):
                violations.append(
                    f"corridors {i} and {i + 1}: overlap too small for the {name} body"
                )
    return violations
