"""Planar geometry primitives: headings, angles, rotations and frame changes."""

import math

import numpy as np

from lanecast.config import STILL_EPSILON_M
from lanecast.core.types import Direction2, Point2, Trajectory
from lanecast.errors import DegenerateDirection, StationaryAgent


def heading_of(traj: Trajectory, t: int, still_epsilon: float = STILL_EPSILON_M) -> Direction2:
    """
    Direction of travel at frame ``t``: position(t) - position(t-1).

    When that displacement is below ``still_epsilon`` the search walks backward to
    the most recent frame pair that moved at least ``still_epsilon``.
    """
    if not (traj.has_frame(t) and traj.has_frame(t - 1)):
        raise KeyError(f"frames {t - 1}..{t} not in trajectory {traj.agent_id}")

    frame = t
    while frame - 1 >= traj.first_frame:
        step = traj.position(frame) - traj.position(frame - 1)
        if step.norm >= still_epsilon:
            return step
        frame -= 1
    raise StationaryAgent(f"agent {traj.agent_id} never moves more than {still_epsilon} m per frame")


def angle_between(a: Direction2, b: Direction2) -> float:
    """Unsigned smallest angle between two directions, degrees in [0, 180]."""
    if a.norm == 0.0 or b.norm == 0.0:
        raise DegenerateDirection("angle_between needs two non-zero directions")
    cross = a.dx * b.dy - a.dy * b.dx
    dot = a.dx * b.dx + a.dy * b.dy
    return math.degrees(math.atan2(abs(cross), dot))


def signed_angle(a: Direction2, b: Direction2) -> float:
    """Counter-clockwise angle from ``a`` to ``b``, degrees in (-180, 180]."""
    if a.norm == 0.0 or b.norm == 0.0:
        raise DegenerateDirection("signed_angle needs two non-zero directions")
    cross = a.dx * b.dy - a.dy * b.dx
    dot = a.dx * b.dx + a.dy * b.dy
    return math.degrees(math.atan2(cross, dot))


def rotate_about(p: Point2, center: Point2, theta: float) -> Point2:
    """Rotate ``p`` counter-clockwise by ``theta`` degrees about ``center``."""
    rad = math.radians(theta)
    c, s = math.cos(rad), math.sin(rad)
    dx, dy = p.x - center.x, p.y - center.y
    return Point2(center.x + c * dx - s * dy, center.y + s * dx + c * dy)


def rotation_matrix(theta_deg: float) -> np.ndarray:
    rad = math.radians(theta_deg)
    c, s = math.cos(rad), math.sin(rad)
    return np.array([[c, -s], [s, c]], dtype=np.float64)


def rotate_array(xy: np.ndarray, center: Point2, theta: float) -> np.ndarray:
    """Vectorised ``rotate_about`` for an (..., 2) array."""
    rad = math.radians(theta)
    c, s = math.cos(rad), math.sin(rad)
    dx = xy[..., 0] - center.x
    dy = xy[..., 1] - center.y
    return np.stack([center.x + c * dx - s * dy, center.y + s * dx + c * dy], axis=-1)


def heading_angle(direction: Direction2) -> float:
    """Heading of ``direction`` in degrees, counter-clockwise from +x."""
    return math.degrees(math.atan2(direction.dy, direction.dx))


def to_agent_frame(xy: np.ndarray, origin: Point2, heading: Direction2) -> np.ndarray:
    """Express global positions relative to ``origin`` with ``heading`` along +x."""
    unit = heading.unit()
    dx = xy[..., 0] - origin.x
    dy = xy[..., 1] - origin.y
    return np.stack([unit.dx * dx + unit.dy * dy, -unit.dy * dx + unit.dx * dy], axis=-1)


def from_agent_frame(xy: np.ndarray, origin: Point2, heading: Direction2) -> np.ndarray:
    """Inverse of ``to_agent_frame``."""
    unit = heading.unit()
    x = xy[..., 0]
    y = xy[..., 1]
    return np.stack([origin.x + unit.dx * x - unit.dy * y, origin.y + unit.dy * x + unit.dx * y], axis=-1)


def point_to_polyline_distance(points: np.ndarray, polyline: np.ndarray) -> np.ndarray:
    """Distance from each of (n, 2) points to an (m, 2) polyline (m >= 1)."""
    points = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    polyline = np.asarray(polyline, dtype=np.float64).reshape(-1, 2)
    if len(polyline) == 1:
        return np.linalg.norm(points - polyline[0], axis=1)
    a = polyline[:-1]
    b = polyline[1:]
    ab = b - a
    denom = np.einsum("ij,ij->i", ab, ab)
    denom = np.where(denom == 0.0, 1.0, denom)
    ap = points[:, None, :] - a[None, :, :]
    t = np.clip(np.einsum("nij,ij->ni", ap, ab) / denom, 0.0, 1.0)
    closest = a[None, :, :] + t[..., None] * ab[None, :, :]
    return np.linalg.norm(points[:, None, :] - closest, axis=2).min(axis=1)


def polyline_length(polyline: np.ndarray) -> float:
    return float(np.linalg.norm(np.diff(np.asarray(polyline).reshape(-1, 2), axis=0), axis=1).sum())
