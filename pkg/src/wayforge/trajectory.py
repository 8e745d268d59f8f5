"""Trajectory representation and the resampling/fitting primitives.

A trajectory is an ordered list of timestamped waypoints (pose + gripper
command) tagged with the arm that executes it. Arc length is the common
parameterization: resampling distributes waypoints uniformly along it and
polynomial fitting uses it (normalized to [0, 1]) as the abscissa, so both
are independent of demonstration speed.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Iterable, Sequence

import numpy as np

from .geometry import Pose, quat_slerp


class Gripper(str, Enum):
    OPEN = "open"
    CLOSED = "closed"


class Arm(str, Enum):
    LEFT = "left"
    RIGHT = "right"

    @property
    def opposite(self) -> "Arm":
        return Arm.RIGHT if self is Arm.LEFT else Arm.LEFT


class DegenerateTrajectory(ValueError):
    """Trajectory has zero arc length and cannot be resampled."""


class InsufficientPoints(ValueError):
    """Too few waypoints remain for the requested polynomial degree."""


@dataclass(frozen=True)
class Waypoint:
    pose: Pose
    gripper: Gripper = Gripper.OPEN
    timestamp: float = 0.0

    def __post_init__(self):
        if not np.isfinite(self.timestamp) or self.timestamp < 0:
            raise ValueError(f"timestamp must be finite and non-negative, got {self.timestamp}")

    def to_dict(self) -> dict:
        return {
            "t": float(self.timestamp),
            "p": [float(v) for v in self.pose.position],
            "q": [float(v) for v in self.pose.orientation],
            "g": self.gripper.value,
        }

    @staticmethod
    def from_dict(d: dict) -> "Waypoint":
        return Waypoint(
            pose=Pose(np.array(d["p"], dtype=float), np.array(d["q"], dtype=float)),
            gripper=Gripper(d["g"]),
            timestamp=float(d["t"]),
        )


@dataclass(frozen=True)
class Trajectory:
    waypoints: tuple
    arm: Arm

    def __post_init__(self):
        wps = tuple(self.waypoints)
        if len(wps) < 2:
            raise ValueError(f"trajectory needs at least 2 waypoints, got {len(wps)}")
        ts = [w.timestamp for w in wps]
        if any(t1 <= t0 for t0, t1 in zip(ts, ts[1:])):
            raise ValueError("waypoint timestamps must be strictly increasing")
        object.__setattr__(self, "waypoints", wps)

    def __len__(self) -> int:
        return len(self.waypoints)

    def positions(self) -> np.ndarray:
        """(N, 3) array of waypoint positions."""
        return np.array([w.pose.position for w in self.waypoints])

    def timestamps(self) -> np.ndarray:
        return np.array([w.timestamp for w in self.waypoints])

    def to_dict(self) -> dict:
        return {"arm": self.arm.value, "waypoints": [w.to_dict() for w in self.waypoints]}

    @staticmethod
    def from_dict(d: dict) -> "Trajectory":
        return Trajectory(
            waypoints=tuple(Waypoint.from_dict(w) for w in d["waypoints"]),
            arm=Arm(d["arm"]),
        )


def make_trajectory(
    positions: Iterable[Sequence[float]],
    arm: Arm = Arm.LEFT,
    orientations: Iterable[np.ndarray] | None = None,
    grippers: Iterable[Gripper] | None = None,
    dt: float = 0.05,
    t0: float = 0.0,
) -> Trajectory:
    """Build a trajectory from raw positions with evenly spaced timestamps."""
    pos = [np.asarray(p, dtype=float) for p in positions]
    n = len(pos)
    oris = list(orientations) if orientations is not None else [None] * n
    grips = list(grippers) if grippers is not None else [Gripper.OPEN] * n
    wps = []
    for i in range(n):
        pose = Pose(pos[i]) if oris[i] is None else Pose(pos[i], oris[i])
        wps.append(Waypoint(pose=pose, gripper=grips[i], timestamp=t0 + i * dt))
    return Trajectory(waypoints=tuple(wps), arm=arm)


def cumulative_arc_length(traj: Trajectory) -> np.ndarray:
    """Cumulative Euclidean path length at each waypoint; element 0 is 0."""
    pos = traj.positions()
    seg = np.linalg.norm(np.diff(pos, axis=0), axis=1)
    return np.concatenate([[0.0], np.cumsum(seg)])


def resample_uniform(traj: Trajectory, n: int) -> Trajectory:
    """Resample to n waypoints uniformly spaced in arc length.

    Endpoints are preserved bit-exactly. Positions and timestamps are
    interpolated piecewise-linearly over arc length, orientations are
    spherically interpolated within the containing segment, and the gripper
    command is carried from the nearest preceding input waypoint so that
    open/close events never move earlier.
    """
    if n < 2:
        raise ValueError(f"need n >= 2, got {n}")
    arc = cumulative_arc_length(traj)
    total = arc[-1]
    if total <= 0.0:
        raise DegenerateTrajectory("trajectory has zero arc length")
    pos = traj.positions()
    ts = traj.timestamps()
    targets = np.linspace(0.0, total, n)

    new_wps = [traj.waypoints[0]]
    for i in range(1, n - 1):
        s = targets[i]
        # containing segment: arc[k] <= s <= arc[k+1] with arc[k+1] > arc[k]
        k = int(np.searchsorted(arc, s, side="right") - 1)
        k = min(k, len(arc) - 2)
        while arc[k + 1] <= arc[k] and k > 0:
            k -= 1
        span = arc[k + 1] - arc[k]
        frac = 0.0 if span <= 0.0 else (s - arc[k]) / span
        p = pos[k] + frac * (pos[k + 1] - pos[k])
        t = ts[k] + frac * (ts[k + 1] - ts[k])
        q = quat_slerp(
            traj.waypoints[k].pose.orientation, traj.waypoints[k + 1].pose.orientation, frac
        )
        g = traj.waypoints[k].gripper  # nearest preceding input waypoint
        new_wps.append(Waypoint(pose=Pose(p, q), gripper=g, timestamp=float(t)))
    new_wps.append(traj.waypoints[-1])
    return Trajectory(waypoints=tuple(new_wps), arm=traj.arm)


@dataclass(frozen=True)
class PolyTrajectory:
    """Per-axis least-squares polynomial over normalized arc length.

    The curve covers the fitted head of the source trajectory; the tail
    (the final approach, which encodes how the object is engaged) is kept
    verbatim in ``preserved_tail``.
    """

    coefficients: np.ndarray  # (degree+1, 3), highest power first
    preserved_tail: tuple  # Waypoints copied from the source
    fit_params: np.ndarray  # normalized arc-length parameter of each fitted point
    fit_residual: float  # max Euclidean deviation at the fitted points
    source: Trajectory

    def evaluate(self, u) -> np.ndarray:
        """Evaluate fitted positions at normalized parameters u in [0, 1]."""
        u = np.atleast_1d(np.asarray(u, dtype=float))
        return np.stack([np.polyval(self.coefficients[:, ax], u) for ax in range(3)], axis=1)

    def sample_smoothed(self, n_curve: int = 200) -> Trajectory:
        """Dense smoothed trajectory: polynomial head followed by the exact tail.

        Orientations and timestamps along the head are interpolated from the
        source by arc-length parameter; gripper states carry over likewise.
        """
        n_fit = len(self.source) - len(self.preserved_tail)
        src_wps = self.source.waypoints[:n_fit]
        u = np.linspace(0.0, self.fit_params[-1], n_curve)
        head = self.evaluate(u)
        # map each u back onto the fitted source points for metadata
        src_u = self.fit_params
        wps = []
        t_prev = -np.inf
        for i in range(n_curve):
            k = int(np.searchsorted(src_u, u[i], side="right") - 1)
            k = max(0, min(k, n_fit - 2))
            span = src_u[k + 1] - src_u[k]
            frac = 0.0 if span <= 0 else (u[i] - src_u[k]) / span
            q = quat_slerp(src_wps[k].pose.orientation, src_wps[k + 1].pose.orientation, frac)
            t = src_wps[k].timestamp + frac * (src_wps[k + 1].timestamp - src_wps[k].timestamp)
            if t <= t_prev:  # guard strict monotonicity under flat parameter spans
                t = np.nextafter(t_prev, np.inf)
            t_prev = t
            wps.append(Waypoint(pose=Pose(head[i], q), gripper=src_wps[k].gripper, timestamp=float(t)))
        for w in self.preserved_tail:
            if w.timestamp <= t_prev:
                w = Waypoint(pose=w.pose, gripper=w.gripper, timestamp=np.nextafter(t_prev, np.inf))
            t_prev = w.timestamp
            wps.append(w)
        return Trajectory(waypoints=tuple(wps), arm=self.source.arm)


def fit_polynomial(traj: Trajectory, degree: int = 5, tail_exclude: int | None = None) -> PolyTrajectory:
    """Least-squares polynomial fit per axis over normalized arc length.

    The last ``tail_exclude`` waypoints are excluded from the fit and kept
    verbatim (default: 10% of the waypoints, at least 3).
    """
    if degree < 1:
        raise ValueError(f"degree must be >= 1, got {degree}")
    n = len(traj)
    if tail_exclude is None:
        tail_exclude = max(3, int(round(0.1 * n)))
    if tail_exclude < 0:
        raise ValueError("tail_exclude must be non-negative")
    n_fit = n - tail_exclude
    if n_fit < degree + 1:
        raise InsufficientPoints(
            f"{n_fit} points remain after excluding {tail_exclude}; need at least {degree + 1}"
        )
    arc = cumulative_arc_length(traj)[:n_fit]
    if arc[-1] <= 0.0:
        raise DegenerateTrajectory("fitted portion has zero arc length")
    u = arc / arc[-1]
    pos = traj.positions()[:n_fit]
    coeffs = np.stack([np.polyfit(u, pos[:, ax], degree) for ax in range(3)], axis=1)
    fitted = np.stack([np.polyval(coeffs[:, ax], u) for ax in range(3)], axis=1)
    residual = float(np.max(np.linalg.norm(fitted - pos, axis=1))) if n_fit else 0.0
    tail = traj.waypoints[n_fit:] if tail_exclude > 0 else ()
    return PolyTrajectory(
        coefficients=coeffs,
        preserved_tail=tuple(tail),
        fit_params=u,
        fit_residual=residual,
        source=traj,
    )
