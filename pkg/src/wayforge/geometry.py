"""Rigid-body geometry primitives: unit quaternions and poses.

Quaternions are stored (w, x, y, z) and kept unit-norm. All functions
accept and return plain numpy arrays so they compose freely with the
rest of the pipeline.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

QUAT_NORM_TOL = 1e-9

IDENTITY_QUAT = np.array([1.0, 0.0, 0.0, 0.0])


def quat_normalize(q: np.ndarray) -> np.ndarray:
    n = np.linalg.norm(q)
    if n == 0.0 or not np.isfinite(n):
        raise ValueError("cannot normalize zero or non-finite quaternion")
    return q / n


def quat_multiply(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    aw, ax, ay, az = a
    bw, bx, by, bz = b
    return np.array(
        [
            aw * bw - ax * bx - ay * by - az * bz,
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw,
        ]
    )


def quat_conjugate(q: np.ndarray) -> np.ndarray:
    return np.array([q[0], -q[1], -q[2], -q[3]])


def quat_rotate(q: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Rotate vector v by unit quaternion q."""
    w, x, y, z = q
    vx, vy, vz = v
    # v + 2*w*(u x v) + 2*(u x (u x v)) with u = (x,y,z), crosses unrolled
    tx = 2.0 * (y * vz - z * vy)
    ty = 2.0 * (z * vx - x * vz)
    tz = 2.0 * (x * vy - y * vx)
    return np.array(
        [
            vx + w * tx + (y * tz - z * ty),
            vy + w * ty + (z * tx - x * tz),
            vz + w * tz + (x * ty - y * tx),
        ]
    )


def quat_to_matrix(q: np.ndarray) -> np.ndarray:
    w, x, y, z = q
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


def matrix_to_quat(m: np.ndarray) -> np.ndarray:
    """Rotation matrix to unit quaternion (w >= 0 convention)."""
    tr = m[0, 0] + m[1, 1] + m[2, 2]
    if tr > 0:
        s = np.sqrt(tr + 1.0) * 2.0
        q = np.array(
            [0.25 * s, (m[2, 1] - m[1, 2]) / s, (m[0, 2] - m[2, 0]) / s, (m[1, 0] - m[0, 1]) / s]
        )
    elif m[0, 0] > m[1, 1] and m[0, 0] > m[2, 2]:
        s = np.sqrt(1.0 + m[0, 0] - m[1, 1] - m[2, 2]) * 2.0
        q = np.array(
            [(m[2, 1] - m[1, 2]) / s, 0.25 * s, (m[0, 1] + m[1, 0]) / s, (m[0, 2] + m[2, 0]) / s]
        )
    elif m[1, 1] > m[2, 2]:
        s = np.sqrt(1.0 + m[1, 1] - m[0, 0] - m[2, 2]) * 2.0
        q = np.array(
            [(m[0, 2] - m[2, 0]) / s, (m[0, 1] + m[1, 0]) / s, 0.25 * s, (m[1, 2] + m[2, 1]) / s]
        )
    else:
        s = np.sqrt(1.0 + m[2, 2] - m[0, 0] - m[1, 1]) * 2.0
        q = np.array(
            [(m[1, 0] - m[0, 1]) / s, (m[0, 2] + m[2, 0]) / s, (m[1, 2] + m[2, 1]) / s, 0.25 * s]
        )
    if q[0] < 0:
        q = -q
    return quat_normalize(q)


def quat_slerp(a: np.ndarray, b: np.ndarray, t: float) -> np.ndarray:
    """Spherical interpolation with the shortest-arc sign convention."""
    dot = float(np.dot(a, b))
    if dot < 0.0:
        b = -b
        dot = -dot
    if dot > 1.0 - 1e-12:
        return quat_normalize(a + t * (b - a))
    theta = np.arccos(min(dot, 1.0))
    s = np.sin(theta)
    return quat_normalize((np.sin((1.0 - t) * theta) / s) * a + (np.sin(t * theta) / s) * b)


def quat_angle(a: np.ndarray, b: np.ndarray) -> float:
    """Angle of the relative rotation between two unit quaternions, radians."""
    dot = abs(float(np.dot(a, b)))
    return 2.0 * np.arccos(min(dot, 1.0))


def quat_mirror_y(q: np.ndarray) -> np.ndarray:
    """Conjugate a rotation by the x-z plane mirror (y negation).

    A rotation (axis a, angle t) maps to (Ma, -t) with M = diag(1,-1,1),
    i.e. (w, x, y, z) -> (w, -x, y, -z).
    """
    return np.array([q[0], -q[1], q[2], -q[3]])


@dataclass(frozen=True)
class Pose:
    """Position (meters) and orientation (unit quaternion, w-x-y-z)."""

    position: np.ndarray
    orientation: np.ndarray = field(default_factory=lambda: IDENTITY_QUAT.copy())

    def __post_init__(self):
        p = np.asarray(self.position, dtype=float)
        q = np.asarray(self.orientation, dtype=float)
        if p.shape != (3,) or not np.all(np.isfinite(p)):
            raise ValueError(f"position must be a finite 3-vector, got {p!r}")
        if q.shape != (4,):
            raise ValueError(f"orientation must be a 4-vector quaternion, got {q!r}")
        if abs(np.linalg.norm(q) - 1.0) > QUAT_NORM_TOL:
            raise ValueError(f"quaternion norm {np.linalg.norm(q)} deviates from 1 beyond {QUAT_NORM_TOL}")
        object.__setattr__(self, "position", p)
        object.__setattr__(self, "orientation", q)

    @classmethod
    def unchecked(cls, position: np.ndarray, orientation: np.ndarray) -> "Pose":
        """Skip validation for values derived from already-valid poses."""
        pose = object.__new__(cls)
        object.__setattr__(pose, "position", position)
        object.__setattr__(pose, "orientation", orientation)
        return pose

    def transform_point(self, v: np.ndarray) -> np.ndarray:
        return self.position + quat_rotate(self.orientation, np.asarray(v, dtype=float))

    def compose(self, other: "Pose") -> "Pose":
        """self ∘ other: apply other in self's frame."""
        return Pose(
            self.transform_point(other.position),
            quat_normalize(quat_multiply(self.orientation, other.orientation)),
        )

    def mirror_y(self) -> "Pose":
        return Pose(self.position * np.array([1.0, -1.0, 1.0]), quat_mirror_y(self.orientation))

    def almost_equal(self, other: "Pose", pos_tol: float = 1e-9, ang_tol: float = 1e-9) -> bool:
        return (
            np.linalg.norm(self.position - other.position) <= pos_tol
            and quat_angle(self.orientation, other.orientation) <= ang_tol
        )

    def to_dict(self) -> dict:
        return {"p": [float(v) for v in self.position], "q": [float(v) for v in self.orientation]}

    @staticmethod
    def from_dict(d: dict) -> "Pose":
        return Pose(np.array(d["p"], dtype=float), np.array(d["q"], dtype=float))


TOOL_DOWN = np.array([0.0, 1.0, 0.0, 0.0])  # 180 deg about x: tool z-axis points down
