"""Serial-chain arm models with forward/inverse kinematics.

Each arm is a 6-joint chain: joint i rotates about a local axis, then the
frame translates along its rotated z-axis by the link length, so at the
zero configuration the chain extends straight along +z from the base. The
left and right arms are mirror images about the x-z plane.

The IK solver is damped least squares on the geometric Jacobian with a
per-joint step clamp, warm-started from a seed and retried from a fixed set
of perturbed seeds when it stalls.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import _kinfast
from .geometry import Pose, matrix_to_quat, quat_to_matrix
from .trajectory import Arm, Trajectory

DEFAULT_LINK_LENGTHS = (0.10, 0.30, 0.30, 0.08, 0.04, 0.03)
DEFAULT_AXES = (2, 1, 1, 2, 1, 2)  # z,y,y,z,y,z
PITCH_LIMIT = 3.0
ROLL_LIMIT = 2.0 * np.pi  # z-axis joints swing freely, like commercial wrists
DEFAULT_BASE_OFFSET_Y = 0.28


def _default_limits() -> np.ndarray:
    lims = []
    for ax in DEFAULT_AXES:
        b = ROLL_LIMIT if ax == 2 else PITCH_LIMIT
        lims.append([-b, b])
    return np.array(lims)

# DLS settings
IK_DAMPING = 1e-2
IK_MAX_ITERS = 200
IK_STEP_CLAMP = 0.1
IK_POS_TOL = 5e-4
IK_ORI_TOL = 5e-3
POSITION_TOLERANCE = 1e-3  # contract tolerance reported to callers
ORIENTATION_TOLERANCE = 1e-2

# Elbow-bent rest configuration; zero at the z-axis joints keeps it
# mirror-invariant so both arms share it.
HOME_CONFIG = np.array([0.0, 0.15, 1.65, 0.0, np.pi - 1.8, 0.0])

# Restart seeds perturb only the pitch (y-axis) joints: effective for reach
# problems and exactly mirror-symmetric.
_RESTARTS = np.array(
    [
        [0.0, 0.5, 0.0, 0.0, 0.0, 0.0],
        [0.0, -0.5, 0.0, 0.0, 0.0, 0.0],
        [0.0, 0.0, 0.7, 0.0, 0.0, 0.0],
        [0.0, 0.0, -0.7, 0.0, 0.0, 0.0],
        [0.0, 0.6, -0.6, 0.0, 0.6, 0.0],
        [0.0, -0.6, 0.6, 0.0, -0.6, 0.0],
        [0.0, 1.2, -1.2, 0.0, 0.0, 0.0],
        [0.0, -1.2, 1.2, 0.0, 1.2, 0.0],
        [0.0, 1.8, -2.2, 0.0, 1.0, 0.0],
        [0.0, -1.8, 2.2, 0.0, -1.0, 0.0],
        [0.0, 2.4, -1.0, 0.0, -1.4, 0.0],
        [0.0, -0.9, -0.9, 0.0, 0.9, 0.0],
    ]
)


class JointLimitViolation(ValueError):
    """A joint angle lies outside its configured limits."""


class Unreachable(RuntimeError):
    """IK found no solution within the iteration budget."""

    def __init__(self, msg: str, position_residual: float, orientation_residual: float):
        super().__init__(msg)
        self.position_residual = position_residual
        self.orientation_residual = orientation_residual


@dataclass(frozen=True)
class JointConfig:
    angles: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "angles", np.asarray(self.angles, dtype=float))


@dataclass(frozen=True)
class ArmModel:
    arm: Arm
    link_lengths: np.ndarray = field(default_factory=lambda: np.array(DEFAULT_LINK_LENGTHS))
    axes: np.ndarray = field(default_factory=lambda: np.array(DEFAULT_AXES, dtype=np.int64))
    joint_limits: np.ndarray = field(default_factory=_default_limits)
    base_pose: Pose | None = None

    def __post_init__(self):
        ll = np.asarray(self.link_lengths, dtype=float)
        if np.any(ll <= 0):
            raise ValueError("link lengths must be positive")
        lim = np.asarray(self.joint_limits, dtype=float)
        if np.any(lim[:, 0] >= lim[:, 1]):
            raise ValueError("joint limits must satisfy min < max")
        object.__setattr__(self, "link_lengths", ll)
        object.__setattr__(self, "axes", np.asarray(self.axes, dtype=np.int64))
        object.__setattr__(self, "joint_limits", lim)
        if self.base_pose is None:
            y = DEFAULT_BASE_OFFSET_Y if self.arm is Arm.LEFT else -DEFAULT_BASE_OFFSET_Y
            object.__setattr__(self, "base_pose", Pose(np.array([0.0, y, 0.0])))

    @property
    def n_joints(self) -> int:
        return len(self.link_lengths)

    @property
    def reach(self) -> float:
        return float(np.sum(self.link_lengths))

    @property
    def base_rotation(self) -> np.ndarray:
        return quat_to_matrix(self.base_pose.orientation)

    def validate_config(self, q: np.ndarray) -> np.ndarray:
        q = np.asarray(q, dtype=float)
        if q.shape != (self.n_joints,):
            raise JointLimitViolation(f"expected {self.n_joints} joint angles, got shape {q.shape}")
        low, high = self.joint_limits[:, 0], self.joint_limits[:, 1]
        if np.any(q < low) or np.any(q > high):
            raise JointLimitViolation(f"joint angles {q} outside limits")
        return q

    def to_dict(self) -> dict:
        return {
            "arm": self.arm.value,
            "link_lengths": [float(v) for v in self.link_lengths],
            "axes": [int(v) for v in self.axes],
            "joint_limits": [[float(a), float(b)] for a, b in self.joint_limits],
            "base_pose": self.base_pose.to_dict(),
        }

    @staticmethod
    def from_dict(d: dict) -> "ArmModel":
        return ArmModel(
            arm=Arm(d["arm"]),
            link_lengths=np.array(d["link_lengths"], dtype=float),
            axes=np.array(d["axes"], dtype=np.int64),
            joint_limits=np.array(d["joint_limits"], dtype=float),
            base_pose=Pose.from_dict(d["base_pose"]),
        )


def default_models() -> dict:
    return {Arm.LEFT: ArmModel(arm=Arm.LEFT), Arm.RIGHT: ArmModel(arm=Arm.RIGHT)}


def save_models(models: dict, path: Path) -> None:
    payload = {arm.value: model.to_dict() for arm, model in models.items()}
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True))


def load_models(path: Path) -> dict:
    payload = json.loads(Path(path).read_text())
    return {Arm(k): ArmModel.from_dict(v) for k, v in payload.items()}


def forward_kinematics(model: ArmModel, q) -> Pose:
    """End-effector pose for a joint configuration within limits."""
    if isinstance(q, JointConfig):
        q = q.angles
    q = model.validate_config(q)
    p = np.empty(3)
    R = np.empty((3, 3))
    origins = np.empty((model.n_joints, 3))
    waxes = np.empty((model.n_joints, 3))
    _kinfast.fk_chain(
        model.base_pose.position, model.base_rotation, model.axes, model.link_lengths, q,
        p, R, origins, waxes,
    )
    return Pose(p, matrix_to_quat(R))


def solve_ik(model: ArmModel, target: Pose, seed=None) -> np.ndarray:
    """Joint configuration reaching the target pose.

    Raises Unreachable (carrying the best residuals achieved) when the target
    cannot be met within the iteration budget.
    """
    if seed is None:
        seed = HOME_CONFIG
    if isinstance(seed, JointConfig):
        seed = seed.angles
    seed = np.asarray(seed, dtype=float)
    dist = float(np.linalg.norm(np.asarray(target.position) - model.base_pose.position))
    if dist > model.reach:
        raise Unreachable(
            f"target {dist:.3f} m from base exceeds total reach {model.reach:.3f} m",
            position_residual=dist - model.reach,
            orientation_residual=0.0,
        )
    q, pe, oe, _, ok = _kinfast.ik_with_restarts(
        model.base_pose.position, model.base_rotation, model.axes, model.link_lengths,
        model.joint_limits, seed, _RESTARTS,
        np.asarray(target.position, dtype=float), quat_to_matrix(target.orientation),
        IK_DAMPING, IK_MAX_ITERS, IK_STEP_CLAMP, IK_POS_TOL, IK_ORI_TOL,
    )
    if not ok:
        raise Unreachable(
            f"no IK solution within {IK_MAX_ITERS} iterations "
            f"(best position residual {pe:.2e} m, orientation {oe:.2e} rad)",
            position_residual=float(pe),
            orientation_residual=float(oe),
        )
    return q


def is_executable(model: ArmModel, traj: Trajectory, q_start=None):
    """Whether every waypoint admits an IK solution, seeding each solve with
    the previous one. Returns (ok, first_failing_index_or_None)."""
    if q_start is None:
        q_start = HOME_CONFIG
    targets_p = np.ascontiguousarray(traj.positions())
    targets_R = np.stack([quat_to_matrix(w.pose.orientation) for w in traj.waypoints])
    q_out = np.empty((len(traj), model.n_joints))
    fail = _kinfast.trajectory_ik_scan(
        model.base_pose.position, model.base_rotation, model.axes, model.link_lengths,
        model.joint_limits, np.asarray(q_start, dtype=float), _RESTARTS,
        targets_p, targets_R, model.reach,
        IK_DAMPING, IK_MAX_ITERS, IK_STEP_CLAMP, IK_POS_TOL, IK_ORI_TOL, q_out,
    )
    if fail >= 0:
        return False, int(fail)
    return True, None


def solve_trajectory(model: ArmModel, traj: Trajectory, q_start=None) -> np.ndarray:
    """IK solutions for every waypoint (N, 6); raises Unreachable on failure."""
    if q_start is None:
        q_start = HOME_CONFIG
    targets_p = np.ascontiguousarray(traj.positions())
    targets_R = np.stack([quat_to_matrix(w.pose.orientation) for w in traj.waypoints])
    q_out = np.empty((len(traj), model.n_joints))
    fail = _kinfast.trajectory_ik_scan(
        model.base_pose.position, model.base_rotation, model.axes, model.link_lengths,
        model.joint_limits, np.asarray(q_start, dtype=float), _RESTARTS,
        targets_p, targets_R, model.reach,
        IK_DAMPING, IK_MAX_ITERS, IK_STEP_CLAMP, IK_POS_TOL, IK_ORI_TOL, q_out,
    )
    if fail >= 0:
        raise Unreachable(f"waypoint {fail} unreachable", np.inf, np.inf)
    return q_out
