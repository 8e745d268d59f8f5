"""Pydantic models for the session WebSocket protocol and HTTP responses."""

from __future__ import annotations

from typing import Any, Literal, Optional

from pydantic import BaseModel, Field, ValidationError  # noqa: F401 (re-exported)

CLIENT_TYPES = (
    "start_replay",
    "start_rollout",
    "residual_delta",
    "set_mode",
    "grasp",
    "release",
    "pause",
    "resume",
    "finalize",
)


class SessionMessage(BaseModel):
    type: str
    session_id: Optional[str] = None
    payload: dict = Field(default_factory=dict)


class StartReplayPayload(BaseModel):
    episode_id: str
    alpha: float = 0.05
    beta: float = 0.05
    allow_success: bool = False


class StartRolloutPayload(BaseModel):
    task_id: str
    checkpoint: str
    seed: int = 0
    domain: Literal["nominal", "shifted"] = "nominal"
    domain_offset: tuple[float, float, float] = (0.0, 0.0, 0.0)


class ResidualDeltaPayload(BaseModel):
    arm: Literal["left", "right"]
    delta: tuple[float, float, float]


class SetModePayload(BaseModel):
    mode: Literal["residual", "full_teleop"]


class GripperPayload(BaseModel):
    arm: Literal["left", "right"]


class FinalizePayload(BaseModel):
    dataset: Optional[str] = None  # corrections dataset name to append to
    complete: bool = False  # let the operator stand-in finish remaining subtasks


class ServerMessage(BaseModel):
    type: Literal["state_snapshot", "event", "outcome", "error"]
    session_id: Optional[str] = None
    payload: dict = Field(default_factory=dict)


def snapshot_payload(session) -> dict:
    """Full arm + object state for the UI, straight from the session world."""
    w = session.world
    arms = {}
    for arm, st in w.arms.items():
        arms[arm.value] = {
            "ee": st.ee_pose.to_dict(),
            "gripper": st.gripper.value,
            "held": st.held_object,
        }
    objects = {}
    for oid, o in w.objects.items():
        objects[oid] = {
            "cls": o.cls.value,
            "pose": o.pose.to_dict(),
            "radius": o.radius,
            "height": o.height,
            "held_by": o.held_by.value if o.held_by else None,
            "support": o.support,
        }
    return {
        "tick": w.tick,
        "time": w.time,
        "mode": session.mode.value,
        "paused": getattr(session, "paused", False),
        "done": session.cursor >= len(session._stream),
        "arms": arms,
        "objects": objects,
    }
