"""High-level subtask selection: a deterministic state machine.

Given the current observations and arm states it emits the next subtask:
deliver whatever an arm is holding, otherwise grasp the nearest unprocessed
goal object on that object's side of the workspace, otherwise report the
task finished (None).
"""

from __future__ import annotations

import numpy as np

from ..tasks import (
    Goal,
    GoalKind,
    GoalRule,
    SubtaskSpec,
    TaskSpec,
    grasp_ee_pose,
    place_ee_pose,
    strike_ee_pose,
)
from ..trajectory import Arm
from ..world import ObjectClass


class InconsistentState(RuntimeError):
    """Observation claims an object is held by an arm that does not hold it."""


def _delivered(goal: GoalRule, obs: dict, strikes: set) -> bool:
    if goal.deliver is GoalKind.STRIKE:
        return goal.target_id in strikes
    obj = obs[goal.object_id]
    target = obs[goal.target_id]
    if target["cls"] is ObjectClass.MARKER:
        return obj["support"] == target["support"]  # both resting on the tray
    return obj["support"] == goal.target_id


def _target_ready(goal: GoalRule, task: TaskSpec, obs: dict, strikes: set) -> bool:
    for other in task.goals:
        if other.object_id == goal.target_id:
            return _delivered(other, obs, strikes)
    return True


def next_subtask(task: TaskSpec, obs: dict, arms: dict, strike_events, index: int) -> SubtaskSpec | None:
    """The next subtask to execute, or None when the task graph is complete."""
    strikes = {oid for _, oid in strike_events}
    for oid, o in obs.items():
        if o["held_by"] is not None:
            arm = o["held_by"]
            if arm not in arms:
                raise InconsistentState(f"{oid} held by unknown arm {arm}")
            if arms[arm].held_object != oid:
                raise InconsistentState(f"{oid} marked held by {arm} but the arm disagrees")

    # an arm holding a goal object delivers it
    for goal in task.goals:
        holder = obs[goal.object_id]["held_by"]
        if holder is None or _delivered(goal, obs, strikes):
            continue
        arm_state = arms[holder]
        held = obs[goal.object_id]
        grip_dz = float(arm_state.ee_pose.position[2] - held["pose"].position[2])
        target = obs[goal.target_id]
        if goal.deliver is GoalKind.STRIKE:
            p_e = strike_ee_pose(target["pose"], {"grip_dz": grip_dz})
        else:
            p_e = place_ee_pose(target["pose"], target["cls"], held["cls"], grip_dz)
        return SubtaskSpec(
            id=f"{goal.deliver.value}:{goal.object_id}>{goal.target_id}",
            index=index,
            type_index=1,
            arm=holder,
            p_s=arm_state.ee_pose,
            p_e=p_e,
            goal=Goal(goal.deliver, goal.object_id, target_pose=p_e),
        )

    # otherwise grasp the nearest available goal object with its side's arm
    best = None
    for goal in task.goals:
        if _delivered(goal, obs, strikes):
            continue
        o = obs[goal.object_id]
        if o["held_by"] is not None:
            continue  # held by an arm but not deliverable: handled above
        if not _target_ready(goal, task, obs, strikes):
            continue
        arm = Arm.LEFT if o["pose"].position[1] >= 0 else Arm.RIGHT
        gp = grasp_ee_pose(o["pose"], o["cls"])
        d = float(np.linalg.norm(gp.position - arms[arm].ee_pose.position))
        if best is None or d < best[0]:
            best = (d, goal, arm, gp)
    if best is None:
        return None
    _, goal, arm, gp = best
    return SubtaskSpec(
        id=f"grasp:{goal.object_id}",
        index=index,
        type_index=0,
        arm=arm,
        p_s=arms[arm].ee_pose,
        p_e=gp,
        goal=Goal(GoalKind.GRASP, goal.object_id),
    )
