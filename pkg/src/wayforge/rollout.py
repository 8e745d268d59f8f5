"""Open-loop episode execution: command channels with domain lag, the
scripted expert used to record demonstrations, and the rollout driver that
chains high-level subtask selection with low-level trajectory generation.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass

import numpy as np

from .episode import EpisodeLog
from .geometry import Pose, TOOL_DOWN
from .policy.high_level import next_subtask
from .tasks import APPROACH_CLEARANCE, GoalKind, SubtaskSpec, TaskSpec, check_success, reset
from .trajectory import Arm, Gripper, Trajectory, Waypoint
from .world import (
    OBJECT_CATALOG,
    DomainParams,
    IkFailure,
    Outcome,
    WorldState,
    observe_objects,
    step_follow,
)

MAX_SUBTASKS = 16
EXPERT_STEP = 0.008  # meters between consecutive expert waypoints (20 Hz at 0.16 m/s)
STRIKE_APEX = 0.12


class ArmChannel:
    """Per-arm command channel applying the domain's motion lag.

    Motion commands pass through a FIFO of depth ``lag`` (the arm holds its
    pose until the pipe fills); gripper commands act immediately at the
    currently executed pose, matching a directly-driven gripper.
    """

    def __init__(self, world: WorldState, models: dict, arm: Arm, log: EpisodeLog | None):
        self.world = world
        self.models = models
        self.arm = arm
        self.log = log
        self.pending: deque = deque()
        st = world.arms[arm]
        self.last_executed = Waypoint(st.ee_pose, st.gripper, 0.0)
        self.residual = np.zeros(3)  # correction trim added to motion targets

    def _step(self, wp: Waypoint) -> list:
        events = step_follow(self.world, self.models, self.arm, wp)
        self.last_executed = wp
        if self.log is not None:
            st = self.world.arms[self.arm]
            t = self.world.time
            self.log.log_arm(t, self.arm, st.q, st.ee_pose, st.gripper, wp)
            for ev in events:
                self.log.log_event(t, ev)
            self.log.log_objects(t, self.world.objects)
        return events

    def _with_residual(self, pose: Pose) -> Pose:
        if not np.any(self.residual):
            return pose
        return Pose(pose.position + self.residual, pose.orientation)

    def send_motion(self, pose: Pose) -> list:
        grip = self.world.arms[self.arm].gripper
        self.pending.append(Waypoint(self._with_residual(pose), grip, 0.0))
        if len(self.pending) > self.world.domain.command_lag:
            return self._step(self.pending.popleft())
        # pipe not yet full: arm holds its pose for this tick
        hold = Waypoint(self.last_executed.pose, grip, 0.0)
        return self._step(hold)

    def send_gripper(self, gripper: Gripper, subtask: SubtaskSpec | None, command: str) -> list:
        wp = Waypoint(self.last_executed.pose, gripper, 0.0)
        events = self._step(wp)
        if self.log is not None:
            detail = {}
            for ev in events:
                if ev.kind in ("grasped", "released", "grasp_missed"):
                    detail = {"event": ev.kind, "object": ev.object_id}
            self.log.log_command(self.world.time, self.arm, command, subtask=subtask, detail=detail)
        return events

    def flush(self) -> None:
        grip = self.world.arms[self.arm].gripper
        while self.pending:
            wp = self.pending.popleft()
            self._step(Waypoint(wp.pose, grip, 0.0))


def _leg(points, a, b, step):
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    dist = float(np.linalg.norm(b - a))
    n = max(1, int(np.ceil(dist / step)))
    for i in range(1, n + 1):
        points.append(a + (b - a) * (i / n))


class ScriptedExpert:
    """Geometric demonstration planner: rise, travel at clearance, descend.

    Entries into an object's body cylinder happen strictly from above, so
    expert demonstrations never disturb the scene.
    """

    def __init__(self, step: float = EXPERT_STEP):
        self.step = step

    def __call__(self, sub: SubtaskSpec, obs: dict) -> Trajectory:
        p_s = sub.p_s.position
        p_e = sub.p_e.position
        if sub.goal.kind is GoalKind.GRASP:
            o = obs[sub.goal.object_id]
            spec = OBJECT_CATALOG[o["cls"]]
            above = (spec.height - spec.grasp_height) + APPROACH_CLEARANCE
            travel_z = max(p_s[2], p_e[2] + above)
        elif sub.goal.kind is GoalKind.STRIKE:
            travel_z = max(p_s[2], p_e[2] + STRIKE_APEX)
        else:
            travel_z = max(p_s[2], p_e[2] + APPROACH_CLEARANCE)
        pts = [p_s.copy()]
        _leg(pts, p_s, [p_s[0], p_s[1], travel_z], self.step)
        _leg(pts, pts[-1], [p_e[0], p_e[1], travel_z], self.step)
        _leg(pts, pts[-1], p_e, self.step)
        pts[-1] = p_e.copy()
        grip = Gripper.OPEN if sub.goal.kind is GoalKind.GRASP else Gripper.CLOSED
        wps = [Waypoint(sub.p_s, grip, 0.0)]
        for i, p in enumerate(pts[1:], start=1):
            ori = TOOL_DOWN if i < len(pts) - 1 else sub.p_e.orientation
            wps.append(Waypoint(Pose(p, ori), grip, i * 0.05))
        return Trajectory(waypoints=tuple(wps), arm=sub.arm)


@dataclass
class RolloutResult:
    log: EpisodeLog
    world: WorldState
    outcome: Outcome


class ExpertFailure(RuntimeError):
    """The scripted expert could not produce enough successful episodes."""


def record_demos(
    task: TaskSpec,
    n: int,
    domain: DomainParams,
    models: dict,
    seed: int,
    low_level=None,
    max_attempts_per_demo: int = 25,
) -> list:
    """n successful demonstration logs; failed attempts retry with fresh seeds."""
    low_level = low_level or ScriptedExpert()
    logs = []
    attempt = 0
    budget = max(1, n) * max_attempts_per_demo
    while len(logs) < n and attempt < budget:
        ep_seed = int(np.random.SeedSequence([seed & (2**63 - 1), 7, attempt]).generate_state(1)[0] % (2**31))
        attempt += 1
        result = execute_rollout(task, low_level, ep_seed, domain, models)
        if result.outcome.success:
            logs.append(result.log)
    if len(logs) < n:
        raise ExpertFailure(f"only {len(logs)}/{n} successful demos after {attempt} attempts")
    return logs


def execute_rollout(
    task: TaskSpec,
    low_level,
    seed: int,
    domain: DomainParams,
    models: dict,
    high_level=next_subtask,
    max_subtasks: int = MAX_SUBTASKS,
) -> RolloutResult:
    """Run one seeded episode: repeatedly query the high-level policy for a
    subtask, the low-level policy for its trajectory, and execute open-loop.

    A missed grasp or strike ends the episode as a failure immediately (the
    executor is open-loop; there is no retry). IK failures are recorded as
    failed episodes, never raised.
    """
    world = reset(task, seed, domain, models)
    log = EpisodeLog(task.id, seed, domain)
    log.log_objects(0.0, world.objects)
    channels = {arm: ArmChannel(world, models, arm, log) for arm in (Arm.LEFT, Arm.RIGHT)}
    outcome = None
    try:
        for index in range(max_subtasks):
            obs = observe_objects(world)
            sub = high_level(task, obs, world.arms, world.strike_events, index)
            if sub is None:
                break
            traj = low_level(sub, obs)
            chan = channels[sub.arm]
            for wp in traj.waypoints:
                chan.send_motion(wp.pose)
            if sub.goal.kind is GoalKind.GRASP:
                chan.send_gripper(Gripper.CLOSED, sub, "grasp")
                chan.flush()
                if world.arms[sub.arm].held_object != sub.goal.object_id:
                    outcome = Outcome(False, f"grasp missed: {sub.goal.object_id}")
                    break
            else:
                chan.send_gripper(Gripper.OPEN, sub, "release")
                chan.flush()
                if sub.goal.kind is GoalKind.STRIKE:
                    struck = {oid for _, oid in world.strike_events}
                    if sub.goal.target_pose is not None and not struck:
                        outcome = Outcome(False, "strike missed")
                        break
        if outcome is None:
            outcome = check_success(task, world)
    except IkFailure as exc:
        outcome = Outcome(False, f"ik failure: {exc}")
    log.log_outcome(world.time, outcome)
    log.validate()
    return RolloutResult(log=log, world=world, outcome=outcome)
