"""Human-in-the-loop correction sessions.

A failed episode is replayed tick-by-tick from its recorded command stream
inside a fresh world (same seed, same domain). An operator — human through
the service, or the scripted stand-in — injects wrist deltas that are
scaled, clamped, and added to the commanded waypoints as a persistent trim,
or switches to full teleoperation and drives the arm directly. Successful
corrected episodes are segmented and appended to the corrections dataset,
pairing each corrected trajectory with the query the policy was actually
given, which is what lets fine-tuning cancel systematic offsets.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .dataset import Dataset, Entry
from .episode import EpisodeLog
from .geometry import Pose
from .policy.encoding import encode_query
from .tasks import SubtaskSpec, TaskSpec, check_success, reset
from .trajectory import Arm, Gripper, Trajectory, Waypoint, resample_uniform
from .world import DomainParams, IkFailure, Outcome, WorldState, step_follow


class NotAFailure(ValueError):
    """Only failed episodes are replayed for correction (unless overridden)."""


class WrongMode(RuntimeError):
    pass


class SessionIncomplete(RuntimeError):
    pass


class CorrectionMode(str, Enum):
    RESIDUAL = "residual"
    FULL_TELEOP = "full_teleop"


@dataclass(frozen=True)
class CorrectionConfig:
    alpha: float = 0.05  # right-hand scale
    beta: float = 0.05  # left-hand scale
    max_step: float = 0.02  # per-tick applied-delta clamp, meters

    def __post_init__(self):
        if not (0.0 < self.alpha < 0.1 and 0.0 < self.beta < 0.1):
            raise ValueError("scale factors must lie in (0, 0.1)")

    def scale(self, arm: Arm) -> float:
        return self.alpha if arm is Arm.RIGHT else self.beta


@dataclass
class CorrectionEvent:
    tick: int
    arm: Arm
    raw_delta: np.ndarray
    applied_delta: np.ndarray
    mode: CorrectionMode


class CorrectionSession:
    """Replay of one episode with live corrections.

    The source log's per-tick commanded targets are re-executed against a
    world rebuilt from the log's seed and domain; zero corrections reproduce
    the source episode exactly.
    """

    def __init__(
        self,
        log: EpisodeLog,
        cfg: CorrectionConfig,
        task: TaskSpec,
        models: dict,
        allow_success: bool = False,
        session_id: str = "corr",
    ):
        if log.outcome.success and not allow_success:
            raise NotAFailure("source episode succeeded; nothing to correct")
        self.source = log
        self.cfg = cfg
        self.task = task
        self.models = models
        self.mode = CorrectionMode.RESIDUAL
        self.events: list[CorrectionEvent] = []
        self.trim = {Arm.LEFT: np.zeros(3), Arm.RIGHT: np.zeros(3)}
        self.world: WorldState = reset(task, log.seed, log.domain, models)
        self.corrected = EpisodeLog(
            task_id=log.task_id,
            seed=log.seed,
            domain=log.domain,
            session={"id": session_id, "source": log.episode_id, "alpha": cfg.alpha, "beta": cfg.beta},
        )
        self.corrected.log_objects(0.0, self.world.objects)
        # per-tick command stream: (arm, Waypoint, command record or None)
        self._stream = self._build_stream(log)
        self.cursor = 0
        self._outcome: Outcome | None = None
        # reference poses at session start ("relative to the initial poses of the hands")
        self.reference = {arm: self.world.arms[arm].ee_pose for arm in (Arm.LEFT, Arm.RIGHT)}

    @staticmethod
    def _build_stream(log: EpisodeLog):
        stream = []
        commands = {}
        for r in log.records:
            if r["type"] == "command":
                commands[(round(r["t"], 9), r["arm"])] = r
        for r in log.records:
            if r["type"] != "arm":
                continue
            arm = Arm(r["arm"])
            wp = Waypoint(
                Pose(np.array(r["target"]["p"]), np.array(r["target"]["q"])),
                Gripper(r["target"]["gripper"]),
                r["t"],
            )
            stream.append((arm, wp, commands.get((round(r["t"], 9), r["arm"]))))
        return stream

    # -- operator inputs ---------------------------------------------------
    def apply_residual(self, arm: Arm, raw_delta) -> np.ndarray:
        """Scale and clamp a wrist delta, folding it into the arm's trim."""
        if self.mode is not CorrectionMode.RESIDUAL:
            raise WrongMode("session is in full teleoperation")
        raw = np.asarray(raw_delta, dtype=float)
        applied = np.clip(self.cfg.scale(arm) * raw, -self.cfg.max_step, self.cfg.max_step)
        self.trim[arm] = self.trim[arm] + applied
        self.events.append(CorrectionEvent(self.world.tick, arm, raw, applied, self.mode))
        self.corrected.log_correction(self.world.time, arm, raw, applied, self.mode.value)
        return applied

    def teleop_delta(self, arm: Arm, raw_delta) -> np.ndarray:
        """Directly drive the end effector (unscaled, still clamped)."""
        if self.mode is not CorrectionMode.FULL_TELEOP:
            raise WrongMode("session is not in full teleoperation")
        raw = np.asarray(raw_delta, dtype=float)
        applied = np.clip(raw, -self.cfg.max_step, self.cfg.max_step)
        st = self.world.arms[arm]
        target = Waypoint(Pose(st.ee_pose.position + applied, st.ee_pose.orientation), st.gripper, 0.0)
        self._execute(arm, target, None)
        self.events.append(CorrectionEvent(self.world.tick, arm, raw, applied, self.mode))
        self.corrected.log_correction(self.world.time, arm, raw, applied, self.mode.value)
        return applied

    def command_gripper(self, arm: Arm, close: bool) -> None:
        """Manual grasp/release (teleoperation)."""
        st = self.world.arms[arm]
        grip = Gripper.CLOSED if close else Gripper.OPEN
        target = Waypoint(st.ee_pose, grip, 0.0)
        self._execute(arm, target, None)
        self.corrected.log_command(self.world.time, arm, "grasp" if close else "release", None, {"manual": True})

    def set_mode(self, mode: CorrectionMode | str) -> CorrectionMode:
        mode = CorrectionMode(mode)
        if mode is not self.mode:
            self.mode = mode
            if mode is CorrectionMode.RESIDUAL and self.cursor < len(self._stream):
                # re-base the trim so resuming the stream does not jump the arm
                arm, wp, _cmd = self._stream[max(self.cursor - 1, 0)]
                st = self.world.arms[arm]
                self.trim[arm] = st.ee_pose.position - wp.pose.position
            arm0 = Arm.LEFT
            self.corrected.log_command(self.world.time, arm0, "mode_switch", None, {"mode": mode.value})
        return self.mode

    # -- replay ------------------------------------------------------------
    def _execute(self, arm: Arm, wp: Waypoint, cmd) -> list:
        events = step_follow(self.world, self.models, arm, wp)
        st = self.world.arms[arm]
        t = self.world.time
        self.corrected.log_arm(t, arm, st.q, st.ee_pose, st.gripper, wp)
        for ev in events:
            self.corrected.log_event(t, ev)
        self.corrected.log_objects(t, self.world.objects)
        if cmd is not None:
            sub = SubtaskSpec.from_dict(cmd["subtask"]) if cmd.get("subtask") else None
            detail = dict(cmd.get("detail", {}))
            for ev in events:
                if ev.kind in ("grasped", "released", "grasp_missed"):
                    detail.update(event=ev.kind, object=ev.object_id)
            self.corrected.log_command(t, arm, cmd["command"], sub, detail)
        return events

    def step(self) -> bool:
        """Advance one recorded tick (no-op in teleop). False when exhausted."""
        if self.cursor >= len(self._stream):
            return False
        if self.mode is CorrectionMode.FULL_TELEOP:
            return True  # recorded stream pauses while the operator drives
        arm, wp, cmd = self._stream[self.cursor]
        self.cursor += 1
        trim = self.trim[arm]
        target = Waypoint(Pose(wp.pose.position + trim, wp.pose.orientation), wp.gripper, wp.timestamp)
        try:
            self._execute(arm, target, cmd)
        except IkFailure:
            self._outcome = Outcome(False, "ik failure during corrected replay")
            return False
        return self.cursor < len(self._stream)

    def run(self, corrector=None, finish_incomplete: bool = False, operator=None) -> Outcome:
        """Replay to the end, optionally consulting a corrector each tick.

        With ``finish_incomplete`` the session switches to full teleoperation
        once the recorded stream is exhausted and the operator (the scripted
        expert by default, standing in for the human) completes the remaining
        subtasks under the accumulated correction trim. Off by default so a
        zero-correction session reproduces the source episode exactly.
        """
        while True:
            if corrector is not None and self.mode is CorrectionMode.RESIDUAL:
                for arm, raw in corrector(self):
                    self.apply_residual(arm, raw)
            if not self.step():
                break
        if finish_incomplete and self._outcome is None:
            if not check_success(self.task, self.world).success:
                self._finish_with_operator(operator)
        return self.outcome()

    def _finish_with_operator(self, operator=None, max_subtasks: int = 16, max_attempts: int = 3) -> None:
        """Complete the task manually after the recorded motion runs out.

        A missed grasp is retried like a human operator would (the object may
        have been nudged; fresh observation, another attempt), up to
        ``max_attempts`` per object.
        """
        from .policy.high_level import next_subtask
        from .rollout import ScriptedExpert
        from .world import Gripper as G, observe_objects

        operator = operator or ScriptedExpert()
        self.set_mode(CorrectionMode.FULL_TELEOP)
        attempts: dict = {}
        for index in range(max_subtasks):
            obs = observe_objects(self.world)
            sub = next_subtask(self.task, obs, self.world.arms, self.world.strike_events, index)
            if sub is None:
                break
            traj = operator(sub, obs)
            trim = self.trim[sub.arm]
            st = self.world.arms[sub.arm]
            closing = sub.goal.kind.value == "grasp"
            if closing and st.gripper is G.CLOSED and st.held_object is None:
                # stale closed gripper from an earlier miss: open before retrying
                self._execute(sub.arm, Waypoint(st.ee_pose, G.OPEN, 0.0), None)
            grip = self.world.arms[sub.arm].gripper
            try:
                for wp in traj.waypoints:
                    target = Waypoint(
                        Pose(wp.pose.position + trim, wp.pose.orientation), grip, wp.timestamp
                    )
                    self._execute(sub.arm, target, None)
                final = self.world.arms[sub.arm].ee_pose
                events = self._execute(
                    sub.arm, Waypoint(final, G.CLOSED if closing else G.OPEN, 0.0), None
                )
            except IkFailure:
                self._outcome = Outcome(False, "ik failure during manual completion")
                return
            detail = {"manual": True}
            for ev in events:
                if ev.kind in ("grasped", "released", "grasp_missed"):
                    detail.update(event=ev.kind, object=ev.object_id)
            self.corrected.log_command(
                self.world.time, sub.arm, "grasp" if closing else "release", sub, detail
            )
            if closing and self.world.arms[sub.arm].held_object != sub.goal.object_id:
                n = attempts.get(sub.goal.object_id, 0) + 1
                attempts[sub.goal.object_id] = n
                if n >= max_attempts:
                    self._outcome = Outcome(
                        False, f"grasp missed during manual completion: {sub.goal.object_id}"
                    )
                    return

    def outcome(self) -> Outcome:
        if self._outcome is None:
            self._outcome = check_success(self.task, self.world)
        return self._outcome

    def finalize(self):
        """Close the session: returns (corrected log, outcome)."""
        if self.cursor < len(self._stream) and self._outcome is None:
            raise SessionIncomplete(f"{len(self._stream) - self.cursor} ticks remain")
        out = self.outcome()
        self.corrected.log_outcome(self.world.time, out)
        self.corrected.validate()
        return self.corrected, out


def start_replay(
    log: EpisodeLog, cfg: CorrectionConfig, task: TaskSpec, models: dict,
    allow_success: bool = False, session_id: str = "corr",
) -> CorrectionSession:
    return CorrectionSession(log, cfg, task, models, allow_success=allow_success, session_id=session_id)


def append_to_corrections(
    corrections: Dataset, corrected_log: EpisodeLog, horizon: int = 100
) -> int:
    """Append a successful corrected episode's segments to the corrections
    dataset.

    Each entry pairs the corrected executed trajectory with the query the
    policy received during the replay (taken from the logged subtask), so a
    systematic offset between commanded and corrected motion is visible to
    fine-tuning.
    """
    from .augment import segment_episode

    if not corrected_log.outcome.success:
        return 0
    added = 0
    for seg in segment_episode(corrected_log):
        if seg.subtask.goal.kind.value == "grasp" and seg.boundary_detail.get("event") != "grasped":
            continue  # retried attempt: only the successful grasp teaches
        traj = seg.trajectory
        if len(traj) > horizon:
            traj = resample_uniform(traj, horizon)
        query_sub = seg.commanded if seg.commanded is not None else seg.subtask
        entry = Entry(
            query=encode_query(query_sub),
            trajectory=traj,
            subtask_id=query_sub.id,
            type_index=query_sub.type_index,
            domain=corrected_log.domain.name,
            provenance={
                "segment": seg.key,
                "chain": ["hitl"],
                "source": "hitl",
                "session": corrected_log.session.get("id", ""),
                "episode": corrected_log.episode_id,
            },
        )
        corrections.entries.append(entry)
        added += 1
    return added


def scripted_corrector(offset, gain: float = 0.5, tolerance: float | None = None, arms=(Arm.LEFT, Arm.RIGHT)):
    """Headless stand-in for the human operator.

    Knows the injected systematic offset and each tick emits residual deltas
    proportional to the remaining error until the accumulated trim cancels
    the offset to within ``tolerance`` (default: 10% of the offset, at most
    5 mm, so the cumulative correction lands within 10% of it).
    """
    target_trim = -np.asarray(offset, dtype=float)
    if tolerance is None:
        tolerance = min(0.005, 0.1 * float(np.linalg.norm(target_trim))) or 0.005

    def corrector(session: CorrectionSession):
        out = []
        for arm in arms:
            err = target_trim - session.trim[arm]
            if np.linalg.norm(err) >= tolerance:
                scale = session.cfg.scale(arm)
                out.append((arm, gain * err / scale))
        return out

    return corrector
