"""Trajectory-level augmentation: the transforms that grow a handful of
demonstration segments into a large training dataset, plus demonstration
segmentation and the two-gate validated dataset builder.

Transforms are pure: they return new trajectories and never mutate inputs.
Every candidate must pass two gates before entering a dataset: the arm
kinematics gate (every waypoint solvable) and a mechanics gate that
re-executes the candidate's own subtask against its (identically
transformed) scene and demands the subtask goal succeed.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .dataset import Dataset, Entry
from .episode import EpisodeLog
from .geometry import Pose, quat_mirror_y
from .kinematics import is_executable
from .policy.encoding import encode_parts
from .tasks import Goal, GoalKind, SubtaskSpec
from .trajectory import Arm, Gripper, Trajectory, Waypoint, fit_polynomial, resample_uniform
from .world import (
    STACK_STABLE_FRAC,
    DomainParams,
    ObjectClass,
    ObjectState,
    WorldState,
    make_arm_state,
    step_teleport,
    _horizontal,
)

MIRROR = np.array([1.0, -1.0, 1.0])


def translate(traj: Trajectory, offset) -> Trajectory:
    """Shift every waypoint position by a constant offset."""
    offset = np.asarray(offset, dtype=float)
    if not np.all(np.isfinite(offset)):
        raise ValueError("offset must be finite")
    wps = tuple(
        Waypoint(Pose.unchecked(w.pose.position + offset, w.pose.orientation), w.gripper, w.timestamp)
        for w in traj.waypoints
    )
    return Trajectory(waypoints=wps, arm=traj.arm)


def flip_x(traj: Trajectory) -> Trajectory:
    """Mirror about the x-z plane (y negated) and swap the arm identifier.

    This is the mapping that makes one arm's trajectory usable by the other
    in the mirrored dual-arm workspace. Orientations are conjugated by the
    mirror; applying the flip twice returns the input exactly.
    """
    wps = tuple(
        Waypoint(
            Pose.unchecked(w.pose.position * MIRROR, quat_mirror_y(w.pose.orientation)),
            w.gripper,
            w.timestamp,
        )
        for w in traj.waypoints
    )
    return Trajectory(waypoints=wps, arm=traj.arm.opposite)


def add_gaussian_noise(
    traj: Trajectory, sigma: float, preserve=None, rng: np.random.Generator | None = None
) -> Trajectory:
    """Perturb waypoint positions with i.i.d. per-axis Gaussian noise.

    Waypoint indices in ``preserve`` (default: the final waypoint, whose
    position encodes the affordance) are kept bit-identical. Orientations,
    gripper states, and timestamps are untouched.
    """
    if sigma < 0:
        raise ValueError("sigma must be non-negative")
    if preserve is None:
        preserve = {len(traj) - 1}
    preserve = {i % len(traj) for i in preserve}
    if rng is None:
        rng = np.random.default_rng()
    wps = []
    for i, w in enumerate(traj.waypoints):
        noise = rng.normal(0.0, sigma, 3) if sigma > 0 else np.zeros(3)
        if i in preserve or sigma == 0:
            wps.append(w)
        else:
            wps.append(Waypoint(Pose.unchecked(w.pose.position + noise, w.pose.orientation), w.gripper, w.timestamp))
    return Trajectory(waypoints=tuple(wps), arm=traj.arm)


def nearest_waypoint_index(traj: Trajectory, point) -> int:
    d = np.linalg.norm(traj.positions() - np.asarray(point, dtype=float), axis=1)
    return int(np.argmin(d))


def resample_new_start(
    traj: Trajectory, bounds, rng: np.random.Generator | None = None, start=None,
    max_len: int | None = None,
) -> Trajectory:
    """Re-root the trajectory at a new start sampled uniformly in ``bounds``.

    The new start connects by a straight segment (subdivided to match the
    local waypoint spacing) to the nearest waypoint, and the trajectory
    continues from there unchanged. ``bounds`` is ((lo_x,lo_y,lo_z),
    (hi_x,hi_y,hi_z)); pass ``start`` to bypass sampling. With ``max_len``
    the connector is budgeted (coarser than local spacing if needed) and any
    remaining overflow consumes waypoints at the splice seam, so the final
    approach is always kept verbatim.
    """
    lo, hi = (np.asarray(b, dtype=float) for b in bounds)
    if np.any(hi < lo):
        raise ValueError("malformed bounds")
    if start is None:
        if rng is None:
            rng = np.random.default_rng()
        start = rng.uniform(lo, hi)
    start = np.asarray(start, dtype=float)
    k = nearest_waypoint_index(traj, start)
    anchor = traj.waypoints[k]
    gap = np.linalg.norm(anchor.pose.position - start)
    if k == 0 and gap == 0.0:
        return traj
    tail = traj.waypoints[k:]
    if len(tail) < 2:  # keep at least the final approach
        tail = traj.waypoints[-2:]
        anchor = tail[0]
        gap = np.linalg.norm(anchor.pose.position - start)
    arc = np.linalg.norm(np.diff(traj.positions(), axis=0), axis=1)
    local_spacing = float(np.median(arc[arc > 0])) if np.any(arc > 0) else gap
    n_conn = max(1, int(round(gap / local_spacing))) if gap > 0 else 0
    if max_len is not None and n_conn + len(tail) > max_len:
        budget = max(1, max_len - len(tail))
        n_conn = min(n_conn, budget)
        overflow = n_conn + len(tail) - max_len
        if overflow > 0:
            cut = min(overflow, len(tail) - 2)
            tail = tail[cut:]
            anchor = tail[0]
            gap = np.linalg.norm(anchor.pose.position - start)
    dt = traj.timestamps()
    step_dt = float(np.median(np.diff(dt)))
    wps = []
    t = anchor.timestamp - (n_conn) * step_dt
    t = max(t, 0.0)
    for i in range(n_conn):
        frac = i / n_conn
        p = start + frac * (anchor.pose.position - start)
        wps.append(Waypoint(Pose(p, anchor.pose.orientation), anchor.gripper, t))
        t += step_dt
        if t >= anchor.timestamp:
            t = anchor.timestamp - (n_conn - i - 1 + 0.5) * 1e-6
    wps.extend(tail)
    # timestamps must stay strictly increasing across the splice
    fixed, prev = [], -np.inf
    for w in wps:
        ts = w.timestamp
        if ts <= prev:
            ts = np.nextafter(prev, np.inf)
            w = Waypoint(w.pose, w.gripper, ts)
        prev = ts
        fixed.append(w)
    return Trajectory(waypoints=tuple(fixed), arm=traj.arm)


class NoCommands(ValueError):
    """Episode log holds no grasp/release commands to segment on."""


class NoSuccess(ValueError):
    """Only successful demonstrations seed augmentation."""


class ValidationStarvation(RuntimeError):
    """Candidate acceptance collapsed below 1% over a 10,000-candidate window."""


@dataclass(frozen=True)
class ContextObject:
    id: str
    cls: ObjectClass
    pose: Pose
    radius: float
    height: float
    support: str | None
    held_by: Arm | None

    @property
    def top_z(self) -> float:
        return self.pose.position[2] + 0.5 * self.height


@dataclass(frozen=True)
class SegmentContext:
    """Scene at a segment's start: enough to re-execute the subtask alone."""

    objects: tuple  # ContextObject
    arm: Arm

    def mirrored(self) -> "SegmentContext":
        objs = tuple(
            ContextObject(
                o.id, o.cls, o.pose.mirror_y(), o.radius, o.height, o.support,
                o.held_by.opposite if o.held_by else None,
            )
            for o in self.objects
        )
        return SegmentContext(objects=objs, arm=self.arm.opposite)

    def translated(self, offset) -> "SegmentContext":
        offset = np.asarray(offset, dtype=float)
        objs = tuple(
            ContextObject(
                o.id, o.cls, Pose(o.pose.position + offset, o.pose.orientation),
                o.radius, o.height, o.support, o.held_by,
            )
            for o in self.objects
        )
        return SegmentContext(objects=objs, arm=self.arm)


@dataclass(frozen=True)
class DemoSegment:
    subtask: SubtaskSpec
    trajectory: Trajectory
    source_episode: str
    domain_tag: str
    context: SegmentContext
    commanded: SubtaskSpec | None = None  # query as issued during the episode
    boundary_detail: dict = field(default_factory=dict)

    @property
    def key(self) -> str:
        return f"{self.source_episode}#{self.subtask.index}"


def _objects_at(record: dict) -> dict:
    return record["objects"]


def segment_episode(log: EpisodeLog) -> list:
    """One segment per interval between consecutive grasp/release commands.

    Segment boundaries are the command records; each segment's start/end
    poses come from the arm states at those boundaries, and the scene at the
    segment start is captured so the segment can be re-executed standalone.
    """
    if not log.outcome.success:
        raise NoSuccess("cannot segment a failed episode")
    commands = log.commands()
    if not commands:
        raise NoCommands("episode log holds no grasp/release commands")
    obj_records = [r for r in log.records if r["type"] == "objects"]

    segments = []
    index = 0
    for arm in (Arm.LEFT, Arm.RIGHT):
        arm_recs = log.arm_states(arm)
        arm_cmds = [c for c in commands if c["arm"] == arm.value and c["command"] in ("grasp", "release")]
        prev_t = -np.inf
        for cmd in arm_cmds:
            t_cmd = cmd["t"]
            window = [r for r in arm_recs if prev_t < r["t"] <= t_cmd]
            if len(window) < 2:
                prev_t = t_cmd
                continue
            wps = tuple(
                Waypoint(
                    Pose(np.array(r["ee"]["p"]), np.array(r["ee"]["q"])),
                    Gripper(r["gripper"]),
                    r["t"],
                )
                for r in window
            )
            traj = Trajectory(waypoints=wps, arm=arm)
            # scene at segment start: last objects record at or before the window
            before = [r for r in obj_records if r["t"] <= window[0]["t"]]
            scene = before[-1] if before else obj_records[0]
            ctx_objs = []
            for oid, o in _objects_at(scene).items():
                ctx_objs.append(
                    ContextObject(
                        id=oid,
                        cls=ObjectClass(o["cls"]),
                        pose=Pose.from_dict(o["pose"]),
                        radius=_radius_for(ObjectClass(o["cls"]), log.domain),
                        height=_height_for(ObjectClass(o["cls"])),
                        support=o["support"],
                        held_by=Arm(o["held_by"]) if o["held_by"] else None,
                    )
                )
            logged = cmd.get("subtask")
            sub_logged = None
            if logged is not None:
                sub_logged = SubtaskSpec.from_dict(logged)
                goal = sub_logged.goal
                type_index = sub_logged.type_index
                sub_id = sub_logged.id
            else:
                kind = GoalKind.GRASP if cmd["command"] == "grasp" else GoalKind.PLACE
                goal = Goal(kind, cmd.get("detail", {}).get("object"))
                type_index = 0 if kind is GoalKind.GRASP else 1
                sub_id = f"{kind.value}:{goal.object_id}"
            sub = SubtaskSpec(
                id=sub_id,
                index=index,
                type_index=type_index,
                arm=arm,
                p_s=wps[0].pose,
                p_e=wps[-1].pose,
                goal=goal,
            )
            segments.append(
                DemoSegment(
                    subtask=sub,
                    trajectory=traj,
                    source_episode=log.episode_id,
                    domain_tag=log.domain.name,
                    context=SegmentContext(objects=tuple(ctx_objs), arm=arm),
                    commanded=sub_logged,
                    boundary_detail=dict(cmd.get("detail", {})),
                )
            )
            index += 1
            prev_t = t_cmd
    segments.sort(key=lambda s: s.trajectory.waypoints[0].timestamp)
    segments = [replace(s, subtask=replace(s.subtask, index=i)) for i, s in enumerate(segments)]
    return segments


def _radius_for(cls: ObjectClass, domain: DomainParams) -> float:
    from .world import OBJECT_CATALOG

    return OBJECT_CATALOG[cls].radius + domain.radius_delta


def _height_for(cls: ObjectClass) -> float:
    from .world import OBJECT_CATALOG

    return OBJECT_CATALOG[cls].height


@dataclass(frozen=True)
class AugmentationConfig:
    noise_sigma: float = 0.01
    noise_preserve: tuple = ("last",)  # waypoint indices, or the string "last"
    translation_bounds: tuple = (0.10, 0.10, 0.02)
    flip_enabled: bool = True
    new_start_halfextents: tuple = (0.10, 0.10, 0.05)
    resample_n: int = 100
    poly_degree: int = 5
    tail_exclude: int | None = None  # None: 10% of waypoints, at least 3
    target_count: int = 1000
    seed: int = 0

    def preserve_indices(self, n: int) -> set:
        out = set()
        for p in self.noise_preserve:
            out.add(n - 1 if p == "last" else int(p) % n)
        return out

    def to_dict(self) -> dict:
        return {
            "noise_sigma": self.noise_sigma,
            "noise_preserve": list(self.noise_preserve),
            "translation_bounds": list(self.translation_bounds),
            "flip_enabled": self.flip_enabled,
            "new_start_halfextents": list(self.new_start_halfextents),
            "resample_n": self.resample_n,
            "poly_degree": self.poly_degree,
            "tail_exclude": self.tail_exclude,
            "target_count": self.target_count,
            "seed": self.seed,
        }

    @staticmethod
    def from_dict(d: dict) -> "AugmentationConfig":
        d = dict(d)
        d["noise_preserve"] = tuple(d.get("noise_preserve", ["last"]))
        d["translation_bounds"] = tuple(d.get("translation_bounds", (0.10, 0.10, 0.02)))
        d["new_start_halfextents"] = tuple(d.get("new_start_halfextents", (0.10, 0.10, 0.05)))
        return AugmentationConfig(**d)


def prepare_base(segment: DemoSegment, cfg: AugmentationConfig) -> Trajectory:
    """Smooth a raw segment and resample it uniformly: polynomial fit over
    normalized arc length with the final approach preserved verbatim, then
    arc-length-uniform waypoints."""
    traj = segment.trajectory
    n = len(traj)
    tail = cfg.tail_exclude if cfg.tail_exclude is not None else max(3, int(round(0.1 * n)))
    if n - tail >= cfg.poly_degree + 1 and n >= 8:
        smooth = fit_polynomial(traj, degree=cfg.poly_degree, tail_exclude=tail).sample_smoothed(
            max(120, 2 * n)
        )
    else:
        smooth = traj
    return resample_uniform(smooth, cfg.resample_n)


CHAINS = (
    ("noise",),
    ("translate",),
    ("flip",),
    ("new_start",),
    ("translate", "noise"),
    ("flip", "noise"),
    ("new_start", "noise"),
)


def apply_chain(base: Trajectory, segment: DemoSegment, chain, cfg: AugmentationConfig, rng):
    """Apply one transform chain to a prepared base.

    Returns (trajectory, context, params): the transformed candidate, the
    consistently transformed scene for gate 2, and the sampled parameters
    for provenance.
    """
    traj = base
    ctx = segment.context
    params: dict = {}
    for op in chain:
        if op == "noise":
            params["prenoise_end"] = [float(v) for v in traj.positions()[-1]]
            params["sigma"] = cfg.noise_sigma
            preserve = cfg.preserve_indices(len(traj))
            params["preserve"] = sorted(preserve)
            traj = add_gaussian_noise(traj, cfg.noise_sigma, preserve=preserve, rng=rng)
        elif op == "translate":
            b = cfg.translation_bounds
            offset = rng.uniform([-b[0], -b[1], -b[2]], [b[0], b[1], b[2]])
            params["offset"] = [float(v) for v in offset]
            traj = translate(traj, offset)
            ctx = ctx.translated(offset)
        elif op == "flip":
            traj = flip_x(traj)
            ctx = ctx.mirrored()
            params["flipped"] = True
        elif op == "new_start":
            he = cfg.new_start_halfextents
            start0 = traj.positions()[0]
            lo = start0 - he
            hi = start0 + he
            lo[2] = max(lo[2], 0.03)
            hi[2] = max(hi[2], lo[2] + 1e-6)
            start = rng.uniform(lo, hi)
            params["new_start"] = [float(v) for v in start]
            traj = resample_new_start(traj, (lo, hi), start=start, max_len=cfg.resample_n)
        else:
            raise ValueError(f"unknown transform {op}")
    return traj, ctx, params


def transform_pose_chain(pose: Pose, chain, params: dict) -> Pose:
    """Carry a pose through the geometric part of a transform chain (the
    same translation/mirror the trajectory received; noise and new-start do
    not move a commanded target)."""
    for op in chain:
        if op == "translate":
            pose = Pose.unchecked(pose.position + np.asarray(params["offset"]), pose.orientation)
        elif op == "flip":
            pose = pose.mirror_y()
    return pose


def _context_world(ctx: SegmentContext, models: dict) -> WorldState:
    """Minimal world rebuilt from a segment context (mechanics only)."""
    objects = {
        o.id: ObjectState(
            id=o.id, cls=o.cls, pose=o.pose, radius=o.radius, height=o.height,
            held_by=o.held_by, support=o.support,
        )
        for o in ctx.objects
    }
    arms = {arm: make_arm_state(models[arm]) for arm in (Arm.LEFT, Arm.RIGHT)}
    return WorldState(
        objects=objects, arms=arms, tick=0,
        domain=DomainParams.nominal(), rng=np.random.default_rng(0),
    )


def reexecute_segment(candidate: Trajectory, ctx: SegmentContext, goal: Goal, models: dict) -> bool:
    """Gate 2: run the candidate's own subtask against its scene and check
    the subtask goal (grasp held / placement supported / strike registered)."""
    from .geometry import quat_conjugate, quat_multiply, quat_normalize, quat_rotate

    world = _context_world(ctx, models)
    arm = candidate.arm
    st = world.arms[arm]
    start = candidate.waypoints[0]
    st.ee_pose = start.pose
    held = next((o for o in ctx.objects if o.held_by == arm), None)
    if held is not None:
        st.held_object = held.id
        st.gripper = Gripper.CLOSED
        inv_q = quat_conjugate(start.pose.orientation)
        st.grasp_offset_pos = quat_rotate(inv_q, held.pose.position - start.pose.position)
        st.grasp_offset_quat = quat_normalize(quat_multiply(inv_q, held.pose.orientation))
    else:
        st.gripper = Gripper.OPEN

    grip = st.gripper
    for wp in candidate.waypoints:
        step_teleport(world, arm, Waypoint(wp.pose, grip, wp.timestamp))

    if goal.kind is GoalKind.GRASP:
        step_teleport(world, arm, Waypoint(candidate.waypoints[-1].pose, Gripper.CLOSED, 0.0))
        want = goal.object_id
        got = world.arms[arm].held_object
        return got is not None and (want is None or got == want)
    if goal.kind is GoalKind.STRIKE:
        step_teleport(world, arm, Waypoint(candidate.waypoints[-1].pose, Gripper.OPEN, 0.0))
        return bool(world.strike_events)
    # place: release and check the held object came to rest on its target
    held_id = world.arms[arm].held_object
    if held_id is None:
        return False
    step_teleport(world, arm, Waypoint(candidate.waypoints[-1].pose, Gripper.OPEN, 0.0))
    obj = world.objects[held_id]
    target = _place_target(ctx, goal, held_id)
    if target is None:
        return obj.support is not None
    if target.cls is ObjectClass.MARKER:
        ok = obj.support == target.support
        return ok and np.linalg.norm(
            _horizontal(obj.pose.position) - _horizontal(target.pose.position)
        ) <= 0.03
    if obj.support != target.id:
        return False
    if target.cls in (ObjectClass.CAN, ObjectClass.BOTTLE, ObjectClass.CUP):
        off = np.linalg.norm(_horizontal(obj.pose.position) - _horizontal(target.pose.position))
        return off < STACK_STABLE_FRAC * target.radius
    return True


def _any_contact(candidate: Trajectory, ctx: SegmentContext) -> bool:
    """Vectorized preselect + exact confirm: does any EE step contact a free
    object? Confirmation reuses the simulator's own contact predicate."""
    from .world import KNOCK_CLEARANCE, _entry_contact

    pos = candidate.positions()
    p0 = pos[:-1]
    p1 = pos[1:]
    for o in ctx.objects:
        if o.held_by is not None or o.cls in (ObjectClass.MARKER, ObjectClass.TRAY):
            continue
        r = o.radius + KNOCK_CLEARANCE
        top = o.top_z
        c = o.pose.position[:2]
        d0 = np.hypot(p0[:, 0] - c[0], p0[:, 1] - c[1])
        d1 = np.hypot(p1[:, 0] - c[0], p1[:, 1] - c[1])
        side_pre = (d0 >= r) & (d1 < r)
        rim_pre = (p0[:, 2] > top) & (p1[:, 2] <= top)
        for i in np.nonzero(side_pre | rim_pre)[0]:
            if _entry_contact(p0[i], p1[i], c, r, top) is not None:
                return True
    return False


def _strike_registered(candidate: Trajectory, ctx: SegmentContext, arm: Arm) -> bool:
    """Vectorized strike trace for a held hammer along the candidate path."""
    from .geometry import quat_conjugate, quat_multiply, quat_rotate
    from .world import OBJECT_CATALOG, STRIKE_RADIUS

    hammer = next((o for o in ctx.objects if o.held_by == arm and o.cls is ObjectClass.HAMMER), None)
    targets = [o for o in ctx.objects if o.cls is ObjectClass.TARGET_CYLINDER]
    if hammer is None or not targets:
        return False
    start = candidate.waypoints[0].pose
    inv_q = quat_conjugate(start.orientation)
    off_pos = quat_rotate(inv_q, hammer.pose.position - start.position)
    off_quat = quat_multiply(inv_q, hammer.pose.orientation)
    head_off = np.array(OBJECT_CATALOG[ObjectClass.HAMMER].head_offset)
    head_in_ee = off_pos + quat_rotate(off_quat, head_off)
    heads = np.array(
        [w.pose.position + quat_rotate(w.pose.orientation, head_in_ee) for w in candidate.waypoints]
    )
    zs = candidate.positions()[:, 2]
    descending = zs[1:] < zs[:-1]
    for t in targets:
        top = t.pose.position.copy()
        top[2] = t.top_z
        close = np.linalg.norm(heads[1:] - top, axis=1) < STRIKE_RADIUS
        if np.any(close & descending):
            return True
    return False


def reexecute_segment_fast(candidate: Trajectory, ctx: SegmentContext, goal: Goal, models: dict) -> bool:
    """Gate 2 with a fast path: when no contact event can occur along the
    path, only the endgame (grasp / release / strike) needs evaluating; any
    possible side contact falls back to the exact stepwise re-execution."""
    from .geometry import quat_conjugate, quat_multiply, quat_normalize, quat_rotate

    if _any_contact(candidate, ctx):
        return reexecute_segment(candidate, ctx, goal, models)
    arm = candidate.arm
    if goal.kind is GoalKind.STRIKE:
        return _strike_registered(candidate, ctx, arm)
    world = _context_world(ctx, models)
    st = world.arms[arm]
    start = candidate.waypoints[0]
    end = candidate.waypoints[-1]
    held = next((o for o in ctx.objects if o.held_by == arm), None)
    if held is not None:
        st.held_object = held.id
        st.gripper = Gripper.CLOSED
        inv_q = quat_conjugate(start.pose.orientation)
        st.grasp_offset_pos = quat_rotate(inv_q, held.pose.position - start.pose.position)
        st.grasp_offset_quat = quat_normalize(quat_multiply(inv_q, held.pose.orientation))
        obj = world.objects[held.id]
        obj.pose = Pose.unchecked(
            end.pose.transform_point(st.grasp_offset_pos),
            quat_normalize(quat_multiply(end.pose.orientation, st.grasp_offset_quat)),
        )
    else:
        st.gripper = Gripper.OPEN
    st.ee_pose = end.pose

    if goal.kind is GoalKind.GRASP:
        step_teleport(world, arm, Waypoint(end.pose, Gripper.CLOSED, 0.0))
        want = goal.object_id
        got = world.arms[arm].held_object
        return got is not None and (want is None or got == want)
    held_id = world.arms[arm].held_object
    if held_id is None:
        return False
    step_teleport(world, arm, Waypoint(end.pose, Gripper.OPEN, 0.0))
    obj = world.objects[held_id]
    target = _place_target(ctx, goal, held_id)
    if target is None:
        return obj.support is not None
    if target.cls is ObjectClass.MARKER:
        ok = obj.support == target.support
        return ok and np.linalg.norm(
            _horizontal(obj.pose.position) - _horizontal(target.pose.position)
        ) <= 0.03
    if obj.support != target.id:
        return False
    if target.cls in (ObjectClass.CAN, ObjectClass.BOTTLE, ObjectClass.CUP):
        off = np.linalg.norm(_horizontal(obj.pose.position) - _horizontal(target.pose.position))
        return off < STACK_STABLE_FRAC * target.radius
    return True


def _place_target(ctx: SegmentContext, goal: Goal, held_id: str):
    """Most plausible place target in the context scene for gate 2.

    Prefers the surface nearest the trajectory's release point: the goal
    metadata does not name targets for reconstructed logs.
    """
    if goal.target_pose is None:
        candidates = [o for o in ctx.objects if o.cls in (ObjectClass.BASKET, ObjectClass.MARKER)]
        return candidates[0] if candidates else None
    best, best_d = None, np.inf
    for o in ctx.objects:
        if o.id == held_id or o.cls in (ObjectClass.HAMMER, ObjectClass.TARGET_CYLINDER, ObjectClass.TRAY):
            continue
        if o.held_by is not None:
            continue
        d = float(np.linalg.norm(_horizontal(o.pose.position) - _horizontal(goal.target_pose.position)))
        if d < best_d:
            best, best_d = o, d
    return best


def build_dataset(segments, cfg: AugmentationConfig, models: dict) -> Dataset:
    """Grow segments into cfg.target_count validated entries.

    Candidates cycle round-robin over (segment, transform chain) with one
    child RNG per candidate index, so the result is deterministic for a
    fixed seed and independent of evaluation order.
    """
    if not segments:
        raise ValueError("no demonstration segments supplied")
    bases = [prepare_base(seg, cfg) for seg in segments]
    entries = []
    n_seg = len(segments)
    k = 0
    window = [0, 0]  # candidates, accepted in the current 10k window
    while len(entries) < cfg.target_count:
        seg = segments[k % n_seg]
        base = bases[k % n_seg]
        chain = CHAINS[(k // n_seg) % len(CHAINS)]
        rng = np.random.default_rng(np.random.SeedSequence([cfg.seed & (2**63 - 1), 101, k]))
        traj, ctx, params = apply_chain(base, seg, chain, cfg, rng)
        k += 1
        window[0] += 1
        accepted = False
        ok, _idx = is_executable(models[traj.arm], traj)
        if ok and reexecute_segment_fast(traj, ctx, seg.subtask.goal, models):
            wps = traj.waypoints
            # corrected demonstrations keep the query the policy was given
            # (its end target can differ from where the corrected motion ends)
            if seg.commanded is not None:
                p_e = transform_pose_chain(seg.commanded.p_e, chain, params)
            else:
                p_e = wps[-1].pose
            query = encode_parts(seg.subtask.type_index, wps[0].pose, p_e)
            entries.append(
                Entry(
                    query=query,
                    trajectory=traj,
                    subtask_id=seg.subtask.id,
                    type_index=seg.subtask.type_index,
                    domain=seg.domain_tag,
                    provenance={
                        "segment": seg.key,
                        "chain": list(chain),
                        "candidate": k - 1,
                        "params": params,
                    },
                )
            )
            accepted = True
        window[1] += int(accepted)
        if window[0] >= 10000:
            if window[1] < 0.01 * window[0]:
                raise ValidationStarvation(
                    f"{window[1]}/{window[0]} candidates accepted in the last window"
                )
            window = [0, 0]
    return Dataset(
        entries=entries,
        meta={"config": cfg.to_dict(), "segments": [s.key for s in segments], "candidates": k},
    )
