"""Task definitions: spawn rules, subtask structure, and success predicates.

A task is data: objects with spawn distributions plus ordered goal rules
(grasp an object, then deliver it by placing or striking). The high-level
state machine interprets these rules against observations at rollout time.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np

from .geometry import Pose, TOOL_DOWN
from .kinematics import HOME_CONFIG
from .trajectory import Arm
from .world import (
    OBJECT_CATALOG,
    SPAWN_MARGIN,
    STACK_STABLE_FRAC,
    TABLE_ID,
    DomainParams,
    ObjectClass,
    ObjectState,
    Outcome,
    SpawnCollision,
    WorldState,
    make_arm_state,
    _horizontal,
)

APPROACH_CLEARANCE = 0.06  # travel height above obstacles during transfers
DROP_HEIGHT = 0.04  # release height above the resting surface
PLACE_TOLERANCE = 0.03  # drink-tray marker distance criterion


class TaskKind(str, Enum):
    BOTTLE_COLLECTING = "bottle_collecting"
    STACKING = "stacking"
    HAMMERING = "hammering"
    DRINK_TRAY = "drink_tray"


class GoalKind(str, Enum):
    GRASP = "grasp"
    PLACE = "place"
    STRIKE = "strike"


@dataclass(frozen=True)
class SpawnRule:
    id: str
    cls: ObjectClass
    nominal: tuple  # (x, y)
    bounds: tuple  # (+-dx, +-dy); zero means fixed

    def sample_xy(self, rng: np.random.Generator) -> np.ndarray:
        dx, dy = self.bounds
        x = self.nominal[0] if dx == 0 else rng.uniform(self.nominal[0] - dx, self.nominal[0] + dx)
        y = self.nominal[1] if dy == 0 else rng.uniform(self.nominal[1] - dy, self.nominal[1] + dy)
        return np.array([x, y])


@dataclass(frozen=True)
class GoalRule:
    """Grasp ``object_id`` and deliver it: place onto a target or strike it."""

    object_id: str
    deliver: GoalKind
    target_id: str  # container / stack base / strike target / marker


@dataclass(frozen=True)
class Goal:
    kind: GoalKind
    object_id: str | None = None
    target_pose: Pose | None = None

    def to_dict(self) -> dict:
        return {
            "kind": self.kind.value,
            "object_id": self.object_id,
            "target_pose": self.target_pose.to_dict() if self.target_pose else None,
        }


@dataclass(frozen=True)
class SubtaskSpec:
    id: str  # e.g. "grasp:bottle_a"
    index: int  # order within the episode
    type_index: int  # grasp=0, deliver=1; encodes into the policy query
    arm: Arm
    p_s: Pose
    p_e: Pose
    goal: Goal

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "index": self.index,
            "type_index": self.type_index,
            "arm": self.arm.value,
            "p_s": self.p_s.to_dict(),
            "p_e": self.p_e.to_dict(),
            "goal": self.goal.to_dict(),
        }

    @staticmethod
    def from_dict(d: dict) -> "SubtaskSpec":
        g = d["goal"]
        return SubtaskSpec(
            id=d["id"],
            index=d["index"],
            type_index=d["type_index"],
            arm=Arm(d["arm"]),
            p_s=Pose.from_dict(d["p_s"]),
            p_e=Pose.from_dict(d["p_e"]),
            goal=Goal(
                kind=GoalKind(g["kind"]),
                object_id=g["object_id"],
                target_pose=Pose.from_dict(g["target_pose"]) if g["target_pose"] else None,
            ),
        )


@dataclass(frozen=True)
class TaskSpec:
    id: str
    kind: TaskKind
    spawns: tuple  # SpawnRule, spawn order
    goals: tuple  # GoalRule; delivery structure
    stack_order: tuple = ()  # stacking: object ids bottom to top

    def spawn_rule(self, oid: str) -> SpawnRule:
        for s in self.spawns:
            if s.id == oid:
                return s
        raise KeyError(oid)

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "kind": self.kind.value,
            "spawns": [
                {"id": s.id, "cls": s.cls.value, "nominal": list(s.nominal), "bounds": list(s.bounds)}
                for s in self.spawns
            ],
            "goals": [
                {"object_id": g.object_id, "deliver": g.deliver.value, "target_id": g.target_id}
                for g in self.goals
            ],
            "stack_order": list(self.stack_order),
        }

    @staticmethod
    def from_dict(d: dict) -> "TaskSpec":
        return TaskSpec(
            id=d["id"],
            kind=TaskKind(d["kind"]),
            spawns=tuple(
                SpawnRule(s["id"], ObjectClass(s["cls"]), tuple(s["nominal"]), tuple(s["bounds"]))
                for s in d["spawns"]
            ),
            goals=tuple(
                GoalRule(g["object_id"], GoalKind(g["deliver"]), g["target_id"]) for g in d["goals"]
            ),
            stack_order=tuple(d.get("stack_order", ())),
        )

    def save(self, path: Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True))

    @staticmethod
    def load(path: Path) -> "TaskSpec":
        return TaskSpec.from_dict(json.loads(Path(path).read_text()))


def builtin_tasks() -> dict:
    bottle = TaskSpec(
        id="bottle_collecting",
        kind=TaskKind.BOTTLE_COLLECTING,
        spawns=(
            SpawnRule("basket", ObjectClass.BASKET, (0.42, 0.0), (0.0, 0.0)),
            SpawnRule("bottle_a", ObjectClass.BOTTLE, (0.30, 0.28), (0.20, 0.20)),
            SpawnRule("bottle_b", ObjectClass.BOTTLE, (0.30, -0.28), (0.20, 0.20)),
            SpawnRule("bottle_c", ObjectClass.BOTTLE, (0.32, 0.0), (0.12, 0.20)),
        ),
        goals=(
            GoalRule("bottle_a", GoalKind.PLACE, "basket"),
            GoalRule("bottle_b", GoalKind.PLACE, "basket"),
            GoalRule("bottle_c", GoalKind.PLACE, "basket"),
        ),
    )
    stacking = TaskSpec(
        id="stacking",
        kind=TaskKind.STACKING,
        spawns=(
            SpawnRule("can_base", ObjectClass.CAN, (0.38, 0.0), (0.05, 0.05)),
            SpawnRule("can_mid", ObjectClass.CAN, (0.26, 0.30), (0.10, 0.10)),
            SpawnRule("can_top", ObjectClass.CAN, (0.26, -0.30), (0.10, 0.10)),
        ),
        goals=(
            GoalRule("can_mid", GoalKind.PLACE, "can_base"),
            GoalRule("can_top", GoalKind.PLACE, "can_mid"),
        ),
        stack_order=("can_base", "can_mid", "can_top"),
    )
    hammering = TaskSpec(
        id="hammering",
        kind=TaskKind.HAMMERING,
        spawns=(
            SpawnRule("target", ObjectClass.TARGET_CYLINDER, (0.42, -0.08), (0.06, 0.06)),
            SpawnRule("hammer", ObjectClass.HAMMER, (0.26, -0.30), (0.10, 0.10)),
        ),
        goals=(GoalRule("hammer", GoalKind.STRIKE, "target"),),
    )
    tray = TaskSpec(
        id="drink_tray",
        kind=TaskKind.DRINK_TRAY,
        spawns=(
            SpawnRule("tray", ObjectClass.TRAY, (0.40, 0.0), (0.0, 0.0)),
            SpawnRule("marker_red", ObjectClass.MARKER, (0.40, 0.06), (0.0, 0.0)),
            SpawnRule("marker_blue", ObjectClass.MARKER, (0.40, -0.06), (0.0, 0.0)),
            SpawnRule("cup", ObjectClass.CUP, (0.24, 0.30), (0.10, 0.10)),
            SpawnRule("tray_bottle", ObjectClass.BOTTLE, (0.24, -0.30), (0.10, 0.10)),
        ),
        goals=(
            GoalRule("cup", GoalKind.PLACE, "marker_red"),
            GoalRule("tray_bottle", GoalKind.PLACE, "marker_blue"),
        ),
    )
    # cups are graspable in this task
    return {t.id: t for t in (bottle, stacking, hammering, tray)}


def reset(task: TaskSpec, seed: int, domain: DomainParams, models: dict) -> WorldState:
    """Spawn the world deterministically from (task, seed, domain)."""
    rng = np.random.default_rng(np.random.SeedSequence([int(seed) & (2**63 - 1), 17]))
    objects: dict[str, ObjectState] = {}
    for rule in task.spawns:
        spec = OBJECT_CATALOG[rule.cls]
        radius = spec.radius + domain.radius_delta
        placed = False
        for _attempt in range(40):
            xy = rule.sample_xy(rng)
            ok = True
            for other in objects.values():
                if other.cls is ObjectClass.MARKER or rule.cls is ObjectClass.MARKER:
                    continue  # markers are flat decals
                min_sep = radius + other.radius + SPAWN_MARGIN
                if rule.cls is ObjectClass.TRAY or other.cls is ObjectClass.TRAY:
                    pass  # items never spawn on the tray; rules keep them apart
                if np.linalg.norm(xy - _horizontal(other.pose.position)) < min_sep:
                    ok = False
                    break
            if ok:
                z = 0.5 * spec.height
                if rule.cls is ObjectClass.MARKER:
                    # markers sit on the tray surface
                    tray = next((o for o in objects.values() if o.cls is ObjectClass.TRAY), None)
                    z = (tray.top_z if tray else 0.0) + 0.5 * spec.height
                objects[rule.id] = ObjectState(
                    id=rule.id,
                    cls=rule.cls,
                    pose=Pose(np.array([xy[0], xy[1], z])),
                    radius=radius,
                    height=spec.height,
                    support=TABLE_ID,
                )
                placed = True
                break
        if not placed:
            raise SpawnCollision(f"could not place {rule.id} after 40 attempts")
    # markers rest on the tray
    for obj in objects.values():
        if obj.cls is ObjectClass.MARKER:
            obj.support = "tray" if any(o.cls is ObjectClass.TRAY for o in objects.values()) else TABLE_ID
    arms = {arm: make_arm_state(models[arm], HOME_CONFIG) for arm in (Arm.LEFT, Arm.RIGHT)}
    return WorldState(objects=objects, arms=arms, tick=0, domain=domain, rng=rng)


def grasp_ee_pose(observed_pose: Pose, cls: ObjectClass) -> Pose:
    """EE pose that straddles the object at its grasp height, tool down."""
    spec = OBJECT_CATALOG[cls]
    p = observed_pose.position.copy()
    p[2] = p[2] - 0.5 * spec.height + spec.grasp_height
    return Pose(p, TOOL_DOWN)


def place_ee_pose(observed_target: Pose, target_cls: ObjectClass, held_cls: ObjectClass, grip_dz: float) -> Pose:
    """EE pose above the target at release height.

    grip_dz: vertical offset from the held object's center to the EE.
    """
    tspec = OBJECT_CATALOG[target_cls]
    hspec = OBJECT_CATALOG[held_cls]
    p = observed_target.position.copy()
    if target_cls is ObjectClass.BASKET:
        surface = observed_target.position[2] - 0.5 * tspec.height + 0.005
    elif target_cls is ObjectClass.MARKER:
        surface = observed_target.position[2] + 0.5 * tspec.height
    else:  # stack onto the target's top face
        surface = observed_target.position[2] + 0.5 * tspec.height
    # held object's center when its base hovers DROP_HEIGHT above the surface
    p[2] = surface + DROP_HEIGHT + 0.5 * hspec.height + grip_dz
    return Pose(p, TOOL_DOWN)


def strike_ee_pose(observed_target: Pose, hammer: dict) -> Pose:
    """EE pose at the bottom of the strike stroke for a yaw-aligned hammer."""
    spec = OBJECT_CATALOG[ObjectClass.TARGET_CYLINDER]
    head_off = np.array(OBJECT_CATALOG[ObjectClass.HAMMER].head_offset)
    p = observed_target.position.copy()
    p[2] = observed_target.position[2] + 0.5 * spec.height  # target top
    ee = p - head_off + np.array([0.0, 0.0, hammer["grip_dz"] - 0.003])
    return Pose(ee, TOOL_DOWN)


def check_success(task: TaskSpec, world: WorldState) -> Outcome:
    """Task-specific success predicate over the final world state."""
    if world.failure:
        return Outcome(False, world.failure)
    if task.kind is TaskKind.BOTTLE_COLLECTING:
        for goal in task.goals:
            obj = world.objects[goal.object_id]
            if obj.support != goal.target_id:
                return Outcome(False, f"{obj.id} outside {goal.target_id}")
        return Outcome(True)
    if task.kind is TaskKind.STACKING:
        for below_id, above_id in zip(task.stack_order, task.stack_order[1:]):
            below = world.objects[below_id]
            above = world.objects[above_id]
            if above.support != below_id:
                return Outcome(False, f"{above_id} not resting on {below_id}")
            off = np.linalg.norm(
                _horizontal(above.pose.position) - _horizontal(below.pose.position)
            )
            if off >= STACK_STABLE_FRAC * below.radius:
                return Outcome(False, f"{above_id} offset {off:.3f} m exceeds stability threshold")
        return Outcome(True)
    if task.kind is TaskKind.HAMMERING:
        target_ids = {g.target_id for g in task.goals}
        struck = {oid for _, oid in world.strike_events}
        if target_ids <= struck:
            return Outcome(True)
        return Outcome(False, "no strike registered on target")
    if task.kind is TaskKind.DRINK_TRAY:
        for goal in task.goals:
            obj = world.objects[goal.object_id]
            marker = world.objects[goal.target_id]
            d = np.linalg.norm(_horizontal(obj.pose.position) - _horizontal(marker.pose.position))
            if d > PLACE_TOLERANCE:
                return Outcome(False, f"{obj.id} is {d * 100:.1f} cm from {goal.target_id}")
            if obj.support not in ("tray",):
                return Outcome(False, f"{obj.id} not resting on the tray")
        return Outcome(True)
    raise ValueError(f"unknown task kind {task.kind}")
