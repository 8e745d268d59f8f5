"""Quasi-static dual-arm tabletop world.

The digital-twin stand-in: arms follow waypoints open-loop through IK,
grasp/release mechanics are distance rules, and a side-contact ("knock")
rule displaces objects whose body cylinder is entered laterally by the
gripper, reproducing the touch-offset failure mode of real pick attempts.
No forces or dynamics: every effect is an instantaneous pose update.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field, replace
from enum import Enum

import numpy as np

from .geometry import Pose, quat_conjugate, quat_multiply, quat_normalize, quat_rotate
from .kinematics import ArmModel, HOME_CONFIG, Unreachable, forward_kinematics, solve_ik
from .trajectory import Arm, Gripper, Waypoint

TICK_DT = 0.05  # 20 Hz
GRASP_RADIUS = 0.02
KNOCK_CLEARANCE = 0.010  # effective gripper body radius
KNOCK_PUSH = 0.03
STRIKE_RADIUS = 0.025
STACK_STABLE_FRAC = 0.40
TABLE_BOUNDS = ((0.0, 1.0), (-0.6, 0.6))  # x range (1.0 m), y range (1.2 m)
SPAWN_MARGIN = 0.01

TABLE_ID = "table"


class ObjectClass(str, Enum):
    BOTTLE = "bottle"
    CAN = "can"
    HAMMER = "hammer"
    TARGET_CYLINDER = "target_cylinder"
    BASKET = "basket"
    TRAY = "tray"
    MARKER = "marker"
    CUP = "cup"


@dataclass(frozen=True)
class ObjectSpec:
    radius: float
    height: float
    grasp_height: float | None  # above object bottom; None = not graspable
    head_offset: tuple | None = None  # tool head in the object frame (hammer)


OBJECT_CATALOG = {
    ObjectClass.BOTTLE: ObjectSpec(radius=0.025, height=0.16, grasp_height=0.09),
    ObjectClass.CAN: ObjectSpec(radius=0.033, height=0.12, grasp_height=0.07),
    ObjectClass.HAMMER: ObjectSpec(
        radius=0.020, height=0.06, grasp_height=0.04, head_offset=(0.10, 0.0, -0.01)
    ),
    ObjectClass.TARGET_CYLINDER: ObjectSpec(radius=0.030, height=0.05, grasp_height=None),
    ObjectClass.BASKET: ObjectSpec(radius=0.10, height=0.04, grasp_height=None),
    ObjectClass.TRAY: ObjectSpec(radius=0.14, height=0.02, grasp_height=None),
    ObjectClass.MARKER: ObjectSpec(radius=0.03, height=0.002, grasp_height=None),
    ObjectClass.CUP: ObjectSpec(radius=0.035, height=0.08, grasp_height=0.05),
}

# classes another object may rest on, besides the table
SUPPORT_CLASSES = {ObjectClass.BASKET, ObjectClass.TRAY, ObjectClass.CAN, ObjectClass.BOTTLE, ObjectClass.CUP}
STACKABLE_TOP = {ObjectClass.CAN, ObjectClass.BOTTLE, ObjectClass.CUP}  # classes with a usable top face


class Domain(str, Enum):
    NOMINAL = "nominal"
    SHIFTED = "shifted"


@dataclass(frozen=True)
class DomainParams:
    """Perturbations emulating the gap between twin and deployment domains."""

    name: str = "nominal"
    radius_delta: float = 0.0
    obs_noise_sigma: float = 0.0
    command_lag: int = 0
    obs_offset: tuple = (0.0, 0.0, 0.0)

    @staticmethod
    def nominal() -> "DomainParams":
        return DomainParams()

    @staticmethod
    def shifted(obs_offset=(0.0, 0.0, 0.0)) -> "DomainParams":
        return DomainParams(
            name="shifted",
            radius_delta=0.005,
            obs_noise_sigma=0.005,
            command_lag=1,
            obs_offset=tuple(float(v) for v in obs_offset),
        )

    @staticmethod
    def named(domain, obs_offset=(0.0, 0.0, 0.0)) -> "DomainParams":
        d = Domain(domain) if not isinstance(domain, Domain) else domain
        if d is Domain.NOMINAL:
            return DomainParams.nominal()
        return DomainParams.shifted(obs_offset)

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "radius_delta": self.radius_delta,
            "obs_noise_sigma": self.obs_noise_sigma,
            "command_lag": self.command_lag,
            "obs_offset": list(self.obs_offset),
        }

    @staticmethod
    def from_dict(d: dict) -> "DomainParams":
        return DomainParams(
            name=d["name"],
            radius_delta=d["radius_delta"],
            obs_noise_sigma=d["obs_noise_sigma"],
            command_lag=d["command_lag"],
            obs_offset=tuple(d["obs_offset"]),
        )


class SpawnCollision(RuntimeError):
    """Spawn rules could not place objects without overlap."""


class IkFailure(RuntimeError):
    def __init__(self, msg: str, waypoint_index: int | None = None):
        super().__init__(msg)
        self.waypoint_index = waypoint_index


@dataclass
class ObjectState:
    id: str
    cls: ObjectClass
    pose: Pose
    radius: float
    height: float
    held_by: Arm | None = None
    support: str | None = TABLE_ID

    @property
    def top_z(self) -> float:
        return self.pose.position[2] + 0.5 * self.height

    @property
    def bottom_z(self) -> float:
        return self.pose.position[2] - 0.5 * self.height

    def grasp_point(self) -> np.ndarray:
        spec = OBJECT_CATALOG[self.cls]
        if spec.grasp_height is None:
            raise ValueError(f"{self.cls.value} is not graspable")
        p = self.pose.position.copy()
        p[2] = self.bottom_z + spec.grasp_height
        return p

    def head_point(self) -> np.ndarray:
        spec = OBJECT_CATALOG[self.cls]
        if spec.head_offset is None:
            raise ValueError(f"{self.cls.value} has no tool head")
        return self.pose.transform_point(np.array(spec.head_offset))


@dataclass
class ArmState:
    q: np.ndarray
    ee_pose: Pose
    gripper: Gripper = Gripper.OPEN
    held_object: str | None = None
    grasp_offset_pos: np.ndarray | None = None  # object pose relative to the EE at grasp
    grasp_offset_quat: np.ndarray | None = None


@dataclass
class WorldEvent:
    kind: str  # grasped | released | knocked | strike | grasp_missed
    object_id: str | None = None
    detail: dict = field(default_factory=dict)


@dataclass
class WorldState:
    objects: dict  # id -> ObjectState (insertion-ordered)
    arms: dict  # Arm -> ArmState
    tick: int
    domain: DomainParams
    rng: np.random.Generator
    strike_events: list = field(default_factory=list)
    failure: str | None = None

    @property
    def time(self) -> float:
        return self.tick * TICK_DT

    def clone(self) -> "WorldState":
        return copy.deepcopy(self)

    def held_by(self, arm: Arm) -> ObjectState | None:
        oid = self.arms[arm].held_object
        return self.objects[oid] if oid else None


def make_arm_state(model: ArmModel, q=None) -> ArmState:
    q = HOME_CONFIG.copy() if q is None else np.asarray(q, dtype=float)
    return ArmState(q=q, ee_pose=forward_kinematics(model, q))


def observe_objects(world: WorldState) -> dict:
    """Per-object observations: pose (with domain noise/offset), class, support.

    Poses of held objects are reported truthfully (proprioception); free
    objects get the domain's systematic offset plus Gaussian noise.
    """
    out = {}
    offset = np.asarray(world.domain.obs_offset, dtype=float)
    sigma = world.domain.obs_noise_sigma
    for oid, obj in world.objects.items():
        p = obj.pose.position.copy()
        if obj.held_by is None:
            p = p + offset
            if sigma > 0:
                p = p + world.rng.normal(0.0, sigma, 3)
        out[oid] = {
            "cls": obj.cls,
            "pose": Pose(p, obj.pose.orientation),
            "support": obj.support,
            "held_by": obj.held_by,
            "radius": obj.radius,
            "height": obj.height,
        }
    return out


def _horizontal(p) -> np.ndarray:
    return np.asarray(p, dtype=float)[:2]


def _resolve_support(world: WorldState, obj: ObjectState) -> tuple:
    """Highest surface under the object's (x, y): (support id, rest z of the base)."""
    xy = _horizontal(obj.pose.position)
    best = (TABLE_ID, 0.0)
    for oid, other in world.objects.items():
        if oid == obj.id or other.held_by is not None:
            continue
        if other.cls not in SUPPORT_CLASSES:
            continue
        d = np.linalg.norm(_horizontal(other.pose.position) - xy)
        if other.cls is ObjectClass.BASKET:
            if d < other.radius:
                z = other.bottom_z + 0.005  # basket floor
                if z > best[1]:
                    best = (oid, z)
        elif other.cls is ObjectClass.TRAY:
            if d < other.radius:
                z = other.top_z
                if z > best[1]:
                    best = (oid, z)
        elif other.cls in STACKABLE_TOP:
            if d < other.radius:
                z = other.top_z
                if z > best[1]:
                    best = (oid, z)
    # objects never balance on top of things already inside a basket: they
    # topple in, coming to rest against the basket itself
    support_id = best[0]
    seen = set()
    while support_id != TABLE_ID and support_id not in seen:
        seen.add(support_id)
        holder = world.objects[support_id]
        if holder.cls is ObjectClass.BASKET:
            if np.linalg.norm(_horizontal(holder.pose.position) - xy) < holder.radius:
                return (holder.id, holder.bottom_z + 0.005)
            break
        if holder.support is None:
            break
        support_id = holder.support
    return best


def _settle(world: WorldState, obj: ObjectState) -> str:
    support, base_z = _resolve_support(world, obj)
    p = obj.pose.position.copy()
    p[2] = base_z + 0.5 * obj.height
    obj.pose = Pose(p, obj.pose.orientation)
    obj.support = support
    _invalidate_geometry(world)
    return support


def _free_object_geometry(world: WorldState):
    """Cached arrays over free (unheld, knockable) objects for contact tests."""
    cache = getattr(world, "_geom_cache", None)
    if cache is not None:
        return cache
    ids, centers, radii, tops = [], [], [], []
    for oid, obj in world.objects.items():
        if obj.held_by is not None or obj.cls in (ObjectClass.MARKER, ObjectClass.TRAY):
            continue
        ids.append(oid)
        centers.append(obj.pose.position[:2])
        radii.append(obj.radius + KNOCK_CLEARANCE)
        tops.append(obj.top_z)
    cache = (
        ids,
        np.array(centers) if ids else np.zeros((0, 2)),
        np.array(radii),
        np.array(tops),
    )
    world._geom_cache = cache
    return cache


def _invalidate_geometry(world: WorldState) -> None:
    world._geom_cache = None


def _entry_contact(p0, p1, center, r_outer, top_z) -> np.ndarray | None:
    """Contact test for one EE step against one object cylinder.

    Two contact modes, both reflecting a two-finger gripper whose finger
    circle has radius r_outer around the object axis:
      - side entry: the step crosses the cylinder wall below the top;
      - rim entry: the step crosses the top plane descending with the axis
        offset beyond the finger clearance (an off-center straddle scrapes
        the rim on the way down).
    The object slides away from the intruding finger: the push direction
    points from the contact point through the object axis. Returns that unit
    2-vector on contact, else None.
    """
    c = center
    d0 = np.hypot(p0[0] - c[0], p0[1] - c[1])
    d1 = np.hypot(p1[0] - c[0], p1[1] - c[1])
    if d0 >= r_outer > d1:
        a = p0[:2] - c
        b = p1[:2] - p0[:2]
        bb = float(b @ b)
        if bb >= 1e-18:
            disc = max(0.0, (a @ b) ** 2 - bb * (a @ a - r_outer * r_outer))
            s = (-(a @ b) - np.sqrt(disc)) / bb
            s = min(max(s, 0.0), 1.0)
            if p0[2] + s * (p1[2] - p0[2]) < top_z:
                contact = p0[:2] + s * (p1[:2] - p0[:2])
                push = c - contact
                nrm = np.linalg.norm(push)
                return push / nrm if nrm > 1e-12 else np.array([1.0, 0.0])
    if p0[2] > top_z >= p1[2]:
        sz = (top_z - p0[2]) / (p1[2] - p0[2])
        xy = p0[:2] + sz * (p1[:2] - p0[:2])
        off = np.hypot(xy[0] - c[0], xy[1] - c[1])
        if KNOCK_CLEARANCE < off < r_outer:
            return (c - xy) / off
    return None


def _check_knock(world: WorldState, p0: np.ndarray, p1: np.ndarray, exclude: str | None) -> list:
    """Contact check for the EE segment p0 -> p1 against every free object."""
    ids, centers, radii, tops = _free_object_geometry(world)
    if not ids:
        return []
    step_len = float(np.linalg.norm(p1 - p0))
    d0 = np.linalg.norm(p0[:2] - centers, axis=1)
    d1 = np.linalg.norm(p1[:2] - centers, axis=1)
    near = np.nonzero(np.minimum(d0, d1) < radii + step_len)[0]
    if near.size == 0:
        return []
    events = []
    for i in near:
        oid = ids[i]
        if oid == exclude:
            continue
        obj = world.objects[oid]
        direction = _entry_contact(p0, p1, centers[i], radii[i], obj.top_z)
        if direction is None:
            continue
        p = obj.pose.position.copy()
        p[0] += KNOCK_PUSH * direction[0]
        p[1] += KNOCK_PUSH * direction[1]
        obj.pose = Pose(p, obj.pose.orientation)
        _settle(world, obj)
        _invalidate_geometry(world)
        events.append(WorldEvent("knocked", oid, {"push": [float(v) for v in direction]}))
    return events


def step_follow(world: WorldState, models: dict, arm: Arm, target: Waypoint) -> list:
    """Advance one tick: move the arm to the waypoint and apply mechanics.

    Returns the world events raised during the step. Raises IkFailure when
    the waypoint pose admits no IK solution.
    """
    st = world.arms[arm]
    model = models[arm]
    try:
        q = solve_ik(model, target.pose, seed=st.q)
    except Unreachable as exc:
        world.failure = f"ik_failure: {exc}"
        raise IkFailure(str(exc)) from exc
    p0 = st.ee_pose.position
    new_pose = forward_kinematics(model, q)
    p1 = new_pose.position
    world.tick += 1
    events = _check_knock(world, p0, p1, exclude=st.held_object)
    st.q = q
    st.ee_pose = new_pose

    held = world.held_by(arm)
    if held is not None:
        held.pose = Pose.unchecked(
            new_pose.transform_point(st.grasp_offset_pos),
            quat_normalize(quat_multiply(new_pose.orientation, st.grasp_offset_quat)),
        )
        if held.cls is ObjectClass.HAMMER:
            events.extend(_check_strike(world, held, p0, p1))

    if target.gripper != st.gripper:
        if target.gripper is Gripper.CLOSED:
            events.extend(_try_grasp(world, arm))
        else:
            events.extend(_do_release(world, arm))
        st.gripper = target.gripper
    return events


def _try_grasp(world: WorldState, arm: Arm) -> list:
    st = world.arms[arm]
    if st.held_object is not None:
        return []
    ee = st.ee_pose.position
    best = None
    best_d = GRASP_RADIUS
    for oid, obj in world.objects.items():
        spec = OBJECT_CATALOG[obj.cls]
        if spec.grasp_height is None or obj.held_by is not None:
            continue
        d = float(np.linalg.norm(obj.grasp_point() - ee))
        if d < best_d:
            best_d = d
            best = obj
    if best is None:
        return [WorldEvent("grasp_missed")]
    best.held_by = arm
    best.support = None
    st.held_object = best.id
    _invalidate_geometry(world)
    inv_q = quat_conjugate(st.ee_pose.orientation)
    st.grasp_offset_pos = quat_rotate(inv_q, best.pose.position - st.ee_pose.position)
    st.grasp_offset_quat = quat_normalize(quat_multiply(inv_q, best.pose.orientation))
    return [WorldEvent("grasped", best.id, {"distance": best_d})]


def _do_release(world: WorldState, arm: Arm) -> list:
    st = world.arms[arm]
    held = world.held_by(arm)
    if held is None:
        return []
    held.held_by = None
    st.held_object = None
    st.grasp_offset_pos = None
    st.grasp_offset_quat = None
    support = _settle(world, held)
    return [WorldEvent("released", held.id, {"support": support})]


def _check_strike(world: WorldState, hammer: ObjectState, ee_p0, ee_p1) -> list:
    """Register a strike when the hammer head passes a target top moving down."""
    if ee_p1[2] >= ee_p0[2]:
        return []
    head = hammer.head_point()
    events = []
    for oid, obj in world.objects.items():
        if obj.cls is not ObjectClass.TARGET_CYLINDER:
            continue
        top = obj.pose.position.copy()
        top[2] = obj.top_z
        if np.linalg.norm(head - top) < STRIKE_RADIUS:
            already = any(e == oid for _, e in world.strike_events)
            world.strike_events.append((world.tick, oid))
            if not already:
                events.append(WorldEvent("strike", oid))
    return events


def step_teleport(world: WorldState, arm: Arm, target: Waypoint) -> list:
    """Advance one tick moving the EE exactly to the waypoint, skipping IK.

    Shares every mechanics rule with step_follow; used to re-execute
    augmentation candidates where executability was already established.
    """
    st = world.arms[arm]
    p0 = st.ee_pose.position
    new_pose = target.pose
    world.tick += 1
    events = _check_knock(world, p0, new_pose.position, exclude=st.held_object)
    st.ee_pose = new_pose

    held = world.held_by(arm)
    if held is not None:
        held.pose = Pose.unchecked(
            new_pose.transform_point(st.grasp_offset_pos),
            quat_normalize(quat_multiply(new_pose.orientation, st.grasp_offset_quat)),
        )
        if held.cls is ObjectClass.HAMMER:
            events.extend(_check_strike(world, held, p0, new_pose.position))

    if target.gripper != st.gripper:
        if target.gripper is Gripper.CLOSED:
            events.extend(_try_grasp(world, arm))
        else:
            events.extend(_do_release(world, arm))
        st.gripper = target.gripper
    return events


@dataclass(frozen=True)
class Outcome:
    success: bool
    reason: str | None = None

    def to_dict(self) -> dict:
        return {"success": self.success, "reason": self.reason}
