"""Deterministic kinematic simulation.

Primitive-shape scenes, analytic depth rendering for single-view mapping,
grasp attach/detach with a settle rule instead of contact dynamics, scripted
failure injection, a ground-truth perception oracle, and episode metrics.
Everything is seeded; identical (scenario, seed) inputs reproduce identical
episodes byte for byte.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

try:
    import jsonschema
except ImportError:   # pragma: no cover
    jsonschema = None

from .errors import InvalidArgument, ScenarioParseError
from .geometry import Pose7, Transform, matrix_to_quat, rot_z
from .kinematics import IkParams, KinematicChain, default_chain, load_chain
from .occupancy import DepthImage
from .planner import PlannerParams
from .primitives import GripperAction, NavigateRequest, TrajectorySegment, navigate_step
from .scenegraph import Detection, Part, PartState, ShapeKind

GRASP_SLACK = 0.02           # m added to the commanded aperture for attachment
HANDLE_STANDOFF = 0.06       # m, grasp point offset outward from a handle
CONTACT_EPS = 0.015          # m, press-contact tolerance
DOCK_DT = 0.05               # s
DOCK_TIMEOUT = 60.0          # s
DOCK_POS_TOL = 0.02          # m
DOCK_ANG_TOL = 0.02          # rad


# --- scene ------------------------------------------------------------------

@dataclass
class SimPart:
    name: str
    function: str = ""
    axis: np.ndarray = field(default_factory=lambda: np.array([1.0, 0.0, 0.0]))
    travel: float = 0.0
    extension: float = 0.0
    handle: Optional[np.ndarray] = None    # world point at extension 0
    open_when_extended: bool = True

    def __post_init__(self):
        ax = np.asarray(self.axis, dtype=float).reshape(3)
        n = float(np.linalg.norm(ax))
        if n == 0:
            raise InvalidArgument(f"part {self.name}: zero axis")
        self.axis = ax / n
        if self.handle is not None:
            self.handle = np.asarray(self.handle, dtype=float).reshape(3)

    def state(self) -> PartState:
        if self.travel <= 0:
            return PartState.UNKNOWN
        frac = self.extension / self.travel
        if frac >= 0.95:
            return PartState.OPEN if self.open_when_extended else PartState.CLOSED
        if frac <= 0.05:
            return PartState.CLOSED if self.open_when_extended else PartState.OPEN
        return PartState.PARTIAL

    def handle_world(self) -> np.ndarray:
        base = self.handle if self.handle is not None else np.zeros(3)
        return base + self.axis * self.extension


@dataclass
class Body:
    id: str
    label: str
    shape: ShapeKind
    dims: tuple                       # box: (lx,ly,lz); cylinder: (r,h); sphere: (r,)
    position: np.ndarray
    yaw: float = 0.0
    graspable: bool = False
    aperture: float = 0.06
    color: str = ""
    material: str = ""
    context: str = ""
    parts: list = field(default_factory=list)

    def __post_init__(self):
        self.shape = ShapeKind(self.shape)
        self.position = np.asarray(self.position, dtype=float).reshape(3)
        self.dims = tuple(float(v) for v in self.dims)
        if any(v <= 0 for v in self.dims):
            raise InvalidArgument(f"body {self.id}: dims must be positive")

    def rotation(self) -> np.ndarray:
        return rot_z(self.yaw)

    def pose(self) -> Pose7:
        return Pose7(self.position, matrix_to_quat(self.rotation()))

    def half_height(self) -> float:
        if self.shape == ShapeKind.BOX:
            return self.dims[2] / 2
        if self.shape == ShapeKind.CYLINDER:
            return self.dims[1] / 2
        return self.dims[0]

    def top_z(self) -> float:
        return float(self.position[2]) + self.half_height()

    def bottom_z(self) -> float:
        return float(self.position[2]) - self.half_height()

    def footprint_radius(self) -> float:
        if self.shape == ShapeKind.BOX:
            return math.hypot(self.dims[0] / 2, self.dims[1] / 2)
        return self.dims[0]

    def xy_inside(self, xy) -> bool:
        rel = np.asarray(xy, dtype=float) - self.position[:2]
        if self.shape == ShapeKind.BOX:
            local = rot_z(-self.yaw)[:2, :2] @ rel
            return bool(abs(local[0]) <= self.dims[0] / 2 and abs(local[1]) <= self.dims[1] / 2)
        return bool(np.linalg.norm(rel) <= self.dims[0])

    def part(self, name: str) -> SimPart:
        for p in self.parts:
            if p.name == name:
                return p
        raise InvalidArgument(f"body {self.id} has no part {name!r}")


@dataclass
class SimScene:
    bodies: dict = field(default_factory=dict)    # id -> Body
    floor_z: float = 0.0

    def body(self, body_id: str) -> Body:
        try:
            return self.bodies[body_id]
        except KeyError:
            raise InvalidArgument(f"no body {body_id!r} in scene") from None

    def add(self, body: Body) -> None:
        if body.id in self.bodies:
            raise InvalidArgument(f"duplicate body id {body.id!r}")
        self.bodies[body.id] = body


@dataclass
class Gripper:
    open_width: float = 0.08
    max_width: float = 0.10
    held: Optional[str] = None
    held_part: Optional[str] = None
    held_offset: Optional[Transform] = None   # body pose in the eef frame
    was_attached: bool = False                # any attach happened this episode
    last_grasp_missed: bool = False


@dataclass
class SimRobot:
    chain: KinematicChain
    q: np.ndarray
    eef_pose: Pose7
    gripper: Gripper = field(default_factory=Gripper)
    base_pose: np.ndarray = field(default_factory=lambda: np.zeros(3))  # x, y, yaw
    config: str = "fixed"

    def base_tf(self) -> Transform:
        x, y, yaw = self.base_pose
        return Transform(rot_z(yaw), np.array([x, y, 0.0]))


# --- depth rendering --------------------------------------------------------

def camera_pose_from_lookat(position, look_at, up_hint=(0.0, 0.0, 1.0)) -> Pose7:
    """Camera convention: x right, y down, z forward (optical axis)."""
    position = np.asarray(position, dtype=float)
    fwd = np.asarray(look_at, dtype=float) - position
    n = np.linalg.norm(fwd)
    if n < 1e-9:
        raise InvalidArgument("camera position and look_at coincide")
    z = fwd / n
    x = np.cross(z, np.asarray(up_hint, dtype=float))
    if np.linalg.norm(x) < 1e-6:
        x = np.cross(z, np.array([0.0, 1.0, 0.0]))
    x = x / np.linalg.norm(x)
    y = np.cross(z, x)
    rot = np.stack([x, y, z], axis=1)
    return Pose7(position, matrix_to_quat(rot))


def _ray_box(o, d, body):
    rot = body.rotation()
    ol = (o - body.position) @ rot            # row-vector form of R^T v
    dl = d @ rot
    half = np.array(body.dims) / 2
    with np.errstate(divide="ignore", invalid="ignore"):
        t1 = (-half - ol) / dl
        t2 = (half - ol) / dl
    tmin = np.nanmax(np.minimum(t1, t2), axis=1)
    tmax = np.nanmin(np.maximum(t1, t2), axis=1)
    hit = (tmax >= np.maximum(tmin, 1e-6))
    t = np.where(tmin > 1e-6, tmin, tmax)
    return np.where(hit & (t > 1e-6), t, np.inf)


def _ray_sphere(o, d, body):
    r = body.dims[0]
    oc = o - body.position
    a = np.sum(d * d, axis=1)
    b = 2 * np.sum(d * oc, axis=1)
    c = float(np.sum(oc * oc)) - r * r
    disc = b * b - 4 * a * c
    ok = disc >= 0
    sq = np.sqrt(np.where(ok, disc, 0.0))
    t0 = (-b - sq) / (2 * a)
    t1 = (-b + sq) / (2 * a)
    t = np.where(t0 > 1e-6, t0, t1)
    return np.where(ok & (t > 1e-6), t, np.inf)


def _ray_cylinder(o, d, body):
    r, h = body.dims
    rot = body.rotation()
    ol = (o - body.position) @ rot
    dl = d @ rot
    a = dl[:, 0] ** 2 + dl[:, 1] ** 2
    b = 2 * (ol[0] * dl[:, 0] + ol[1] * dl[:, 1])
    c = ol[0] ** 2 + ol[1] ** 2 - r * r
    disc = b * b - 4 * a * c
    ok = (disc >= 0) & (a > 1e-12)
    sq = np.sqrt(np.where(ok, disc, 0.0))
    with np.errstate(divide="ignore", invalid="ignore"):
        ts0 = (-b - sq) / (2 * a)
        ts1 = (-b + sq) / (2 * a)
    best = np.full(len(d), np.inf)
    for ts in (ts0, ts1):
        z = ol[2] + ts * dl[:, 2]
        good = ok & (ts > 1e-6) & (np.abs(z) <= h / 2)
        best = np.where(good & (ts < best), ts, best)
    # caps
    with np.errstate(divide="ignore", invalid="ignore"):
        for zc in (-h / 2, h / 2):
            tc = (zc - ol[2]) / dl[:, 2]
            xy2 = (ol[0] + tc * dl[:, 0]) ** 2 + (ol[1] + tc * dl[:, 1]) ** 2
            good = np.isfinite(tc) & (tc > 1e-6) & (xy2 <= r * r)
            best = np.where(good & (tc < best), tc, best)
    return best


_INTERSECTORS = {
    ShapeKind.BOX: _ray_box,
    ShapeKind.SPHERE: _ray_sphere,
    ShapeKind.CYLINDER: _ray_cylinder,
}


@dataclass
class CameraSpec:
    pose: Pose7
    width: int = 160
    height: int = 120
    fov_deg: float = 70.0

    def intrinsics(self):
        fx = (self.width / 2) / math.tan(math.radians(self.fov_deg) / 2)
        return fx, fx, self.width / 2, self.height / 2


def render_depth(scene: SimScene, camera: CameraSpec, exclude_ids=(),
                 noise_sigma: float = 0.0, rng: Optional[np.random.Generator] = None) -> DepthImage:
    """Analytic ray casting; depth = camera-z of the nearest hit, 0 on miss."""
    fx, fy, cx, cy = camera.intrinsics()
    us, vs = np.meshgrid(np.arange(camera.width), np.arange(camera.height))
    dirs_cam = np.stack(
        [(us - cx) / fx, (vs - cy) / fy, np.ones_like(us, dtype=float)], axis=-1
    ).reshape(-1, 3)
    t_cam = Transform.from_pose(camera.pose)
    dirs = dirs_cam @ t_cam.rotation.T
    origin = t_cam.translation
    depth = np.full(len(dirs), np.inf)
    for body in scene.bodies.values():
        if body.id in exclude_ids:
            continue
        t_hit = _INTERSECTORS[body.shape](origin, dirs, body)
        depth = np.minimum(depth, t_hit)
    depth = np.where(np.isfinite(depth), depth, 0.0)
    if noise_sigma > 0.0:
        if rng is None:
            rng = np.random.default_rng(0)
        noisy = depth + rng.normal(0.0, noise_sigma, depth.shape)
        depth = np.where(depth > 0, np.maximum(noisy, 1e-4), 0.0)
    return DepthImage(
        depth=depth.reshape(camera.height, camera.width),
        fx=fx, fy=fy, cx=cx, cy=cy, camera_pose=camera.pose,
    )


# --- perception oracle ------------------------------------------------------

def grasp_orientation_topdown() -> np.ndarray:
    # eef z axis pointing straight down (180 deg about x)
    return np.array([0.0, 1.0, 0.0, 0.0])


def orientation_facing(direction) -> np.ndarray:
    """Quaternion whose z axis points along `direction`."""
    z = np.asarray(direction, dtype=float)
    z = z / np.linalg.norm(z)
    x = np.cross(np.array([0.0, 0.0, 1.0]), z)
    if np.linalg.norm(x) < 1e-6:
        x = np.array([1.0, 0.0, 0.0])
    x = x / np.linalg.norm(x)
    y = np.cross(z, x)
    return matrix_to_quat(np.stack([x, y, z], axis=1))


def body_detection_pose(body: Body) -> Pose7:
    """Manipulation-relevant pose: articulated fixtures report the handle
    grasp standoff point facing the handle; everything else its center."""
    if body.parts and any(p.handle is not None for p in body.parts):
        part = next(p for p in body.parts if p.handle is not None)
        point = part.handle_world() + part.axis * HANDLE_STANDOFF
        return Pose7(point, orientation_facing(-part.axis))
    return body.pose()


def perceive(scene: SimScene, mislocalize: Optional[dict] = None) -> list:
    """Ground-truth detections; `mislocalize` maps body id -> pose delta to
    corrupt this one observation (transient occlusion stand-in)."""
    detections = []
    for body in scene.bodies.values():
        pose = body_detection_pose(body)
        if mislocalize and body.id in mislocalize:
            pose = Pose7(pose.position + np.asarray(mislocalize[body.id], dtype=float),
                         pose.orientation)
        detections.append(
            Detection(
                label=body.label,
                pose=pose,
                shape=body.shape,
                dims=body.dims,
                aperture=body.aperture,
                parts=[
                    Part(name=p.name, function=p.function, state=PartState.UNKNOWN,
                         axis=tuple(p.axis), travel=p.travel)
                    for p in body.parts
                ],
                color=body.color,
                material=body.material,
                context=body.context,
            )
        )
    return detections


# --- stepping ---------------------------------------------------------------

def settle(scene: SimScene, body: Body) -> None:
    """Drop the body straight down onto the highest support under it."""
    support = scene.floor_z
    for other in scene.bodies.values():
        if other.id == body.id:
            continue
        if other.xy_inside(body.position[:2]) and other.top_z() <= body.bottom_z() + 1e-6:
            support = max(support, other.top_z())
    body.position[2] = support + body.half_height()


def _attach_candidates(scene: SimScene, eef_pos: np.ndarray, radius: float):
    found = []
    for body in scene.bodies.values():
        if body.graspable:
            d = float(np.linalg.norm(body.position - eef_pos))
            if d <= radius:
                found.append((d, body.id, None))
        for part in body.parts:
            if part.handle is None:
                continue
            d = float(np.linalg.norm(part.handle_world() - eef_pos))
            if d <= radius + HANDLE_STANDOFF:
                found.append((d, body.id, part.name))
    found.sort(key=lambda x: (x[0], x[1]))
    return found


def step_sim(robot: SimRobot, scene: SimScene, segment: TrajectorySegment):
    """Execute one trajectory segment kinematically, in place.

    The eef teleports along waypoints; a held body follows rigidly; a held
    articulated part converts displacement along its axis into extension.
    The gripper action applies at the final waypoint. Contact presses during
    metric (operate) segments actuate press-type parts.
    """
    grip = robot.gripper
    grip.last_grasp_missed = False
    prev = robot.eef_pose
    for pose in segment.waypoints.poses:
        _move_eef(robot, scene, prev, pose, contact=segment.kind == "operate")
        prev = pose
    if segment.achieved_final is not None:
        _move_eef(robot, scene, prev, segment.achieved_final,
                  contact=segment.kind == "operate")
    if segment.joint_path is not None:
        robot.q = np.asarray(segment.joint_path[-1], dtype=float)

    if segment.gripper_action == GripperAction.GRASP:
        radius = grip.open_width + GRASP_SLACK
        candidates = _attach_candidates(scene, robot.eef_pose.position, radius)
        if not candidates:
            grip.last_grasp_missed = True
        else:
            _, body_id, part_name = candidates[0]
            grip.held = body_id
            grip.held_part = part_name
            grip.was_attached = True
            if part_name is None:
                eef_t = Transform.from_pose(robot.eef_pose)
                body_t = Transform.from_pose(scene.body(body_id).pose())
                grip.held_offset = eef_t.inverse().compose(body_t)
    elif segment.gripper_action == GripperAction.RELEASE:
        if grip.held is not None and grip.held_part is None:
            settle(scene, scene.body(grip.held))
        grip.held = None
        grip.held_part = None
        grip.held_offset = None
    return robot, scene


def _move_eef(robot: SimRobot, scene: SimScene, prev: Pose7, pose: Pose7, contact: bool):
    robot.eef_pose = pose
    grip = robot.gripper
    if grip.held is not None:
        body = scene.body(grip.held)
        if grip.held_part is not None:
            part = body.part(grip.held_part)
            delta = float(np.dot(pose.position - prev.position, part.axis))
            part.extension = float(np.clip(part.extension + delta, 0.0, max(part.travel, 0.0)))
        elif grip.held_offset is not None:
            new_t = Transform.from_pose(pose).compose(grip.held_offset)
            body.position = new_t.translation.copy()
            body.yaw = math.atan2(new_t.rotation[1, 0], new_t.rotation[0, 0])
    if contact:
        _apply_press_contacts(scene, pose.position)


def _apply_press_contacts(scene: SimScene, eef_pos: np.ndarray) -> None:
    for body in scene.bodies.values():
        for part in body.parts:
            if "press" not in part.function and "button" not in part.name:
                continue
            if body.xy_inside(eef_pos[:2]) and abs(eef_pos[2] - body.top_z()) <= CONTACT_EPS:
                part.extension = part.travel


# --- failure injection ------------------------------------------------------

@dataclass
class Trigger:
    effect: str
    step: Optional[int] = None
    op_kind: Optional[str] = None
    params: dict = field(default_factory=dict)

    def matches(self, step_index: int, op_kind: str) -> bool:
        if self.step is not None:
            return self.step == step_index
        if self.op_kind is not None:
            return self.op_kind == op_kind
        return False


@dataclass
class FailureInjection:
    triggers: list = field(default_factory=list)
    seed: int = 0

    @staticmethod
    def none() -> "FailureInjection":
        return FailureInjection([], 0)


@dataclass
class InjectionState:
    """Mutable per-episode effect state threaded through the executor."""
    depth_sigma: float = 0.0
    mislocalize_next: dict = field(default_factory=dict)
    rng: np.random.Generator = field(default_factory=lambda: np.random.default_rng(0))


PRE_STEP_EFFECTS = ("displace", "mislocalize", "depth_noise", "ik_block")
POST_STEP_EFFECTS = ("slip",)


def inject_failure(injection: FailureInjection, step_index: int, op_kind: str,
                   phase: str, robot: SimRobot, scene: SimScene,
                   state: InjectionState) -> list:
    """Apply triggers matching this step; returns the effects applied.

    Pre phase: displace / mislocalize / depth_noise / ik_block (the world or
    robot degrades before the operation runs). Post phase: slip (the grasp
    must have happened first).
    """
    applied = []
    for trig in injection.triggers:
        if not trig.matches(step_index, op_kind):
            continue
        if phase == "pre" and trig.effect not in PRE_STEP_EFFECTS:
            continue
        if phase == "post" and trig.effect not in POST_STEP_EFFECTS:
            continue
        if trig.effect == "slip":
            grip = robot.gripper
            if grip.held is not None and grip.held_part is None:
                body = scene.body(grip.held)
                grip.held = None
                grip.held_offset = None
                settle(scene, body)
            elif grip.held is not None:
                grip.held = None
                grip.held_part = None
        elif trig.effect == "displace":
            body = scene.body(trig.params["target"])
            body.position = body.position + np.asarray(trig.params["delta"], dtype=float)
            settle(scene, body)
        elif trig.effect == "mislocalize":
            state.mislocalize_next[trig.params["target"]] = np.asarray(
                trig.params["delta"], dtype=float)
        elif trig.effect == "depth_noise":
            state.depth_sigma = float(trig.params["sigma"])
        elif trig.effect == "ik_block":
            robot.chain = robot.chain.with_joint_clamped(
                int(trig.params["joint"]), float(trig.params["lo"]), float(trig.params["hi"]))
        else:
            raise InvalidArgument(f"unknown injection effect {trig.effect!r}")
        applied.append(trig.effect)
    return applied


# --- docking ----------------------------------------------------------------

def target_in_base_frame(robot: SimRobot, target_xy) -> tuple:
    """(x_c, z_c): lateral (positive toward positive turn) and forward range."""
    x, y, yaw = robot.base_pose
    rel = np.asarray(target_xy, dtype=float) - np.array([x, y])
    fwd = np.array([math.cos(yaw), math.sin(yaw)])
    left = np.array([-math.sin(yaw), math.cos(yaw)])
    return float(rel @ left), float(rel @ fwd)


def dock_base(robot: SimRobot, scene: SimScene, req: NavigateRequest,
              dt: float = DOCK_DT, timeout: float = DOCK_TIMEOUT):
    """Iterate the docking law on the unicycle base until tolerance or timeout.

    Returns (converged, elapsed_s, range_error, heading_error).
    """
    target = scene.body(req.target_node)
    steps = int(round(timeout / dt))
    for i in range(steps + 1):
        x_c, z_c = target_in_base_frame(robot, target.position[:2])
        heading = math.atan2(x_c, z_c)
        if abs(z_c - req.d_goal) < DOCK_POS_TOL and abs(heading) < DOCK_ANG_TOL:
            return True, i * dt, abs(z_c - req.d_goal), abs(heading)
        v, w = navigate_step(x_c, z_c, req)
        x, y, yaw = robot.base_pose
        robot.base_pose = np.array([
            x + v * math.cos(yaw) * dt,
            y + v * math.sin(yaw) * dt,
            yaw + w * dt,
        ])
    x_c, z_c = target_in_base_frame(robot, target.position[:2])
    heading = math.atan2(x_c, z_c)
    return False, timeout, abs(z_c - req.d_goal), abs(heading)


# --- metrics ----------------------------------------------------------------

@dataclass
class EpisodeResult:
    scenario: str
    command: str
    success: bool
    partial_success: bool
    distractor_grasped: bool
    e_t: list = field(default_factory=list)
    diagnoses: list = field(default_factory=list)
    repairs: int = 0
    replans: int = 0
    steps_executed: int = 0
    wall_time_s: float = 0.0     # excluded from serialized output (determinism)

    def __post_init__(self):
        if self.success and (not self.partial_success or self.distractor_grasped):
            raise InvalidArgument("success implies partial success and no distractor grasp")

    def to_dict(self) -> dict:
        return {
            "scenario": self.scenario,
            "command": self.command,
            "success": self.success,
            "partial_success": self.partial_success,
            "distractor_grasped": self.distractor_grasped,
            "e_t": list(self.e_t),
            "diagnoses": list(self.diagnoses),
            "repairs": self.repairs,
            "replans": self.replans,
            "steps_executed": self.steps_executed,
        }


def compute_metrics(results: list) -> dict:
    if not results:
        raise InvalidArgument("cannot compute metrics over an empty batch")
    n = len(results)
    return {
        "SR": 100.0 * sum(r.success for r in results) / n,
        "PSR": 100.0 * sum(r.partial_success for r in results) / n,
        "Dist": 100.0 * sum(r.distractor_grasped for r in results) / n,
        "episodes": n,
    }


def success_product(step_probs) -> float:
    prod = 1.0
    for p in step_probs:
        if not (0.0 <= p <= 1.0):
            raise InvalidArgument(f"step probability {p} outside [0, 1]")
        prod *= p
    return prod


# --- scenario files ---------------------------------------------------------

SCENARIO_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "required": ["schema_version", "name", "command", "workspace", "camera", "robot", "bodies"],
    "properties": {
        "schema_version": {"const": 1},
        "name": {"type": "string"},
        "command": {"type": "string"},
        "target_id": {"type": "string"},
        "container_id": {"type": "string"},
        "workspace": {
            "type": "object",
            "required": ["origin", "resolution", "dims"],
            "properties": {
                "origin": {"type": "array", "minItems": 3, "maxItems": 3},
                "resolution": {"type": "number", "exclusiveMinimum": 0},
                "dims": {"type": "array", "minItems": 3, "maxItems": 3},
            },
        },
        "camera": {
            "type": "object",
            "required": ["position", "look_at"],
            "properties": {
                "position": {"type": "array"},
                "look_at": {"type": "array"},
                "width": {"type": "integer", "minimum": 8},
                "height": {"type": "integer", "minimum": 8},
                "fov_deg": {"type": "number"},
            },
        },
        "robot": {
            "type": "object",
            "properties": {
                "config": {"enum": ["fixed", "mobile"]},
                "chain": {"type": "string"},
                "eef_start": {"type": "array", "minItems": 7, "maxItems": 7},
                "base_start": {"type": "array", "minItems": 3, "maxItems": 3},
                "gripper_max": {"type": "number"},
            },
        },
        "bodies": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["id", "label", "shape", "dims", "position"],
                "properties": {
                    "id": {"type": "string"},
                    "label": {"type": "string"},
                    "shape": {"enum": ["box", "cylinder", "sphere"]},
                    "dims": {"type": "array", "minItems": 1, "maxItems": 3},
                    "position": {"type": "array", "minItems": 3, "maxItems": 3},
                    "yaw": {"type": "number"},
                    "graspable": {"type": "boolean"},
                    "aperture": {"type": "number", "exclusiveMinimum": 0},
                    "color": {"type": "string"},
                    "material": {"type": "string"},
                    "context": {"type": "string"},
                    "parts": {"type": "array"},
                },
            },
        },
        "injections": {
            "type": "object",
            "properties": {
                "seed": {"type": "integer"},
                "triggers": {
                    "type": "array",
                    "items": {
                        "type": "object",
                        "required": ["effect"],
                        "properties": {
                            "effect": {"enum": ["slip", "displace", "mislocalize",
                                                 "depth_noise", "ik_block"]},
                            "step": {"type": "integer"},
                            "op_kind": {"type": "string"},
                        },
                    },
                },
            },
        },
        "overrides": {"type": "object"},
    },
}


@dataclass
class ScenarioConfig:
    """Per-scenario knobs; defaults are the published operating constants."""
    resolution: float = 0.01
    r_safe: float = 0.051
    connectivity: int = 26
    ik: IkParams = field(default_factory=IkParams)
    max_local_retries: int = 2
    max_replans: int = 2
    d_goal: float = 0.45
    recovery: bool = True

    def planner_params(self) -> PlannerParams:
        return PlannerParams(r_safe=self.r_safe, connectivity=self.connectivity)


@dataclass
class Scenario:
    name: str
    command: str
    scene: SimScene
    robot: SimRobot
    camera: CameraSpec
    workspace_origin: np.ndarray
    workspace_dims: tuple
    injection: FailureInjection
    config: ScenarioConfig
    target_id: Optional[str] = None
    container_id: Optional[str] = None
    raw: dict = field(default_factory=dict)


def _build_scene(doc: dict) -> SimScene:
    scene = SimScene()
    for bd in doc["bodies"]:
        parts = [
            SimPart(
                name=p["name"],
                function=p.get("function", ""),
                axis=np.array(p.get("axis", [1.0, 0.0, 0.0])),
                travel=float(p.get("travel", 0.0)),
                extension=float(p.get("extension", 0.0)),
                handle=np.array(p["handle"]) if "handle" in p else None,
                open_when_extended=bool(p.get("open_when_extended", True)),
            )
            for p in bd.get("parts", [])
        ]
        scene.add(
            Body(
                id=bd["id"],
                label=bd["label"],
                shape=ShapeKind(bd["shape"]),
                dims=tuple(bd["dims"]),
                position=np.array(bd["position"]),
                yaw=float(bd.get("yaw", 0.0)),
                graspable=bool(bd.get("graspable", False)),
                aperture=float(bd.get("aperture", 0.06)),
                color=bd.get("color", ""),
                material=bd.get("material", ""),
                context=bd.get("context", ""),
                parts=parts,
            )
        )
    return scene


def load_scenario(path) -> Scenario:
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ScenarioParseError(f"invalid JSON: {exc}", str(path)) from exc
    if jsonschema is not None:
        try:
            jsonschema.validate(doc, SCENARIO_SCHEMA)
        except jsonschema.ValidationError as exc:
            raise ScenarioParseError(exc.message, doc_path=exc.json_path) from exc
    scene = _build_scene(doc)
    rdoc = doc.get("robot", {})
    chain_name = rdoc.get("chain", "default")
    chain = default_chain() if chain_name == "default" else load_chain(chain_name)
    eef_start = rdoc.get("eef_start", [0.0, 0.0, 0.6, 0.0, 1.0, 0.0, 0.0])
    q_start = np.zeros(chain.dof)
    robot = SimRobot(
        chain=chain,
        q=q_start,
        eef_pose=Pose7(np.array(eef_start[:3]), np.array(eef_start[3:])),
        gripper=Gripper(max_width=float(rdoc.get("gripper_max", 0.10))),
        base_pose=np.array(rdoc.get("base_start", [0.0, 0.0, 0.0]), dtype=float),
        config=rdoc.get("config", "fixed"),
    )
    cdoc = doc["camera"]
    camera = CameraSpec(
        pose=camera_pose_from_lookat(cdoc["position"], cdoc["look_at"]),
        width=int(cdoc.get("width", 160)),
        height=int(cdoc.get("height", 120)),
        fov_deg=float(cdoc.get("fov_deg", 70.0)),
    )
    inj_doc = doc.get("injections", {})
    injection = FailureInjection(
        triggers=[
            Trigger(
                effect=t["effect"],
                step=t.get("step"),
                op_kind=t.get("op_kind"),
                params={k: v for k, v in t.items() if k not in ("effect", "step", "op_kind")},
            )
            for t in inj_doc.get("triggers", [])
        ],
        seed=int(inj_doc.get("seed", 0)),
    )
    odoc = doc.get("overrides", {})
    config = ScenarioConfig(
        resolution=float(doc["workspace"].get("resolution", 0.01)),
        r_safe=float(odoc.get("r_safe", 0.051)),
        connectivity=int(odoc.get("connectivity", 26)),
        ik=IkParams(**odoc["ik"]) if "ik" in odoc else IkParams(),
        max_local_retries=int(odoc.get("max_local_retries", 2)),
        max_replans=int(odoc.get("max_replans", 2)),
        d_goal=float(odoc.get("d_goal", 0.45)),
    )
    return Scenario(
        name=doc["name"],
        command=doc["command"],
        scene=scene,
        robot=robot,
        camera=camera,
        workspace_origin=np.array(doc["workspace"]["origin"], dtype=float),
        workspace_dims=tuple(int(v) for v in doc["workspace"]["dims"]),
        injection=injection,
        config=config,
        target_id=doc.get("target_id"),
        container_id=doc.get("container_id"),
        raw=doc,
    )
