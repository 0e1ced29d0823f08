"""Operational primitives: goal-directed transit, frame-relative metric
motion, and reactive docking.

Transit motion goes through the clearance-aware planner and verifies every
waypoint is trackable by the arm (IK seeded from the previous waypoint's
solution). Metric motion is contact-intended and deliberately skips obstacle
checking; drawer pulls and presses have to approach geometry.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional

import numpy as np

from .errors import IkInfeasible, InvalidArgument, InvalidObservation, SegmentInfeasible
from .geometry import Pose7, Transform, apply_increment, slerp
from .kinematics import IkParams, KinematicChain, fk_transform, relaxed_ik
from .planner import PlannerParams, Waypoints, plan
from .scenegraph import SceneGraph

OPERATE_STEP = 0.01          # m, discretization of metric increments
DOCKING_GAIN_LINEAR = 0.6
DOCKING_GAIN_ANGULAR = 0.2


class GripperAction(str, Enum):
    NONE = "none"
    GRASP = "grasp"
    RELEASE = "release"


@dataclass(frozen=True)
class ToolLibrary:
    config: str                # "fixed" | "mobile"
    tools: tuple

    def __len__(self):
        return len(self.tools)

    def __contains__(self, name):
        return name in self.tools


def select_tool_library(config: str) -> ToolLibrary:
    if config == "fixed":
        return ToolLibrary(config, ("move_to", "operate"))
    if config == "mobile":
        return ToolLibrary(config, ("move_to", "operate", "navigate"))
    raise InvalidArgument(f"robot config must be 'fixed' or 'mobile', got {config!r}")


@dataclass
class MoveToRequest:
    target_node: str
    goal: Pose7
    b_grasp: bool = False
    b_release: bool = False

    def __post_init__(self):
        if self.b_grasp and self.b_release:
            raise InvalidArgument("grasp and release are mutually exclusive")

    @property
    def gripper_action(self) -> GripperAction:
        if self.b_grasp:
            return GripperAction.GRASP
        if self.b_release:
            return GripperAction.RELEASE
        return GripperAction.NONE


@dataclass
class OperateRequest:
    frame: str                 # "base" | "eef"
    t: np.ndarray
    r: np.ndarray

    def __post_init__(self):
        self.t = np.asarray(self.t, dtype=float).reshape(3)
        self.r = np.asarray(self.r, dtype=float).reshape(3)
        if not (np.all(np.isfinite(self.t)) and np.all(np.isfinite(self.r))):
            raise InvalidArgument("operate increments must be finite")
        if self.frame not in ("base", "eef"):
            raise InvalidArgument(f"frame must be 'base' or 'eef', got {self.frame!r}")


@dataclass
class NavigateRequest:
    target_node: str
    d_goal: float
    k_p: float = DOCKING_GAIN_LINEAR
    k_theta: float = DOCKING_GAIN_ANGULAR

    def __post_init__(self):
        if self.d_goal <= 0:
            raise InvalidArgument("docking clearance must be positive")
        if self.k_p <= 0 or self.k_theta <= 0:
            raise InvalidArgument("gains must be positive")


@dataclass
class TrajectorySegment:
    waypoints: Waypoints
    gripper_action: GripperAction = GripperAction.NONE
    kind: str = "move"                           # "move" | "operate"; operate is contact-intended
    # tracking diagnostics from the per-waypoint IK verification
    joint_path: Optional[list] = None            # list of q arrays
    ik_rounds: Optional[list] = None             # relax rounds per waypoint
    achieved_final: Optional[Pose7] = None       # FK of the last joint solution

    def __len__(self):
        return len(self.waypoints)


def move_to(
    req: MoveToRequest,
    graph: SceneGraph,
    grid,
    eef_pose: Pose7,
    chain: KinematicChain,
    q_seed=None,
    planner_params: PlannerParams = PlannerParams(),
    ik_params: IkParams = IkParams(),
) -> TrajectorySegment:
    """Plan a collision-free transit to the goal and prove it trackable.

    Raises SegmentInfeasible (with the waypoint index) if any waypoint has no
    IK solution within the relaxation budget; planner errors propagate.
    """
    graph.node(req.target_node)
    wps = plan(eef_pose, req.goal, grid, planner_params)
    q = np.zeros(chain.dof) if q_seed is None else np.asarray(q_seed, dtype=float)
    joint_path, rounds = [], []
    for i, pose in enumerate(wps.poses):
        try:
            sol = relaxed_ik(chain, pose, q, ik_params)
        except IkInfeasible as exc:
            raise SegmentInfeasible(
                f"waypoint {i}/{len(wps)} not trackable: {exc}", waypoint_index=i
            ) from exc
        q = sol.q
        joint_path.append(q)
        rounds.append(sol.relax_rounds_used)
    achieved = fk_transform(chain, joint_path[-1]).to_pose()
    return TrajectorySegment(
        waypoints=wps,
        gripper_action=req.gripper_action,
        joint_path=joint_path,
        ik_rounds=rounds,
        achieved_final=achieved,
    )


def operate(req: OperateRequest, eef_pose: Pose7, r_step: float = OPERATE_STEP) -> TrajectorySegment:
    """Frame-relative metric motion, linearly discretized; never obstacle-checked."""
    t_curr = Transform.from_pose(eef_pose)
    t_new = apply_increment(t_curr, req.t, req.r, req.frame)
    target = t_new.to_pose()
    move_norm = float(np.linalg.norm(req.t))
    if move_norm == 0.0 and np.all(req.r == 0.0):
        return TrajectorySegment(waypoints=Waypoints([eef_pose]), kind="operate")
    n = max(1, math.ceil(move_norm / r_step))
    poses = []
    for i in range(n + 1):
        a = i / n
        pos = (1.0 - a) * eef_pose.position + a * target.position
        ori = slerp(eef_pose.orientation, target.orientation, a)
        poses.append(Pose7(pos, ori))
    return TrajectorySegment(waypoints=Waypoints(poses), kind="operate")


def navigate_step(x_c_obj: float, z_c_obj: float, req: NavigateRequest):
    """One tick of the dual-loop docking law.

    v_x regulates forward approach to the docking clearance; omega_z centers
    the target bearing. x_c is the lateral offset measured positive toward
    the positive-turn side.
    """
    if z_c_obj <= 0:
        raise InvalidObservation(f"target depth must be positive, got {z_c_obj}")
    v_x = req.k_p * (z_c_obj - req.d_goal)
    omega_z = req.k_theta * math.atan2(x_c_obj, z_c_obj)
    return v_x, omega_z
