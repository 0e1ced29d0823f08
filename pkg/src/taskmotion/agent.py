"""Perceive-Plan-Act-Reflect execution over an operation sequence.

The executor decomposes a command into atomic operations, runs them through
the primitive layer, verifies every post-condition, and on failure reflects:
the graph is revised to the observed state, a diagnosis is drawn from a
deterministic rule table, and the failed operation is either locally
repaired or the remaining plan is regenerated. Planner and semantic verifier
are pluggable; the defaults are rule-based so episodes are reproducible.
"""

from __future__ import annotations

import json
import re
import time
from collections import deque
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional

import numpy as np

from .errors import (
    GroundingFailure,
    InfeasibleEndpoint,
    InvalidCommand,
    NoPath,
    NotLocallyRepairable,
    PlannerEndpointError,
    SegmentInfeasible,
    TaskMotionError,
)
from .geometry import Pose7, Transform, apply_increment, geodesic_angle
from .primitives import (
    MoveToRequest,
    NavigateRequest,
    OperateRequest,
    ToolLibrary,
    move_to,
    operate,
)
from .scenegraph import (
    ObjectNode,
    PartState,
    PhysicalAttributes,
    KinematicConstraint,
    Role,
    SceneGraph,
    SemanticConfig,
    instantiate_graph,
    graph_to_dict,
    query_by_context,
    update_part_state,
    update_pose,
)
from .sim import EpisodeResult, grasp_orientation_topdown

VERIFY_POS_TOL = 0.02        # m, geometric post-condition tolerance
DISPLACE_THRESHOLD = 0.08    # m, pose residual separating mislocalization from displacement
HOVER_MARGIN = 0.02          # m above the clearance radius for approach points
TRACE_BOUND = 20             # records kept for diagnosis context
ROBOT_NODE = "robot"
HELD_EDGE = "grasped-by"

STOPWORDS = {"the", "a", "an", "of", "into", "in", "on", "onto", "to", "near"}


class DiagnosisCategory(str, Enum):
    GRASP_SLIPPAGE = "grasp_slippage"
    COLLISION = "collision"
    OCCLUSION_MISLOCALIZATION = "occlusion_mislocalization"
    TARGET_DISPLACED = "target_displaced"
    SCENE_TOPOLOGY_CHANGE = "scene_topology_change"
    KINEMATIC_INFEASIBLE = "kinematic_infeasible"
    UNKNOWN = "unknown"


LOCAL_CATEGORIES = {
    DiagnosisCategory.GRASP_SLIPPAGE,
    DiagnosisCategory.OCCLUSION_MISLOCALIZATION,
    DiagnosisCategory.KINEMATIC_INFEASIBLE,
}


@dataclass
class Diagnosis:
    category: DiagnosisCategory
    detail: str = ""
    residual: float = 0.0

    def to_dict(self) -> dict:
        return {"category": self.category.value, "detail": self.detail,
                "residual": float(self.residual)}


@dataclass
class Postcondition:
    kind: str      # holding | inside | near | part_state | eef_at | body_at | docked
    params: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"kind": self.kind, "params": _jsonable(self.params)}


@dataclass
class Operation:
    kind: str                   # move_to | operate | navigate
    payload: object
    expected_post: list = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        if self.kind == "move_to":
            p = {
                "target_node": self.payload.target_node,
                "goal": self.payload.goal.to_dict(),
                "b_grasp": self.payload.b_grasp,
                "b_release": self.payload.b_release,
            }
        elif self.kind == "operate":
            p = {
                "frame": self.payload.frame,
                "t": [float(v) for v in self.payload.t],
                "r": [float(v) for v in self.payload.r],
            }
        else:
            p = {
                "target_node": self.payload.target_node,
                "d_goal": self.payload.d_goal,
                "k_p": self.payload.k_p,
                "k_theta": self.payload.k_theta,
            }
        return {
            "kind": self.kind,
            "payload": p,
            "expected_post": [pc.to_dict() for pc in self.expected_post],
            "meta": _jsonable(self.meta),
        }


def operation_from_dict(d: dict) -> Operation:
    kind = d["kind"]
    p = d["payload"]
    if kind == "move_to":
        payload = MoveToRequest(
            target_node=p["target_node"],
            goal=Pose7.from_dict(p["goal"]),
            b_grasp=bool(p.get("b_grasp", False)),
            b_release=bool(p.get("b_release", False)),
        )
    elif kind == "operate":
        payload = OperateRequest(frame=p["frame"], t=np.array(p["t"]), r=np.array(p["r"]))
    elif kind == "navigate":
        payload = NavigateRequest(
            target_node=p["target_node"], d_goal=float(p["d_goal"]),
            k_p=float(p.get("k_p", 0.6)), k_theta=float(p.get("k_theta", 0.2)),
        )
    else:
        raise InvalidCommand(f"unknown operation kind {kind!r}")
    posts = [Postcondition(pc["kind"], pc.get("params", {})) for pc in d.get("expected_post", [])]
    return Operation(kind=kind, payload=payload, expected_post=posts, meta=d.get("meta", {}))


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [float(v) for v in obj]
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, Pose7):
        return obj.to_dict()
    if isinstance(obj, Enum):
        return obj.value
    return obj


@dataclass
class OperationSequence:
    ops: list
    source_command: str

    def __len__(self):
        return len(self.ops)


@dataclass
class Observation:
    """Post-step world digest: fresh detections plus robot state."""
    detections: list
    eef_pose: Pose7
    holding: Optional[str] = None          # body id
    holding_part: Optional[str] = None
    grasp_missed: bool = False
    part_states: dict = field(default_factory=dict)   # (body, part) -> PartState
    base_pose: Optional[np.ndarray] = None
    docked: Optional[tuple] = None         # (converged, range_err, heading_err)
    max_relax_rounds: int = 0              # worst IK relaxation in the last segment
    tracking_error: float = 0.0            # |achieved - commanded| of the last goal


@dataclass
class StepOutcome:
    executed: bool
    error: Optional[str] = None            # error class name when execution raised
    error_detail: str = ""
    exec_info: dict = field(default_factory=dict)


@dataclass
class ExecutionTrace:
    """Short-term context handed to diagnosis (bounded, chronological)."""
    records: deque = field(default_factory=lambda: deque(maxlen=TRACE_BOUND))

    def append(self, record: dict) -> None:
        self.records.append(record)

    def last(self) -> Optional[dict]:
        return self.records[-1] if self.records else None

    def tail(self, n: int = 5) -> list:
        return list(self.records)[-n:]


@dataclass
class MemoryStore:
    records: list = field(default_factory=list)   # (category, repair, success)

    def append(self, category: DiagnosisCategory, repair: str, success: bool) -> None:
        self.records.append((DiagnosisCategory(category), repair, bool(success)))


def retrieve_memory(store: MemoryStore, diagnosis: Diagnosis) -> list:
    """Records matching the diagnosis category, most recent first. Advisory."""
    return [r for r in reversed(store.records) if r[0] == diagnosis.category]


# --- rule-based planner ------------------------------------------------------

class PlannerInterface:
    """decompose / diagnose / replan; implementations must be deterministic
    for identical inputs (the external endpoint variant shares the contract)."""

    def decompose(self, command: str, tools: ToolLibrary, graph: SceneGraph) -> OperationSequence:
        raise NotImplementedError

    def diagnose(self, trace: ExecutionTrace, graph: SceneGraph) -> Diagnosis:
        raise NotImplementedError

    def replan(self, graph: SceneGraph, command: str, memory: MemoryStore,
               tools: ToolLibrary) -> OperationSequence:
        raise NotImplementedError


_PUT_RE = re.compile(r"^(?:put|place|move|drop)\s+(?P<obj>.+?)\s+(?:in|into|on|onto|to|near)\s+(?P<dst>.+)$")
_OPEN_RE = re.compile(r"^open\s+(?P<obj>.+)$")
_CLOSE_RE = re.compile(r"^close\s+(?P<obj>.+)$")
_PRESS_RE = re.compile(r"^(?:press|push)\s+(?P<obj>.+)$")
_POUR_RE = re.compile(r"^pour\s+(?P<obj>.+?)\s+(?:in|into|on|onto)\s+(?P<dst>.+)$")


def _norm(text: str) -> str:
    return re.sub(r"[^a-z0-9 ]", "", text.lower()).strip()


def _strip_stopwords(text: str) -> str:
    return " ".join(t for t in text.split() if t not in STOPWORDS)


class RulePlanner(PlannerInterface):
    """Deterministic template grammar over the scene graph."""

    def __init__(self, r_safe: float = 0.051, mobile_reach: float = 0.8,
                 d_goal: float = 0.45):
        self.r_safe = r_safe
        self.mobile_reach = mobile_reach
        self.d_goal = d_goal

    # grounding ---------------------------------------------------------

    def ground(self, graph: SceneGraph, phrase: str) -> str:
        phrase = _strip_stopwords(_norm(phrase))
        if not phrase:
            raise GroundingFailure("empty referent", token=phrase)
        matches = [m for m in query_by_context(graph, phrase) if m != ROBOT_NODE]
        if not matches:
            raise GroundingFailure(f"no node matches {phrase!r}", token=phrase)
        return matches[0]

    # goal computation ----------------------------------------------------

    def hover_height(self, node: ObjectNode) -> float:
        return _half_height(node) + self.r_safe + HOVER_MARGIN

    def grasp_pose(self, node: ObjectNode) -> Pose7:
        if node.semantic.role == Role.ARTICULATED_FIXTURE:
            # the perception oracle reports the handle standoff pose directly
            return node.kinematic.pose
        pos = node.kinematic.pose.position + np.array([0.0, 0.0, self.hover_height(node)])
        return Pose7(pos, grasp_orientation_topdown())

    def place_pose(self, container: ObjectNode, held: ObjectNode) -> Pose7:
        drop = 0.02
        z = (container.kinematic.pose.position[2] + _half_height(container)
             + self.hover_height(held) + drop)
        pos = np.array([container.kinematic.pose.position[0],
                        container.kinematic.pose.position[1], z])
        return Pose7(pos, grasp_orientation_topdown())

    # templates -----------------------------------------------------------

    def decompose(self, command: str, tools: ToolLibrary, graph: SceneGraph) -> OperationSequence:
        text = _norm(command)
        if not text:
            raise InvalidCommand("empty command")
        m = _POUR_RE.match(text)
        if m:
            ops = self._pour_ops(graph, m["obj"], m["dst"])
        else:
            m = _PUT_RE.match(text)
            if m:
                ops = self._put_ops(graph, m["obj"], m["dst"])
            else:
                m = _OPEN_RE.match(text)
                if m:
                    ops = self._drawer_ops(graph, m["obj"], opening=True)
                else:
                    m = _CLOSE_RE.match(text)
                    if m:
                        ops = self._drawer_ops(graph, m["obj"], opening=False)
                    else:
                        m = _PRESS_RE.match(text)
                        if m:
                            ops = self._press_ops(graph, m["obj"])
                        else:
                            raise InvalidCommand(f"no template matches {command!r}")
        if "navigate" in tools:
            ops = self._maybe_prepend_navigate(graph, ops)
        return OperationSequence(ops=ops, source_command=command)

    def _grasp_op(self, graph: SceneGraph, node_id: str) -> Operation:
        node = graph.node(node_id)
        return Operation(
            kind="move_to",
            payload=MoveToRequest(target_node=node_id, goal=self.grasp_pose(node), b_grasp=True),
            expected_post=[Postcondition("holding", {"node": node_id})],
            meta={"role": "grasp", "target": node_id,
                  "aperture": node.kinematic.grasp_aperture,
                  "approach_axis": [0.0, 0.0, -1.0]},
        )

    def _put_ops(self, graph: SceneGraph, obj_phrase: str, dst_phrase: str) -> list:
        obj_id = self.ground(graph, obj_phrase)
        dst_id = self.ground(graph, dst_phrase)
        if obj_id == dst_id:
            raise GroundingFailure(f"object and destination resolve to {obj_id}", token=dst_phrase)
        obj = graph.node(obj_id)
        dst = graph.node(dst_id)
        place = Operation(
            kind="move_to",
            payload=MoveToRequest(target_node=dst_id, goal=self.place_pose(dst, obj),
                                  b_release=True),
            expected_post=[
                Postcondition(
                    "inside" if dst.semantic.role == Role.CONTAINER else "near",
                    {"node": obj_id, "other": dst_id, "tol": 0.06},
                )
            ],
            meta={"role": "place", "target": dst_id, "held": obj_id,
                  "approach_axis": [0.0, 0.0, -1.0]},
        )
        return [self._grasp_op(graph, obj_id), place]

    def _drawer_ops(self, graph: SceneGraph, phrase: str, opening: bool) -> list:
        node_id = self.ground(graph, phrase)
        node = graph.node(node_id)
        if not node.parts:
            raise GroundingFailure(f"{node_id} has no operable part", token=phrase)
        part = self._select_part(node, phrase)
        axis = np.array(part.axis)
        travel = part.travel
        grasp = self._grasp_op(graph, node_id)
        grasp.meta["part"] = part.name
        grasp.meta["approach_axis"] = list(-axis)
        # eef z faces the handle (-axis); pulling is -z in the eef frame
        pull_t = np.array([0.0, 0.0, -travel if opening else travel])
        target_state = PartState.OPEN if opening else PartState.CLOSED
        pull = Operation(
            kind="operate",
            payload=OperateRequest(frame="eef", t=pull_t, r=np.zeros(3)),
            expected_post=[Postcondition("part_state",
                                         {"node": node_id, "part": part.name,
                                          "state": target_state.value})],
            meta={"role": "pull", "target": node_id, "part": part.name},
        )
        handle_after = (node.kinematic.pose.position
                        + axis * (travel if opening else -travel))
        retreat_goal = Pose7(handle_after + np.array([0.0, 0.0, 0.15]),
                             node.kinematic.pose.orientation)
        retreat = Operation(
            kind="move_to",
            payload=MoveToRequest(target_node=node_id, goal=retreat_goal, b_release=True),
            expected_post=[Postcondition("part_state",
                                         {"node": node_id, "part": part.name,
                                          "state": target_state.value})],
            meta={"role": "retreat", "target": node_id, "part": part.name,
                  "approach_axis": [0.0, 0.0, -1.0]},
        )
        return [grasp, pull, retreat]

    def _select_part(self, node: ObjectNode, phrase: str):
        toks = set(_strip_stopwords(_norm(phrase)).split())
        for p in node.parts:
            if toks & (set(p.name.lower().split()) | set(p.function.lower().split())):
                return p
        return node.parts[0]

    def _press_ops(self, graph: SceneGraph, phrase: str) -> list:
        node_id = self.ground(graph, phrase)
        node = graph.node(node_id)
        above = Pose7(
            node.kinematic.pose.position
            + np.array([0.0, 0.0, _half_height(node) + self.r_safe + HOVER_MARGIN]),
            grasp_orientation_topdown(),
        )
        descend = self.r_safe + HOVER_MARGIN - 0.005
        approach = Operation(
            kind="move_to",
            payload=MoveToRequest(target_node=node_id, goal=above),
            expected_post=[Postcondition("eef_at", {"pose": above.to_dict(),
                                                     "tol": VERIFY_POS_TOL})],
            meta={"role": "approach", "target": node_id,
                  "approach_axis": [0.0, 0.0, -1.0]},
        )
        press_part = next(
            (p for p in node.parts if "press" in p.function or "button" in p.name),
            None,
        )
        press_post = (
            [Postcondition("part_state", {"node": node_id, "part": press_part.name,
                                          "state": PartState.CLOSED.value})]
            if press_part is not None
            else [Postcondition("eef_at", {"pose": None, "tol": VERIFY_POS_TOL})]
        )
        press = Operation(
            kind="operate",
            payload=OperateRequest(frame="base", t=np.array([0.0, 0.0, -descend]),
                                   r=np.zeros(3)),
            expected_post=press_post,
            meta={"role": "press", "target": node_id,
                  "part": press_part.name if press_part else None},
        )
        lift = Operation(
            kind="operate",
            payload=OperateRequest(frame="base", t=np.array([0.0, 0.0, descend]),
                                   r=np.zeros(3)),
            expected_post=[Postcondition("eef_at", {"pose": None, "tol": VERIFY_POS_TOL})],
            meta={"role": "lift", "target": node_id},
        )
        return [approach, press, lift]

    def _pour_ops(self, graph: SceneGraph, obj_phrase: str, dst_phrase: str) -> list:
        obj_id = self.ground(graph, obj_phrase)
        dst_id = self.ground(graph, dst_phrase)
        obj = graph.node(obj_id)
        dst = graph.node(dst_id)
        over = Pose7(
            dst.kinematic.pose.position
            + np.array([0.0, 0.0, _half_height(dst) + self.hover_height(obj) + 0.06]),
            grasp_orientation_topdown(),
        )
        hold_over = Operation(
            kind="move_to",
            payload=MoveToRequest(target_node=dst_id, goal=over),
            expected_post=[Postcondition("eef_at", {"pose": over.to_dict(),
                                                     "tol": VERIFY_POS_TOL})],
            meta={"role": "transit", "target": dst_id, "held": obj_id,
                  "approach_axis": [0.0, 0.0, -1.0]},
        )
        tilt_angle = 1.9
        tilt = Operation(
            kind="operate",
            payload=OperateRequest(frame="eef", t=np.zeros(3),
                                   r=np.array([tilt_angle, 0.0, 0.0])),
            expected_post=[Postcondition("eef_at", {"pose": None, "tol": VERIFY_POS_TOL})],
            meta={"role": "tilt", "target": dst_id},
        )
        untilt = Operation(
            kind="operate",
            payload=OperateRequest(frame="eef", t=np.zeros(3),
                                   r=np.array([-tilt_angle, 0.0, 0.0])),
            expected_post=[Postcondition("eef_at", {"pose": None, "tol": VERIFY_POS_TOL})],
            meta={"role": "untilt", "target": dst_id},
        )
        return [self._grasp_op(graph, obj_id), hold_over, tilt, untilt]

    def _maybe_prepend_navigate(self, graph: SceneGraph, ops: list) -> list:
        target = next((op.meta.get("target") for op in ops if op.meta.get("role") == "grasp"),
                      ops[0].meta.get("target") if ops else None)
        if target is None:
            return ops
        pos = graph.node(target).kinematic.pose.position
        if float(np.linalg.norm(pos[:2])) <= self.mobile_reach:
            return ops
        nav = Operation(
            kind="navigate",
            payload=NavigateRequest(target_node=target, d_goal=self.d_goal),
            expected_post=[Postcondition("docked", {"node": target, "d_goal": self.d_goal,
                                                    "tol": 0.02})],
            meta={"role": "dock", "target": target},
        )
        return [nav] + ops

    # diagnosis ------------------------------------------------------------

    def diagnose(self, trace: ExecutionTrace, graph: SceneGraph) -> Diagnosis:
        rec = trace.last()
        if rec is None:
            return Diagnosis(DiagnosisCategory.UNKNOWN, "no trace context")
        if rec.get("error") in ("SegmentInfeasible", "InfeasibleEndpoint", "NoPath",
                                "IkInfeasible"):
            return Diagnosis(DiagnosisCategory.KINEMATIC_INFEASIBLE,
                             f"execution error {rec['error']}", rec.get("tracking_error", 0.0))
        if rec.get("max_relax_rounds", 0) > 0 or rec.get("tracking_error", 0.0) > VERIFY_POS_TOL:
            return Diagnosis(DiagnosisCategory.KINEMATIC_INFEASIBLE,
                             "goal tracked only under relaxed tolerances",
                             rec.get("tracking_error", 0.0))
        if rec.get("expected_grasp"):
            residual = rec.get("target_residual", 0.0)
            if rec.get("grasp_missed"):
                if residual > DISPLACE_THRESHOLD:
                    return Diagnosis(DiagnosisCategory.TARGET_DISPLACED,
                                     "target moved during approach", residual)
                return Diagnosis(DiagnosisCategory.OCCLUSION_MISLOCALIZATION,
                                 "grasp missed; observed pose disagrees with model",
                                 residual)
            if not rec.get("holding_after"):
                return Diagnosis(DiagnosisCategory.GRASP_SLIPPAGE,
                                 "gripper empty after a completed grasp", residual)
        residual = rec.get("target_residual", 0.0)
        if residual > DISPLACE_THRESHOLD:
            return Diagnosis(DiagnosisCategory.TARGET_DISPLACED,
                             "target pose shifted beyond threshold", residual)
        return Diagnosis(DiagnosisCategory.UNKNOWN, "no rule matched", residual)

    # replanning -----------------------------------------------------------

    def replan(self, graph: SceneGraph, command: str, memory: MemoryStore,
               tools: ToolLibrary) -> OperationSequence:
        seq = self.decompose(command, tools, graph)
        ops = list(seq.ops)
        # completed sub-goals stay done: skip grasping an object already held,
        # and part operations whose target state already holds in the graph
        while ops:
            first = ops[0]
            if (first.meta.get("role") == "grasp"
                    and graph.has_edge(first.meta["target"], ROBOT_NODE, HELD_EDGE)):
                ops = ops[1:]
                continue
            if first.expected_post and all(
                _post_holds_in_graph(graph, pc) for pc in first.expected_post
            ):
                ops = ops[1:]
                continue
            break
        if not ops:
            ops = seq.ops[-1:]
        return OperationSequence(ops=ops, source_command=command)


def _post_holds_in_graph(graph: SceneGraph, pc: Postcondition) -> bool:
    if pc.kind == "part_state":
        try:
            node = graph.node(pc.params["node"])
            return node.part(pc.params["part"]).state == PartState(pc.params["state"])
        except TaskMotionError:
            return False
    if pc.kind == "holding":
        return graph.has_edge(pc.params["node"], ROBOT_NODE, HELD_EDGE)
    return False


def _half_height(node: ObjectNode) -> float:
    dims = node.attributes.dims
    shape = node.attributes.shape
    if not dims:
        return 0.03
    if shape.value == "box":
        return dims[2] / 2 if len(dims) >= 3 else dims[0] / 2
    if shape.value == "cylinder":
        return dims[1] / 2 if len(dims) >= 2 else dims[0]
    return dims[0]


# --- external planner endpoint ----------------------------------------------

ENDPOINT_REQUEST_SCHEMA = {
    "type": "object",
    "required": ["schema_version", "mode", "command", "graph", "tools", "trace_tail"],
    "properties": {
        "schema_version": {"const": 1},
        "mode": {"enum": ["decompose", "replan"]},
        "command": {"type": "string"},
        "graph": {"type": "object"},
        "tools": {"type": "array", "items": {"type": "string"}},
        "trace_tail": {"type": "array"},
    },
}

ENDPOINT_RESPONSE_SCHEMA = {
    "type": "object",
    "required": ["schema_version", "operations"],
    "properties": {
        "schema_version": {"const": 1},
        "operations": {"type": "array", "items": {"type": "object"}},
    },
}


class EndpointPlanner(PlannerInterface):
    """JSON-over-HTTP client for an external planner; diagnosis stays local.

    Request: {schema_version, mode, command, graph, tools, trace_tail}.
    Response: {schema_version, operations}. Violations raise
    PlannerEndpointError; the transport timeout is mandatory.
    """

    def __init__(self, url: str, timeout: float = 10.0, fallback: Optional[RulePlanner] = None):
        self.url = url
        self.timeout = timeout
        self.rules = fallback or RulePlanner()
        self._trace_tail: list = []

    def note_trace(self, tail: list) -> None:
        self._trace_tail = tail

    def _call(self, mode: str, command: str, graph: SceneGraph, tools: ToolLibrary) -> OperationSequence:
        import requests

        try:
            import jsonschema as _js
        except ImportError:   # pragma: no cover
            _js = None
        payload = {
            "schema_version": 1,
            "mode": mode,
            "command": command,
            "graph": graph_to_dict(graph),
            "tools": list(tools.tools),
            "trace_tail": self._trace_tail,
        }
        if _js is not None:
            _js.validate(payload, ENDPOINT_REQUEST_SCHEMA)
        try:
            resp = requests.post(self.url, json=payload, timeout=self.timeout)
            resp.raise_for_status()
            doc = resp.json()
        except Exception as exc:
            raise PlannerEndpointError(f"planner endpoint failed: {exc}") from exc
        if _js is not None:
            try:
                _js.validate(doc, ENDPOINT_RESPONSE_SCHEMA)
            except _js.ValidationError as exc:
                raise PlannerEndpointError(f"bad endpoint response: {exc.message}") from exc
        ops = [operation_from_dict(d) for d in doc["operations"]]
        if not ops:
            raise PlannerEndpointError("endpoint returned an empty operation list")
        return OperationSequence(ops=ops, source_command=command)

    def decompose(self, command, tools, graph):
        return self._call("decompose", command, graph, tools)

    def diagnose(self, trace, graph):
        return self.rules.diagnose(trace, graph)

    def replan(self, graph, command, memory, tools):
        return self._call("replan", command, graph, tools)


# --- verification -------------------------------------------------------------

@dataclass
class VerificationReport:
    e_t: int
    geometric_ok: bool
    semantic_ok: bool
    detail: str = ""

    def to_dict(self) -> dict:
        return {"e_t": self.e_t, "geometric_ok": self.geometric_ok,
                "semantic_ok": self.semantic_ok, "detail": self.detail}


class VerifierInterface:
    """Semantic consistency checker (the VLM's role; oracle by default)."""

    def check(self, post: Postcondition, obs: Observation) -> bool:
        raise NotImplementedError


def verify(op: Operation, eef_before: Pose7, obs: Observation,
           verifier: VerifierInterface) -> VerificationReport:
    """Conjunction of geometric and semantic consistency for one operation."""
    geometric_ok, detail = _geometric_check(op, eef_before, obs)
    semantic_ok = True
    for pc in op.expected_post:
        if pc.kind == "eef_at":
            continue   # covered by the geometric check
        if not verifier.check(pc, obs):
            semantic_ok = False
            detail = (detail + "; " if detail else "") + f"post {pc.kind} failed"
            break
    e_t = 1 if (geometric_ok and semantic_ok) else 0
    return VerificationReport(e_t=e_t, geometric_ok=geometric_ok,
                              semantic_ok=semantic_ok, detail=detail)


def _geometric_check(op: Operation, eef_before: Pose7, obs: Observation):
    if op.kind == "move_to":
        err = float(np.linalg.norm(obs.eef_pose.position - op.payload.goal.position))
        if err > VERIFY_POS_TOL:
            return False, f"eef {err:.3f} m from goal"
        if op.payload.b_grasp and obs.holding is None:
            return False, "gripper empty after grasp"
        if op.payload.b_release and obs.holding is not None:
            return False, "gripper still holding after release"
        return True, ""
    if op.kind == "operate":
        expected = apply_increment(
            Transform.from_pose(eef_before), op.payload.t, op.payload.r, op.payload.frame
        ).to_pose()
        err = float(np.linalg.norm(obs.eef_pose.position - expected.position))
        ang = geodesic_angle(obs.eef_pose.orientation, expected.orientation)
        if err > VERIFY_POS_TOL or ang > 0.05:
            return False, f"relative motion off by {err:.3f} m / {ang:.3f} rad"
        return True, ""
    if op.kind == "navigate":
        if obs.docked is None:
            return False, "no docking outcome"
        converged, range_err, heading_err = obs.docked
        if not converged:
            return False, f"docking did not converge ({range_err:.3f} m, {heading_err:.3f} rad)"
        return True, ""
    return False, f"unknown op kind {op.kind}"


# --- reflection and repair ----------------------------------------------------

def reflect(obs: Observation, trace: ExecutionTrace, memory: MemoryStore,
            planner: PlannerInterface, graph: SceneGraph) -> tuple:
    """Revise the graph to the observed state and draw a diagnosis.

    The graph after reflection describes what happened, not what was
    intended: poses come from the fresh detections, held edges reflect the
    actual gripper state, part states the observed mechanism states.
    """
    sync_graph(graph, obs)
    diagnosis = planner.diagnose(trace, graph)
    return graph, diagnosis


def sync_graph(graph: SceneGraph, obs: Observation) -> None:
    by_node = _detections_by_node_id(obs.detections)
    for node_id, det in by_node.items():
        if node_id in graph.nodes:
            update_pose(graph, node_id, det.pose)
    for (body, part), state in obs.part_states.items():
        if body in graph.nodes:
            try:
                update_part_state(graph, body, part, state)
            except TaskMotionError:
                pass
    held_edges = [e for e in graph.edges if e[1] == ROBOT_NODE and e[2] == HELD_EDGE]
    for e in held_edges:
        if obs.holding != e[0]:
            graph.remove_edge(*e)
    if obs.holding is not None and obs.holding in graph.nodes:
        if not graph.has_edge(obs.holding, ROBOT_NODE, HELD_EDGE):
            graph.add_edge(obs.holding, ROBOT_NODE, HELD_EDGE)


def _detections_by_node_id(detections: list) -> dict:
    out = {}
    counts: dict = {}
    for det in detections:
        base = det.label.replace(" ", "_")
        counts[base] = counts.get(base, 0) + 1
        node_id = base if counts[base] == 1 else f"{base}_{counts[base]}"
        out[node_id] = det
    return out


def repair_local(op: Operation, diagnosis: Diagnosis, graph: SceneGraph,
                 planner: RulePlanner) -> Operation:
    """Parameter-level repair; the task structure is untouched.

    grasp_slippage: re-aim at the refreshed pose, aperture shrunk by 10%.
    occlusion_mislocalization: re-aim at the refreshed (re-queried) pose.
    kinematic_infeasible: back the goal off 2 cm along the approach axis.
    """
    if diagnosis.category not in LOCAL_CATEGORIES:
        raise NotLocallyRepairable(f"{diagnosis.category.value} requires replanning")
    if op.kind != "move_to":
        return op
    target = op.meta.get("target", op.payload.target_node)
    node = graph.node(target)
    new_meta = dict(op.meta)
    if op.meta.get("role") == "grasp":
        goal = planner.grasp_pose(node)
    elif op.meta.get("role") == "place":
        goal = planner.place_pose(node, graph.node(op.meta["held"]))
    else:
        goal = op.payload.goal
    aperture = new_meta.get("aperture")
    if diagnosis.category == DiagnosisCategory.GRASP_SLIPPAGE and aperture:
        new_meta["aperture"] = 0.9 * aperture
    if diagnosis.category == DiagnosisCategory.KINEMATIC_INFEASIBLE:
        approach = np.asarray(op.meta.get("approach_axis", [0.0, 0.0, -1.0]), dtype=float)
        goal = Pose7(goal.position - 0.02 * approach, goal.orientation)
    payload = MoveToRequest(
        target_node=op.payload.target_node,
        goal=goal,
        b_grasp=op.payload.b_grasp,
        b_release=op.payload.b_release,
    )
    return Operation(kind=op.kind, payload=payload, expected_post=op.expected_post,
                     meta=new_meta)


def replan_global(graph: SceneGraph, command: str, memory: MemoryStore,
                  planner: PlannerInterface, tools: ToolLibrary) -> OperationSequence:
    return planner.replan(graph, command, memory, tools)
