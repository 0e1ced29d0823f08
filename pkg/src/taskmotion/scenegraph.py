"""Object-centric scene graph: the episodic world model the executor reads
and writes.

Nodes carry semantic, kinematic, attribute, and part-decomposition state.
The graph is single-writer; `snapshot` hands out immutable deep copies for
concurrent readers.
"""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional

import numpy as np

from .errors import InvalidArgument, MissingNode, MissingPart
from .geometry import Pose7


class Role(str, Enum):
    CONTAINER = "container"
    MANIPULATABLE = "manipulatable"
    ARTICULATED_FIXTURE = "articulated_fixture"
    SURFACE = "surface"
    OTHER = "other"


class PartState(str, Enum):
    OPEN = "open"
    CLOSED = "closed"
    PARTIAL = "partial"
    UNKNOWN = "unknown"


class ShapeKind(str, Enum):
    BOX = "box"
    CYLINDER = "cylinder"
    SPHERE = "sphere"
    MESH_REF = "mesh_ref"


# class substrings -> operational role; anything unmatched is manipulatable
ROLE_LEXICON = {
    "plate": Role.CONTAINER,
    "bowl": Role.CONTAINER,
    "basket": Role.CONTAINER,
    "bin": Role.CONTAINER,
    "cup": Role.CONTAINER,
    "drawer": Role.ARTICULATED_FIXTURE,
    "cabinet": Role.ARTICULATED_FIXTURE,
    "door": Role.ARTICULATED_FIXTURE,
    "table": Role.SURFACE,
    "desk": Role.SURFACE,
    "shelf": Role.SURFACE,
    "bench": Role.SURFACE,
}


def role_for_label(label: str) -> Role:
    low = label.lower()
    for key, role in ROLE_LEXICON.items():
        if key in low:
            return role
    return Role.MANIPULATABLE


@dataclass
class SemanticConfig:
    object_class: str
    role: Role = Role.MANIPULATABLE
    context: str = ""

    def __post_init__(self):
        if not self.object_class:
            raise InvalidArgument("object_class must be non-empty")
        self.role = Role(self.role)


@dataclass
class KinematicConstraint:
    articulated: bool = False
    grasp_aperture: float = 0.05      # m
    pose: Pose7 = field(default_factory=Pose7.identity)

    def __post_init__(self):
        if self.grasp_aperture <= 0:
            raise InvalidArgument("grasp aperture must be positive")


@dataclass
class PhysicalAttributes:
    color: str = ""
    shape: ShapeKind = ShapeKind.BOX
    dims: tuple = ()
    material: str = ""

    def __post_init__(self):
        self.shape = ShapeKind(self.shape)
        self.dims = tuple(float(v) for v in self.dims)
        if any(v <= 0 for v in self.dims):
            raise InvalidArgument("shape dims must be positive")


@dataclass
class Part:
    name: str
    function: str = ""
    state: PartState = PartState.UNKNOWN
    axis: tuple = (0.0, 0.0, 1.0)
    travel: float = 0.0

    def __post_init__(self):
        self.state = PartState(self.state)
        ax = np.asarray(self.axis, dtype=float)
        n = float(np.linalg.norm(ax))
        if n == 0:
            raise InvalidArgument(f"part {self.name}: axis must be nonzero")
        self.axis = tuple(float(v) for v in ax / n)


@dataclass
class ObjectNode:
    id: str
    semantic: SemanticConfig
    kinematic: KinematicConstraint
    attributes: PhysicalAttributes
    parts: list = field(default_factory=list)

    def __post_init__(self):
        names = [p.name for p in self.parts]
        if len(names) != len(set(names)):
            raise InvalidArgument(f"node {self.id}: duplicate part names {names}")

    def part(self, name: str) -> Part:
        for p in self.parts:
            if p.name == name:
                return p
        raise MissingPart(f"node {self.id} has no part {name!r}")

    def match_tokens(self) -> set:
        toks = set(self.semantic.object_class.lower().split())
        toks |= set(self.semantic.context.lower().split())
        if self.attributes.color:
            toks |= set(self.attributes.color.lower().split())
        for p in self.parts:
            toks |= set(p.name.lower().split())
            toks |= set(p.function.lower().split())
        return toks


@dataclass
class Detection:
    """One perception result; the minimum the graph needs to build a node."""

    label: str
    pose: Pose7
    shape: ShapeKind = ShapeKind.BOX
    dims: tuple = (0.05, 0.05, 0.05)
    aperture: float = 0.05
    parts: list = field(default_factory=list)   # list of Part or dicts
    color: str = ""
    material: str = ""
    context: str = ""


@dataclass
class SceneGraph:
    nodes: dict = field(default_factory=dict)     # id -> ObjectNode
    edges: set = field(default_factory=set)       # (src, dst, label)
    timestamp: int = 0

    def node(self, node_id: str) -> ObjectNode:
        try:
            return self.nodes[node_id]
        except KeyError:
            raise MissingNode(f"no node {node_id!r} in graph") from None

    def add_edge(self, src: str, dst: str, label: str) -> None:
        self.node(src), self.node(dst)
        self.edges.add((src, dst, label))
        self.timestamp += 1

    def remove_edge(self, src: str, dst: str, label: str) -> None:
        self.edges.discard((src, dst, label))
        self.timestamp += 1

    def has_edge(self, src: str, dst: str, label: str) -> bool:
        return (src, dst, label) in self.edges

    def remove_node(self, node_id: str) -> None:
        self.node(node_id)
        del self.nodes[node_id]
        self.edges = {e for e in self.edges if node_id not in (e[0], e[1])}
        self.timestamp += 1


def instantiate_graph(detections: list) -> SceneGraph:
    """Build a fresh graph, one node per detection, empty edge set."""
    g = SceneGraph()
    counts: dict = {}
    for det in detections:
        base = det.label.replace(" ", "_")
        counts[base] = counts.get(base, 0) + 1
        node_id = base if counts[base] == 1 else f"{base}_{counts[base]}"
        parts = [p if isinstance(p, Part) else Part(**p) for p in det.parts]
        node = ObjectNode(
            id=node_id,
            semantic=SemanticConfig(
                object_class=det.label,
                role=role_for_label(det.label),
                context=det.context,
            ),
            kinematic=KinematicConstraint(
                articulated=bool(parts),
                grasp_aperture=det.aperture,
                pose=det.pose,
            ),
            attributes=PhysicalAttributes(
                color=det.color, shape=det.shape, dims=det.dims, material=det.material
            ),
            parts=parts,
        )
        g.nodes[node.id] = node
    return g


def update_pose(g: SceneGraph, node_id: str, pose: Pose7) -> SceneGraph:
    node = g.node(node_id)
    node.kinematic.pose = pose
    g.timestamp += 1
    return g


def update_part_state(g: SceneGraph, node_id: str, part_name: str, new_state) -> SceneGraph:
    node = g.node(node_id)
    node.part(part_name).state = PartState(new_state)
    g.timestamp += 1
    return g


def query_by_context(g: SceneGraph, text: str) -> list:
    """Ids of nodes whose tokens overlap the query, best match first.

    Ties break lexicographically by id so rankings are reproducible.
    """
    toks = [t for t in text.lower().split() if t]
    scored = []
    for node_id, node in g.nodes.items():
        node_toks = node.match_tokens()
        score = sum(1 for t in toks if t in node_toks)
        if score > 0:
            scored.append((-score, node_id))
    scored.sort()
    return [node_id for _, node_id in scored]


def snapshot(g: SceneGraph) -> SceneGraph:
    return copy.deepcopy(g)


# --- JSON round trip -------------------------------------------------------

def _node_to_dict(node: ObjectNode) -> dict:
    return {
        "id": node.id,
        "semantic": {
            "object_class": node.semantic.object_class,
            "role": node.semantic.role.value,
            "context": node.semantic.context,
        },
        "kinematic": {
            "articulated": node.kinematic.articulated,
            "grasp_aperture": node.kinematic.grasp_aperture,
            "pose": node.kinematic.pose.to_dict(),
        },
        "attributes": {
            "color": node.attributes.color,
            "shape": node.attributes.shape.value,
            "dims": list(node.attributes.dims),
            "material": node.attributes.material,
        },
        "parts": [
            {
                "name": p.name,
                "function": p.function,
                "state": p.state.value,
                "axis": list(p.axis),
                "travel": p.travel,
            }
            for p in node.parts
        ],
    }


def graph_to_dict(g: SceneGraph) -> dict:
    return {
        "timestamp": g.timestamp,
        "nodes": [_node_to_dict(g.nodes[k]) for k in sorted(g.nodes)],
        "edges": sorted([list(e) for e in g.edges]),
    }


def graph_to_json(g: SceneGraph) -> str:
    return json.dumps(graph_to_dict(g), sort_keys=True)


def graph_from_dict(d: dict) -> SceneGraph:
    g = SceneGraph(timestamp=int(d.get("timestamp", 0)))
    for nd in d["nodes"]:
        node = ObjectNode(
            id=nd["id"],
            semantic=SemanticConfig(**nd["semantic"]),
            kinematic=KinematicConstraint(
                articulated=nd["kinematic"]["articulated"],
                grasp_aperture=nd["kinematic"]["grasp_aperture"],
                pose=Pose7.from_dict(nd["kinematic"]["pose"]),
            ),
            attributes=PhysicalAttributes(**nd["attributes"]),
            parts=[Part(**p) for p in nd["parts"]],
        )
        g.nodes[node.id] = node
    g.edges = {tuple(e) for e in d.get("edges", [])}
    return g


def graph_from_json(s: str) -> SceneGraph:
    return graph_from_dict(json.loads(s))
