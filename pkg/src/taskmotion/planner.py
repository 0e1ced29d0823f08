"""Clearance-constrained grid search and waypoint synthesis.

A* expands only voxels whose field value meets the clearance radius, with
Euclidean step costs and a Euclidean heuristic (admissible and consistent
for these costs). Pop order ties break by smaller heuristic, then linear
voxel index, so searches are fully deterministic. Path costs are recomputed
canonically from the step-type counts of the final path, which makes costs
comparable across independent implementations to the last bit.
"""

from __future__ import annotations

import heapq
import json
import math
from dataclasses import dataclass

import numpy as np

from .errors import InfeasibleEndpoint, InvalidArgument, NoPath
from .esdf import Esdf, compute_esdf
from .geometry import Pose7, slerp
from .occupancy import VoxelGrid

try:
    from numba import njit

    _HAVE_NUMBA = True
except ImportError:   # pragma: no cover
    _HAVE_NUMBA = False

SQRT2 = math.sqrt(2.0)
SQRT3 = math.sqrt(3.0)
_STEP_COST = (0.0, 1.0, SQRT2, SQRT3)   # indexed by L1 norm of the step


def neighbor_offsets(connectivity: int) -> np.ndarray:
    if connectivity not in (6, 26):
        raise InvalidArgument(f"connectivity must be 6 or 26, got {connectivity}")
    offs = []
    for di in (-1, 0, 1):
        for dj in (-1, 0, 1):
            for dk in (-1, 0, 1):
                if (di, dj, dk) == (0, 0, 0):
                    continue
                if connectivity == 6 and abs(di) + abs(dj) + abs(dk) != 1:
                    continue
                offs.append((di, dj, dk))
    return np.array(offs, dtype=np.int64)


@dataclass(frozen=True)
class PlannerParams:
    r_safe: float = 0.051      # m, minimum clearance at every expanded voxel
    connectivity: int = 26

    def __post_init__(self):
        if self.r_safe <= 0:
            raise InvalidArgument("r_safe must be positive")
        neighbor_offsets(self.connectivity)


@dataclass
class GridPath:
    indices: np.ndarray        # L+1 x 3 voxel indices
    cost: float                # meters, canonical step-count evaluation

    def __len__(self):
        return len(self.indices)


@dataclass
class Waypoints:
    poses: list                # list of Pose7

    def __len__(self):
        return len(self.poses)

    def positions(self) -> np.ndarray:
        return np.array([p.position for p in self.poses])


def path_cost(indices: np.ndarray, resolution: float) -> float:
    """Canonical cost: count axis/face/corner steps, evaluate once."""
    if len(indices) < 2:
        return 0.0
    steps = np.abs(np.diff(np.asarray(indices, dtype=np.int64), axis=0)).sum(axis=1)
    n1 = int(np.sum(steps == 1))
    n2 = int(np.sum(steps == 2))
    n3 = int(np.sum(steps == 3))
    return (n1 * 1.0 + n2 * SQRT2 + n3 * SQRT3) * resolution


if _HAVE_NUMBA:

    @njit(cache=True)
    def _astar_core(valid, h_dim, w_dim, d_dim, start, goal, offs, costs):
        n = h_dim * w_dim * d_dim
        g = np.full(n, np.inf)
        closed = np.zeros(n, dtype=np.uint8)
        parent = np.full(n, -1, dtype=np.int64)

        gi = goal // (w_dim * d_dim)
        gj = (goal // d_dim) % w_dim
        gk = goal % d_dim

        cap = 1024
        hp_f = np.empty(cap)
        hp_h = np.empty(cap)
        hp_i = np.empty(cap, dtype=np.int64)
        size = 0

        si = start // (w_dim * d_dim)
        sj = (start // d_dim) % w_dim
        sk = start % d_dim
        h0 = math.sqrt((si - gi) ** 2 + (sj - gj) ** 2 + (sk - gk) ** 2)
        g[start] = 0.0
        hp_f[0] = h0
        hp_h[0] = h0
        hp_i[0] = start
        size = 1

        while size > 0:
            # pop root
            idx = hp_i[0]
            size -= 1
            hp_f[0] = hp_f[size]
            hp_h[0] = hp_h[size]
            hp_i[0] = hp_i[size]
            pos = 0
            while True:
                left = 2 * pos + 1
                right = left + 1
                best = pos
                if left < size and (
                    hp_f[left] < hp_f[best]
                    or (hp_f[left] == hp_f[best] and (hp_h[left] < hp_h[best]
                        or (hp_h[left] == hp_h[best] and hp_i[left] < hp_i[best])))
                ):
                    best = left
                if right < size and (
                    hp_f[right] < hp_f[best]
                    or (hp_f[right] == hp_f[best] and (hp_h[right] < hp_h[best]
                        or (hp_h[right] == hp_h[best] and hp_i[right] < hp_i[best])))
                ):
                    best = right
                if best == pos:
                    break
                hp_f[pos], hp_f[best] = hp_f[best], hp_f[pos]
                hp_h[pos], hp_h[best] = hp_h[best], hp_h[pos]
                hp_i[pos], hp_i[best] = hp_i[best], hp_i[pos]
                pos = best

            if closed[idx]:
                continue
            closed[idx] = 1
            if idx == goal:
                return True, parent
            ci = idx // (w_dim * d_dim)
            cj = (idx // d_dim) % w_dim
            ck = idx % d_dim
            g_cur = g[idx]

            for m in range(offs.shape[0]):
                ni = ci + offs[m, 0]
                nj = cj + offs[m, 1]
                nk = ck + offs[m, 2]
                if ni < 0 or ni >= h_dim or nj < 0 or nj >= w_dim or nk < 0 or nk >= d_dim:
                    continue
                nidx = (ni * w_dim + nj) * d_dim + nk
                if not valid[nidx] or closed[nidx]:
                    continue
                ng = g_cur + costs[m]
                if ng < g[nidx]:
                    g[nidx] = ng
                    parent[nidx] = idx
                    nh = math.sqrt((ni - gi) ** 2 + (nj - gj) ** 2 + (nk - gk) ** 2)
                    if size >= cap:
                        new_cap = cap * 2
                        nf = np.empty(new_cap)
                        nh_arr = np.empty(new_cap)
                        ni_arr = np.empty(new_cap, dtype=np.int64)
                        nf[:size] = hp_f[:size]
                        nh_arr[:size] = hp_h[:size]
                        ni_arr[:size] = hp_i[:size]
                        hp_f, hp_h, hp_i, cap = nf, nh_arr, ni_arr, new_cap
                    # sift up
                    pos = size
                    hp_f[pos] = ng + nh
                    hp_h[pos] = nh
                    hp_i[pos] = nidx
                    size += 1
                    while pos > 0:
                        par = (pos - 1) // 2
                        if hp_f[pos] < hp_f[par] or (
                            hp_f[pos] == hp_f[par] and (hp_h[pos] < hp_h[par]
                            or (hp_h[pos] == hp_h[par] and hp_i[pos] < hp_i[par]))
                        ):
                            hp_f[pos], hp_f[par] = hp_f[par], hp_f[pos]
                            hp_h[pos], hp_h[par] = hp_h[par], hp_h[pos]
                            hp_i[pos], hp_i[par] = hp_i[par], hp_i[pos]
                            pos = par
                        else:
                            break
        return False, parent


def _astar_python(valid, dims, start, goal, offs, costs):
    """heapq reference implementation; identical expansion order."""
    h_dim, w_dim, d_dim = dims
    goal_ijk = np.array([goal // (w_dim * d_dim), (goal // d_dim) % w_dim, goal % d_dim])

    def h_of(idx):
        ijk = np.array([idx // (w_dim * d_dim), (idx // d_dim) % w_dim, idx % d_dim])
        return float(np.linalg.norm(ijk - goal_ijk))

    g = {start: 0.0}
    parent = {start: -1}
    closed = set()
    h0 = h_of(start)
    heap = [(h0, h0, start)]
    while heap:
        _, _, idx = heapq.heappop(heap)
        if idx in closed:
            continue
        closed.add(idx)
        if idx == goal:
            return True, parent
        ci, cj, ck = idx // (w_dim * d_dim), (idx // d_dim) % w_dim, idx % d_dim
        for m in range(len(offs)):
            ni, nj, nk = ci + offs[m, 0], cj + offs[m, 1], ck + offs[m, 2]
            if not (0 <= ni < h_dim and 0 <= nj < w_dim and 0 <= nk < d_dim):
                continue
            nidx = (ni * w_dim + nj) * d_dim + nk
            if not valid[nidx] or nidx in closed:
                continue
            ng = g[idx] + costs[m]
            if ng < g.get(nidx, math.inf):
                g[nidx] = ng
                parent[nidx] = idx
                nh = h_of(nidx)
                heapq.heappush(heap, (ng + nh, nh, nidx))
    return False, parent


def astar_mask(valid_mask: np.ndarray, u_s, u_g, connectivity: int = 26,
               resolution: float = 1.0) -> GridPath:
    """A* over an explicit validity mask; raises on blocked endpoints."""
    dims = valid_mask.shape
    u_s = np.asarray(u_s, dtype=int).reshape(3)
    u_g = np.asarray(u_g, dtype=int).reshape(3)
    for name, u in (("start", u_s), ("goal", u_g)):
        if np.any(u < 0) or np.any(u >= np.array(dims)):
            raise InfeasibleEndpoint(f"{name} voxel {u.tolist()} outside grid {dims}")
        if not valid_mask[tuple(u)]:
            raise InfeasibleEndpoint(f"{name} voxel {u.tolist()} violates clearance")
    offs = neighbor_offsets(connectivity)
    costs = np.array([_STEP_COST[int(np.abs(o).sum())] for o in offs])
    start = int((u_s[0] * dims[1] + u_s[1]) * dims[2] + u_s[2])
    goal = int((u_g[0] * dims[1] + u_g[1]) * dims[2] + u_g[2])
    flat = np.ascontiguousarray(valid_mask.reshape(-1).astype(np.uint8))
    if _HAVE_NUMBA:
        found, parent = _astar_core(flat, dims[0], dims[1], dims[2], start, goal, offs, costs)
        get_parent = lambda i: int(parent[i])
    else:
        found, parent = _astar_python(flat, dims, start, goal, offs, costs)
        get_parent = lambda i: parent[i]
    if not found:
        raise NoPath(f"no clearance-respecting path from {u_s.tolist()} to {u_g.tolist()}")
    chain = []
    idx = goal
    while idx != -1:
        chain.append(idx)
        idx = get_parent(idx)
    chain.reverse()
    wd, dd = dims[1], dims[2]
    indices = np.array([[i // (wd * dd), (i // dd) % wd, i % dd] for i in chain], dtype=np.int64)
    return GridPath(indices=indices, cost=path_cost(indices, resolution))


def astar(phi: Esdf, u_s, u_g, params: PlannerParams = PlannerParams()) -> GridPath:
    """Clearance-constrained A* over the distance field (validity: phi >= r_safe)."""
    valid = phi.distances >= params.r_safe
    return astar_mask(valid, u_s, u_g, params.connectivity, phi.resolution)


def path_to_metric(path: GridPath, resolution: float, origin) -> np.ndarray:
    origin = np.asarray(origin, dtype=float)
    return path.indices.astype(float) * resolution + origin


def synthesize_trajectory(positions, xi_s, xi_g) -> Waypoints:
    """Attach slerp orientations over the position chain (alpha = i/L)."""
    positions = np.asarray(positions, dtype=float).reshape(-1, 3)
    if len(positions) == 0:
        raise InvalidArgument("need at least one position")
    n = len(positions)
    if n == 1:
        return Waypoints([Pose7(positions[0], xi_s)])
    poses = [
        Pose7(positions[i], slerp(xi_s, xi_g, i / (n - 1)))
        for i in range(n)
    ]
    return Waypoints(poses)


def plan(p_s: Pose7, p_t: Pose7, m_occ: VoxelGrid, params: PlannerParams = PlannerParams(),
         phi: Esdf | None = None) -> Waypoints:
    """Collision-free waypoint synthesis between two poses.

    ESDF -> A* -> metric mapping -> slerp orientation synthesis. The exact
    endpoint poses replace their snapped voxel coordinates. A precomputed
    field for the same grid may be passed to avoid recomputation.
    """
    if phi is None:
        phi = compute_esdf(m_occ)
    u_s = m_occ.index_of(p_s.position)
    u_g = m_occ.index_of(p_t.position)
    for name, u in (("start", u_s), ("goal", u_g)):
        if not m_occ.in_bounds(u):
            raise InfeasibleEndpoint(f"{name} position outside grid bounds: voxel {u.tolist()}")
    same_pose = (
        np.allclose(p_s.position, p_t.position)
        and abs(float(np.dot(p_s.orientation, p_t.orientation))) > 1.0 - 1e-12
    )
    if np.array_equal(u_s, u_g):
        if not (phi.at_index(u_s) >= params.r_safe):
            raise InfeasibleEndpoint(f"endpoint voxel {u_s.tolist()} violates clearance")
        if same_pose:
            return Waypoints([Pose7(p_s.position, p_s.orientation)])
        positions = np.array([p_s.position, p_t.position])
    else:
        path = astar(phi, u_s, u_g, params)
        positions = path_to_metric(path, m_occ.resolution, m_occ.origin)
        positions[0] = p_s.position
        positions[-1] = p_t.position
    return synthesize_trajectory(positions, p_s.orientation, p_t.orientation)


# --- waypoint wire format: JSON lines, x y z qw qx qy qz --------------------

def waypoints_to_jsonl(wps: Waypoints) -> str:
    lines = []
    for p in wps.poses:
        x, y, z = p.position
        qw, qx, qy, qz = p.orientation
        lines.append(json.dumps([x, y, z, qw, qx, qy, qz]))
    return "\n".join(lines) + "\n"


def waypoints_from_jsonl(text: str) -> Waypoints:
    poses = []
    for line in text.strip().splitlines():
        vals = json.loads(line)
        poses.append(Pose7(np.array(vals[:3]), np.array(vals[3:])))
    return Waypoints(poses)
