"""Serial-chain forward kinematics and a tolerance-relaxing IK solver.

The solver runs damped weighted least-squares descent on the pose objective
with projection onto the joint box limits. When the strict tolerances cannot
be met, it widens them by fixed factors (x5 position, x2 rotation) per round
and retries from the seed plus a batch of perturbed seeds.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from importlib import resources
from typing import Callable, Optional

import numpy as np

from .errors import IkInfeasible, InvalidArgument, JointLimitViolation
from .geometry import (
    Pose7,
    Transform,
    axis_angle_matrix,
    matrix_to_quat,
    orientation_error,
    quat_normalize,
)

POS_TOL_STRICT = 0.01   # m
ROT_TOL_STRICT = 0.02   # rad
POS_RELAX_FACTOR = 5.0
ROT_RELAX_FACTOR = 2.0


@dataclass(frozen=True)
class RevoluteJoint:
    axis: np.ndarray          # unit vector in the joint's local frame
    origin: Transform         # fixed offset from the previous joint frame

    def __post_init__(self):
        ax = np.asarray(self.axis, dtype=float).reshape(3)
        n = np.linalg.norm(ax)
        if abs(n - 1.0) > 1e-9:
            raise InvalidArgument(f"joint axis must be unit-norm, got |axis|={n}")
        object.__setattr__(self, "axis", ax)


@dataclass(frozen=True)
class KinematicChain:
    joints: tuple
    q_min: np.ndarray
    q_max: np.ndarray
    eef_offset: Transform = field(default_factory=Transform.identity)

    def __post_init__(self):
        qmin = np.asarray(self.q_min, dtype=float).reshape(len(self.joints))
        qmax = np.asarray(self.q_max, dtype=float).reshape(len(self.joints))
        if np.any(qmin > qmax):
            raise InvalidArgument("q_min must be <= q_max elementwise")
        object.__setattr__(self, "joints", tuple(self.joints))
        object.__setattr__(self, "q_min", qmin)
        object.__setattr__(self, "q_max", qmax)

    @property
    def dof(self) -> int:
        return len(self.joints)

    def check_limits(self, q) -> np.ndarray:
        q = np.asarray(q, dtype=float).reshape(self.dof)
        if np.any(q < self.q_min - 1e-12) or np.any(q > self.q_max + 1e-12):
            raise JointLimitViolation(f"q={q} outside [{self.q_min}, {self.q_max}]")
        return q

    def clip(self, q) -> np.ndarray:
        return np.clip(np.asarray(q, dtype=float).reshape(self.dof), self.q_min, self.q_max)

    def with_joint_clamped(self, joint: int, lo: float, hi: float) -> "KinematicChain":
        qmin = self.q_min.copy()
        qmax = self.q_max.copy()
        qmin[joint] = max(qmin[joint], lo)
        qmax[joint] = min(qmax[joint], hi)
        if qmin[joint] > qmax[joint]:
            qmin[joint] = qmax[joint]
        return KinematicChain(self.joints, qmin, qmax, self.eef_offset)

    def to_dict(self) -> dict:
        return {
            "joints": [
                {
                    "axis": [float(v) for v in j.axis],
                    "origin_rotation": [[float(x) for x in row] for row in j.origin.rotation],
                    "origin_translation": [float(v) for v in j.origin.translation],
                }
                for j in self.joints
            ],
            "q_min": [float(v) for v in self.q_min],
            "q_max": [float(v) for v in self.q_max],
            "eef_rotation": [[float(x) for x in row] for row in self.eef_offset.rotation],
            "eef_translation": [float(v) for v in self.eef_offset.translation],
        }

    @staticmethod
    def from_dict(d: dict) -> "KinematicChain":
        joints = tuple(
            RevoluteJoint(
                np.array(j["axis"]),
                Transform(np.array(j["origin_rotation"]), np.array(j["origin_translation"])),
            )
            for j in d["joints"]
        )
        return KinematicChain(
            joints,
            np.array(d["q_min"]),
            np.array(d["q_max"]),
            Transform(np.array(d["eef_rotation"]), np.array(d["eef_translation"])),
        )


def load_chain(path) -> KinematicChain:
    with open(path) as fh:
        return KinematicChain.from_dict(json.load(fh))


def save_chain(chain: KinematicChain, path) -> None:
    with open(path, "w") as fh:
        json.dump(chain.to_dict(), fh, indent=2)


def default_chain() -> KinematicChain:
    """The 6-DoF arm definition shipped with the package (~0.85 m reach)."""
    ref = resources.files("taskmotion").joinpath("data/six_dof_arm.json")
    return KinematicChain.from_dict(json.loads(ref.read_text()))


def _joint_frames(chain: KinematicChain, q: np.ndarray):
    """World (R, p) of each joint frame (post-rotation) plus the eef.

    Raw ndarray math; this is the hot path under the IK descent loop.
    """
    frames = []
    r = np.eye(3)
    p = np.zeros(3)
    for joint, qi in zip(chain.joints, q):
        p = r @ joint.origin.translation + p
        r = r @ joint.origin.rotation
        r = r @ axis_angle_matrix(joint.axis, qi)
        frames.append((r, p))
    p_e = r @ chain.eef_offset.translation + p
    r_e = r @ chain.eef_offset.rotation
    return frames, (r_e, p_e)


def forward_kinematics(chain: KinematicChain, q) -> Pose7:
    q = chain.check_limits(q)
    _, (r_e, p_e) = _joint_frames(chain, q)
    return Transform(r_e, p_e).to_pose()


def fk_transform(chain: KinematicChain, q: np.ndarray) -> Transform:
    _, (r_e, p_e) = _joint_frames(chain, np.asarray(q, dtype=float))
    return Transform(r_e, p_e)


def geometric_jacobian(chain: KinematicChain, q: np.ndarray) -> np.ndarray:
    """6xN Jacobian: rows 0-2 linear, 3-5 angular, world frame."""
    frames, (_, p_eef) = _joint_frames(chain, q)
    jac = np.zeros((6, chain.dof))
    for i, (joint, (r, p)) in enumerate(zip(chain.joints, frames)):
        # rotation about the axis leaves the axis fixed, so the post-rotation
        # frame gives the same world axis as the pre-rotation one
        z = r @ joint.axis
        jac[:3, i] = np.cross(z, p_eef - p)
        jac[3:, i] = z
    return jac


@dataclass(frozen=True)
class IkParams:
    lambda_p: float = 1.0
    lambda_r: float = 1.0
    eps_p0: float = POS_TOL_STRICT
    eps_r0: float = ROT_TOL_STRICT
    pos_relax_factor: float = POS_RELAX_FACTOR
    rot_relax_factor: float = ROT_RELAX_FACTOR
    max_relax_rounds: int = 3
    seeds_per_round: int = 8
    seed_spread: float = 0.3      # rad, perturbation half-width around q_seed
    max_iters: int = 120          # descent iterations per seed
    damping: float = 0.05

    def __post_init__(self):
        if self.eps_p0 <= 0 or self.eps_r0 <= 0:
            raise InvalidArgument("strict tolerances must be positive")
        if self.pos_relax_factor <= 1 or self.rot_relax_factor <= 1:
            raise InvalidArgument("relax factors must exceed 1")
        if self.lambda_p <= 0 or self.lambda_r <= 0:
            raise InvalidArgument("weights must be positive")

    def tolerances_at(self, k: int):
        return (
            self.eps_p0 * self.pos_relax_factor ** k,
            self.eps_r0 * self.rot_relax_factor ** k,
        )


@dataclass(frozen=True)
class IkSolution:
    q: np.ndarray
    pos_err: float
    rot_err: float
    relax_rounds_used: int


def _pose_errors(chain, q, p_des, xi_des):
    _, (r_e, p_e) = _joint_frames(chain, q)
    e_p = p_des - p_e
    # body-frame geodesic error rotated into the world frame for the Jacobian
    e_body = orientation_error(matrix_to_quat(r_e), xi_des)
    e_r = r_e @ e_body
    return e_p, e_r


def _descend(chain, q0, p_des, xi_des, params, eps_p, eps_r):
    """Damped weighted least-squares iterations from one seed.

    Returns (q, pos_err, rot_err, converged).
    """
    q = chain.clip(q0)
    w = np.concatenate([np.full(3, params.lambda_p), np.full(3, params.lambda_r)])
    best = None
    for _ in range(params.max_iters):
        e_p, e_r = _pose_errors(chain, q, p_des, xi_des)
        pe, re = float(np.linalg.norm(e_p)), float(np.linalg.norm(e_r))
        if best is None or (params.lambda_p * pe * pe + params.lambda_r * re * re) < best[1]:
            best = ((q.copy(), pe, re), params.lambda_p * pe * pe + params.lambda_r * re * re)
        if pe < eps_p and re < eps_r:
            return q, pe, re, True
        err = np.concatenate([e_p, e_r])
        jac = geometric_jacobian(chain, q)
        jw = jac * w[:, None] ** 0.5
        ew = err * w ** 0.5
        h = jw.T @ jw + (params.damping ** 2) * np.eye(chain.dof)
        dq = np.linalg.solve(h, jw.T @ ew)
        step = float(np.linalg.norm(dq))
        if step > 0.5:
            dq *= 0.5 / step
        q = chain.clip(q + dq)
        if step < 1e-12:
            break
    (bq, bp, br), _ = best
    return bq, bp, br, bp < eps_p and br < eps_r


def relaxed_ik(
    chain: KinematicChain,
    target: Pose7,
    q_seed,
    params: IkParams = IkParams(),
    round_hook: Optional[Callable[[int, float, float], None]] = None,
) -> IkSolution:
    """Best-effort IK with staged tolerance relaxation.

    Round k solves under tolerances (eps_p0 * 5^k, eps_r0 * 2^k), trying the
    seed first and then `seeds_per_round` perturbations of it. `round_hook`,
    when given, is called with (k, eps_p, eps_r) as each round becomes active.
    Raises IkInfeasible with the best achieved errors once the budget is spent.
    """
    p_des = np.asarray(target.position, dtype=float)
    xi_des = quat_normalize(target.orientation)
    q_seed = chain.clip(q_seed)
    rng = np.random.default_rng(0)
    best_q, best_p, best_r = None, math.inf, math.inf
    for k in range(params.max_relax_rounds + 1):
        eps_p, eps_r = params.tolerances_at(k)
        if round_hook is not None:
            round_hook(k, eps_p, eps_r)
        # multi-seed near the initial state first; relaxation only if the
        # whole batch fails at the current tolerances
        perturb = rng.uniform(-params.seed_spread, params.seed_spread, (params.seeds_per_round, chain.dof))
        seeds = [q_seed] + [chain.clip(q_seed + row) for row in perturb]
        for s in seeds:
            q, pe, re, ok = _descend(chain, s, p_des, xi_des, params, eps_p, eps_r)
            score = params.lambda_p * pe * pe + params.lambda_r * re * re
            if score < params.lambda_p * best_p * best_p + params.lambda_r * best_r * best_r:
                best_q, best_p, best_r = q, pe, re
            if ok:
                return IkSolution(q=q, pos_err=pe, rot_err=re, relax_rounds_used=k)
    raise IkInfeasible(
        f"no solution within {params.max_relax_rounds} relaxation rounds "
        f"(best pos_err={best_p:.4f} m, rot_err={best_r:.4f} rad)",
        best_q=best_q,
        pos_err=best_p,
        rot_err=best_r,
        rounds_used=params.max_relax_rounds,
    )
