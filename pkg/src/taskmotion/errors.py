"""Exception types shared across the stack."""

from __future__ import annotations


class TaskMotionError(Exception):
    """Base class for all library errors."""


class InvalidArgument(TaskMotionError, ValueError):
    """Non-finite, non-normalized, or otherwise malformed input."""


class JointLimitViolation(TaskMotionError):
    """Joint vector outside the chain's box limits."""


class IkInfeasible(TaskMotionError):
    """IK failed within the relaxation budget.

    Carries the best joint vector found and its achieved errors so callers
    can report or salvage a best-effort solution.
    """

    def __init__(self, msg, best_q=None, pos_err=None, rot_err=None, rounds_used=None):
        super().__init__(msg)
        self.best_q = best_q
        self.pos_err = pos_err
        self.rot_err = rot_err
        self.rounds_used = rounds_used


class MissingNode(TaskMotionError, KeyError):
    pass


class MissingPart(TaskMotionError, KeyError):
    pass


class InfeasibleEndpoint(TaskMotionError):
    """Start or goal voxel violates the clearance requirement."""


class NoPath(TaskMotionError):
    """Search exhausted without reaching the goal."""


class SegmentInfeasible(TaskMotionError):
    """A trajectory waypoint could not be tracked by the arm."""

    def __init__(self, msg, waypoint_index=None):
        super().__init__(msg)
        self.waypoint_index = waypoint_index


class InvalidObservation(TaskMotionError, ValueError):
    pass


class InvalidCommand(TaskMotionError, ValueError):
    pass


class GroundingFailure(TaskMotionError):
    """A command referent could not be resolved against the scene graph."""

    def __init__(self, msg, token=None):
        super().__init__(msg)
        self.token = token


class NotLocallyRepairable(TaskMotionError):
    """Diagnosis category requires escalation to global replanning."""


class ScenarioParseError(TaskMotionError):
    """Scenario document violates the schema; carries a path into the doc."""

    def __init__(self, msg, doc_path=""):
        super().__init__(f"{doc_path}: {msg}" if doc_path else msg)
        self.doc_path = doc_path


class PlannerEndpointError(TaskMotionError):
    """External planner endpoint failed (transport, timeout, or schema)."""
