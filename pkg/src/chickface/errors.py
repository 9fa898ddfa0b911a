"""Shared exception types.

Every module raises subclasses of ChickfaceError so callers (CLI, service)
can map failures to exit codes / HTTP error codes uniformly.
"""


class ChickfaceError(Exception):
    """Base class for all pipeline errors."""

    code = "error"


class RejectedInputError(ChickfaceError, ValueError):
    """Input violates a precondition (bad shape, bad value, wrong channels)."""

    code = "rejected_input"


class DegenerateGeometryError(ChickfaceError, ValueError):
    """Geometry too ill-conditioned to proceed (e.g. near-coincident eyes)."""

    code = "degenerate_geometry"


class PoseError(ChickfaceError, ValueError):
    """Required keypoints are not visible for the requested operation."""

    code = "pose"


class FlaggedFrameError(ChickfaceError, ValueError):
    """Frame flagged: a box/keypoint containment guarantee cannot be met."""

    code = "flagged_frame"


class PlanningError(ChickfaceError, ValueError):
    """Fold planning cannot satisfy its balance constraints."""

    code = "planning"


class ProtocolError(ChickfaceError, ValueError):
    """Evaluation protocol violation (e.g. chick ID leakage across splits)."""

    code = "protocol"


class DetectorError(ChickfaceError, RuntimeError):
    """Detector model failed to load or run."""

    code = "detector"


class ModelError(ChickfaceError, RuntimeError):
    """Classifier/keypoint model failed to load or run."""

    code = "model"


class UndefinedMetricError(ChickfaceError, ValueError):
    """Metric undefined for the given inputs (e.g. AUC with one class)."""

    code = "undefined_metric"


class UnknownTaskError(ChickfaceError, KeyError):
    """Annotation task (or frame) id not present in the store."""

    code = "unknown_task"


class IllegalTransitionError(ChickfaceError, ValueError):
    """Annotation task status transition not allowed by the state machine."""

    code = "illegal_transition"


class VersionConflictError(ChickfaceError, RuntimeError):
    """Optimistic concurrency check failed; reload the task and retry."""

    code = "version_conflict"
