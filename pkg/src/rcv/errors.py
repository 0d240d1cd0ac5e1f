"""Exception types raised across the pipeline."""


class RcvError(Exception):
    """Base class for all pipeline errors."""


class EmptyFrustum(RcvError):
    """The seed 2D box covers no geometry."""


class EmptyAfterPrune(RcvError):
    """Pruning by a pair of 2D boxes retained no points."""


class DegenerateExtent(RcvError):
    """The in-plane bounding rectangle of a projection collapsed."""


class DegenerateCloud(RcvError):
    """Point set has too little spatial rank for axis estimation."""


class InconsistentViews(RcvError):
    """Front and side detections have disjoint shared-dimension intervals."""


class DetectorUnavailable(RcvError):
    """External detector process is dead or unreachable."""


class ProtocolError(RcvError):
    """Malformed line on the external detector wire protocol."""


class InfeasibleSpec(RcvError):
    """Scene objects could not be placed without overlap."""


class NoGroundTruth(RcvError):
    """Evaluation requested for a class with no ground-truth boxes."""


class ConfigError(RcvError):
    """Pipeline configuration file is invalid."""
