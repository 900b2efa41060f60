"""Exception types shared across the toolkit."""


class SlidebenchError(Exception):
    """Base class for all toolkit errors."""


class FormatError(SlidebenchError):
    """A file violates its schema (manifest, XML, netpbm, JSONL, CSV)."""


class ValidationError(SlidebenchError):
    """An in-memory object violates its invariants or an operation precondition."""


class GeometryError(SlidebenchError):
    """Dimension, level, or coordinate-range mismatch between rasters."""


class DegenerateHistogramError(SlidebenchError):
    """Histogram has all mass in a single bin; no threshold separates two classes."""


class NoInformationError(SlidebenchError):
    """All paired differences are zero; the signed-rank test carries no information."""


class DivergenceError(SlidebenchError):
    """Learner parameters or gradients became non-finite during training."""


class ConfigError(SlidebenchError):
    """Invalid configuration value or malformed config file."""


class DegeneratePolygonWarning(UserWarning):
    """A polygon had zero area after scaling and contributed no pixels."""
