"""Exception types shared across the package.

Every error raised deliberately by this package derives from OfpnetError so
callers (and the CLI) can distinguish expected failure modes from bugs.
"""

from __future__ import annotations


class OfpnetError(Exception):
    """Base class for all errors raised by this package."""


class MissingView(OfpnetError):
    """A view file expected by the angular grid is absent."""

    def __init__(self, u: int, v: int, path: str | None = None):
        self.u = u
        self.v = v
        self.path = path
        where = f" ({path})" if path else ""
        super().__init__(f"missing view ({u}, {v}){where}")


class InconsistentViews(OfpnetError):
    """Views within one light field disagree on size or channel count."""


class ColorspaceError(OfpnetError):
    """Operation applied to a light field in the wrong colorspace."""


class SizeError(OfpnetError):
    """Spatial dimensions violate a precondition (parity, divisibility, minimum size)."""


class BoundsError(OfpnetError):
    """Index or window falls outside the valid range."""


class StateError(OfpnetError):
    """Object used before reaching the required processing state."""


class EmptyDataset(OfpnetError):
    """Dataset root contains no usable scenes."""


class SplitError(OfpnetError):
    """Split request is inconsistent with the available scenes."""


class DataError(OfpnetError):
    """Dataset contents cannot satisfy the request (missing scale, bad record)."""


class ConfigError(OfpnetError):
    """Configuration value is invalid or inconsistent with a checkpoint."""


class RangeError(OfpnetError):
    """Scalar argument outside its documented domain."""


class ReportError(OfpnetError):
    """Metrics reports cannot be assembled into the requested table."""


class AbortWithDiagnostics(OfpnetError):
    """Training aborted; carries provenance of the offending step.

    `diagnostics` holds a JSON-serializable dict (epoch, step, batch
    provenance, loss value) so the failure can be reproduced.
    """

    def __init__(self, message: str, diagnostics: dict):
        self.diagnostics = diagnostics
        super().__init__(f"{message}: {diagnostics}")
