"""Exception taxonomy shared across the toolkit.

Every data or contract error raised by this package derives from
:class:`TrainscopeError` so callers (and the CLI) can separate bad input
from genuine bugs.  Precondition violations in library calls (bad
argument types, out-of-domain parameters the caller controls) raise
plain ``ValueError``.
"""


class TrainscopeError(Exception):
    """Base class for all data and contract errors in this package."""


# -- container reading ------------------------------------------------------

class MalformedHeaderError(TrainscopeError):
    """Container header is missing, truncated, non-JSON, or inconsistent."""


class OverlappingRangesError(TrainscopeError):
    """Two tensor records claim overlapping byte ranges."""


class UnknownDtypeError(TrainscopeError):
    """Header declares a dtype this reader does not support."""


class TruncatedDataError(TrainscopeError):
    """A tensor's byte range extends past the end of the file."""


class NameNotFoundError(TrainscopeError):
    """Requested tensor name is absent from the container index."""


class NaNPolicyError(TrainscopeError):
    """Non-finite values encountered while reading in strict mode."""


class StrictUnmappedError(TrainscopeError):
    """A tensor name matched no mapping rule in strict mode."""


# -- weight statistics ------------------------------------------------------

class EmptyTensorError(TrainscopeError):
    """Statistics requested for a tensor with no values."""


class MissingRoleError(TrainscopeError):
    """A layer lacks one of the monitored parameter roles in strict mode."""


class DuplicateTokenCountError(TrainscopeError):
    """Two checkpoints in one run report the same token count."""


class GridMismatchError(TrainscopeError):
    """Checkpoints in a strict trajectory build disagree on the (layer, role) grid."""


# -- trajectory distances ---------------------------------------------------

class EmptyCurveError(TrainscopeError):
    """Discrete Frechet distance requested for an empty curve."""


class IndexOutOfRangeError(TrainscopeError):
    """Checkpoint pair index outside the run."""


class NonMonotonicTokensError(TrainscopeError):
    """Token counts do not increase between the paired checkpoints."""


class TooFewCheckpointsError(TrainscopeError):
    """A distance series needs at least two checkpoints."""


# -- metric series ----------------------------------------------------------

class ParseError(TrainscopeError):
    """A series row could not be parsed; message carries the line number."""


class MissingColumnError(TrainscopeError):
    """A required column is absent from the series file."""


class EmptySeriesError(TrainscopeError):
    """Series file contained no data rows."""


class WindowTooLargeError(TrainscopeError):
    """Detector window is at least as long as the series."""


class SpanTooShortError(TrainscopeError):
    """Series token span is shorter than the plateau window."""


class UnsortedBoundariesError(TrainscopeError):
    """Stage boundaries are not strictly increasing from zero."""


# -- mixture planning and schedules -----------------------------------------

class ProportionSumError(TrainscopeError):
    """Recipe proportions do not sum to one within tolerance."""


class EmptyDomainError(TrainscopeError):
    """A recipe demands tokens from a domain with no available source."""


class UnknownSourceError(TrainscopeError):
    """A stage op names a source absent from the inventory."""


class BadParamError(TrainscopeError):
    """A stage op carries a missing or out-of-domain parameter."""


class OutOfRangeError(TrainscopeError):
    """Schedule queried outside [0, total_tokens]."""


class BadRampError(TrainscopeError):
    """Batch ramp geometry is inconsistent (span not a multiple of the increment)."""


# -- reporting --------------------------------------------------------------

class EmptyInputError(TrainscopeError):
    """Chart rendering received no drawable series."""


class RoleAbsentError(TrainscopeError):
    """Layer-curve chart requested for a role absent from the trajectory set."""


# -- fixtures ---------------------------------------------------------------

class BadSpecError(TrainscopeError):
    """Fixture generation spec violates its own constraints."""
