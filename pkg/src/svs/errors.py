"""Exception hierarchy shared by all svs modules."""


class SvsError(Exception):
    """Base class for every error raised by this package."""


# --- event model / parsing ---------------------------------------------------

class MalformedLine(SvsError):
    """Input line is not parseable as an interchange record."""


class SchemaViolation(SvsError):
    """Record parsed but violates the closed schema (types, counts, keys)."""


class ForbiddenField(SvsError):
    """A field from the forbidden set (pixel/face/image data) was present."""


class OutOfBounds(SvsError):
    """Bounding box exceeds image bounds and strict mode is active."""


class NonMonotonicFrame(SvsError):
    """Frame index or timestamp regressed for a camera."""


# --- ingest -------------------------------------------------------------------

class SourceUnavailable(SvsError):
    """Stream source could not be opened."""


class UnknownCamera(SvsError):
    """Event arrived for a camera with no registered calibration."""


# --- tracking -----------------------------------------------------------------

class NumericalFailure(SvsError):
    """Linear-algebra step failed (covariance no longer positive definite)."""


# --- global re-identification ---------------------------------------------------

class InsufficientObservations(SvsError):
    """Track window too short for the requested computation."""


class DegeneratePose(SvsError):
    """Pose geometry unusable (e.g. torso length below the division guard)."""


class StaleEpoch(SvsError):
    """Embedding requested under a key that is not the current epoch's."""


# --- analytics -----------------------------------------------------------------

class DegenerateProjection(SvsError):
    """Homogeneous w-component vanished during ground-plane projection."""


class GeometryMismatch(SvsError):
    """Heat grids with incompatible geometry cannot be merged."""


# --- store ----------------------------------------------------------------------

class StorageFull(SvsError):
    """Store refused an insert because a size limit was reached."""


# --- gateway / cloud --------------------------------------------------------------

class SpoolOverflow(SvsError):
    """Spool is full and nothing evictable remains (analytics only)."""


class AuthRejected(SvsError):
    """Token missing, unknown, revoked, or lacking the required scope."""


class NoMatchingRule(SvsError):
    """A topic matched no rule in the routing table (config error)."""


class UnknownTable(SvsError):
    """Put addressed to a table the cloud node does not host."""


class MalformedRange(SvsError):
    """Query time range is invalid (from > to or unparseable)."""


# --- simulator ---------------------------------------------------------------------

class InvalidConfig(SvsError):
    """Scenario configuration violates its invariants."""


class MismatchedRun(SvsError):
    """System outputs and ground truth come from different runs."""


# --- cli ------------------------------------------------------------------------------

class ConfigInvalid(SvsError):
    """Node configuration failed validation; message carries the field path."""


class PortUnavailable(SvsError):
    """A listener port could not be bound."""
