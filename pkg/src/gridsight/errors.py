"""Exception hierarchy with stable CLI exit codes.

Exit code contract:
    0  success
    1  usage error (bad flags / unknown subcommand)
    2  data or validation error
    3  external-service (imagery provider) error
    4  adapter / protocol error
"""


class GridsightError(Exception):
    """Base class for all gridsight errors."""

    exit_code = 2


class UsageError(GridsightError):
    exit_code = 1


class DataError(GridsightError):
    """Invalid input data or violated domain invariant."""

    exit_code = 2


class ProviderError(GridsightError):
    """Imagery provider / external service failure."""

    exit_code = 3


class AdapterError(GridsightError):
    """External adapter process or protocol failure."""

    exit_code = 4


# --- label / prediction parsing ---

class MalformedLine(DataError):
    pass


class ClassOutOfRange(DataError):
    pass


class BoxOutOfRange(DataError):
    pass


class ConfidenceOutOfRange(DataError):
    pass


# --- manifest / splitting ---

class EmptyDataset(DataError):
    pass


class BadRatios(DataError):
    pass


class DuplicateId(DataError):
    pass


class NameCollision(DataError):
    pass


# --- preprocessing ---

class UnsupportedOrientationCode(DataError):
    pass


# --- evaluation ---

class MixedFrames(DataError):
    pass


class NoGroundTruth(DataError):
    pass


class NoEvaluableClasses(DataError):
    pass


class DuplicateCell(DataError):
    pass


# --- geotile ---

class MissingColumn(DataError):
    pass


class EmptyFile(DataError):
    pass


class PolarLatitude(DataError):
    pass


class BadSide(DataError):
    pass


class TooLarge(ProviderError):
    """Provider rejected the request because the requested size is too big.

    The only provider failure that triggers the progressive-resolution
    fallback; anything else aborts the site.
    """


class AllCandidatesFailed(ProviderError):
    def __init__(self, message, causes):
        super().__init__(message)
        self.causes = list(causes)


class DecodeError(ProviderError):
    pass


class CacheCorrupt(ProviderError):
    pass


# --- harness / adapters ---

class AdapterCrashed(AdapterError):
    pass


class ProtocolViolation(AdapterError):
    pass


class AdapterTimeout(AdapterError):
    pass


class AdapterFailed(AdapterError):
    pass


class MissingPrediction(AdapterError):
    pass


# --- census ---

class UnknownSite(DataError):
    pass
