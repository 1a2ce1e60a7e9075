"""Exception hierarchy shared by every vidsum module."""


class VidsumError(Exception):
    """Base class for all errors raised by vidsum."""


class FormatError(VidsumError, ValueError):
    """A file does not follow the expected on-disk layout."""


class DataError(VidsumError, ValueError):
    """Numeric payload is invalid (NaN/Inf, wrong norms, ...)."""


class DegenerateFeatureError(DataError):
    """A feature row has zero norm and cannot be normalized."""


class ShapeError(VidsumError, ValueError):
    pass


class TooShortError(ShapeError):
    """Operation needs more frames than the input has."""


class DomainError(VidsumError, ValueError):
    pass


class EmptyBatchError(VidsumError, ValueError):
    """A cross-video computation received no foreign videos."""


class MissingReferenceError(VidsumError, ValueError):
    pass


class ManifestError(VidsumError, ValueError):
    pass


class SpecError(VidsumError, ValueError):
    """Invalid synthetic dataset specification."""


class DegenerateLabelsError(VidsumError, ValueError):
    pass


class TrainingDivergedError(VidsumError, RuntimeError):
    pass


class DegenerateInputWarning(UserWarning):
    """Emitted when a score is defined by convention (e.g. all-tied ranks)."""
