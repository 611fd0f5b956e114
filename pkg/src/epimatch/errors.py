"""Exception types shared across the package.

Grouped here so modules can raise each other's errors (e.g. the trainer
re-raising geometry failures) without import cycles.
"""


class EpimatchError(Exception):
    """Base class for all package-specific failures."""


# --- autodiff ---------------------------------------------------------------

class DimMismatchError(EpimatchError):
    """Operands have incompatible shapes for the requested operation."""


class NonScalarRootError(EpimatchError):
    """backward() was called on a node whose value is not a scalar."""


class NonFiniteLossError(EpimatchError):
    """A loss evaluation produced NaN or infinity."""


# --- geometry ---------------------------------------------------------------

class TooFewCorrespondencesError(EpimatchError):
    """Fewer than eight correspondences were supplied to the solver."""


class DegenerateWeightsError(EpimatchError):
    """Fewer than eight weights are effectively nonzero."""


class RankDeficientError(EpimatchError):
    """The two smallest eigenvalues coincide; the solution is ambiguous."""


class NoInliersError(EpimatchError):
    """An operation that needs at least one inlier received none."""


class AmbiguousCheiralityError(EpimatchError):
    """Two pose candidates explain the same number of points in front."""


# --- data generation & file formats ----------------------------------------

class GenerationExhaustedError(EpimatchError):
    """Scene sampling kept producing too few labelled inliers."""


class BadMagicError(EpimatchError):
    """A binary file does not start with the expected magic bytes."""


class TruncatedFileError(EpimatchError):
    """A binary file ended before the declared payload was complete."""


class VersionMismatchError(EpimatchError):
    """A binary file declares an unsupported format version."""


class ShapeMismatchError(EpimatchError):
    """Checkpoint tensors disagree with the stored configuration."""


# --- training / evaluation --------------------------------------------------

class DegenerateLabelsError(EpimatchError):
    """Class-balanced loss requested but only one class is present."""


class NonFiniteGradientError(EpimatchError):
    """An accumulated gradient contains NaN or infinity."""


class KTooLargeError(EpimatchError):
    """Requested more neighbours than there are other correspondences."""


class ConfigError(EpimatchError):
    """A configuration file contains unknown keys or unparsable values."""
