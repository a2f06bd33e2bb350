"""Exception taxonomy for promkit.

Validation failures map to CLI exit code 2, container/file problems to 3,
infeasible designs to 4.
"""


class PromkitError(Exception):
    """Base class for all promkit errors."""


class ValidationError(PromkitError):
    """Bad inputs: shapes, ranges, or configuration values."""


class DegenerateEncodingError(ValidationError):
    """Encoding moments are not strictly increasing / contain repeats."""


class UnsupportedGeometryError(ValidationError):
    """Three-point venc ratio outside the open interval (1, 2)."""


class NoFiniteRangeError(ValidationError):
    """venc ratios are not commensurable: no finite unambiguous range exists."""


class SingularPairError(ValidationError):
    """A coil-combined pair product is exactly zero; its phase is undefined."""


class MaskedVoxelError(ValidationError):
    """All-zero voxel data given to an estimator."""


class DegenerateCovarianceError(ValidationError):
    """Covariance has no usable positive eigenspace for BLUE weighting."""


class UndefinedSimilarityError(ValidationError):
    """Cosine similarity of an all-zero matrix is undefined."""


class NonIdentifiableError(ValidationError):
    """Fisher information is singular for the requested parameterization."""


class ConfigValidationError(ValidationError):
    """Run configuration failed schema validation."""

    def __init__(self, message, path=None):
        super().__init__(message)
        self.path = path


class ContainerFormatError(PromkitError):
    """Malformed binary container; carries the failing byte offset."""

    def __init__(self, message, offset=None):
        super().__init__(message)
        self.offset = offset


class InfeasibleDesignError(PromkitError):
    """No (p, q) candidate satisfied the design constraints.

    ``diagnostics`` holds one record per examined candidate with the
    rejection reason.
    """

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or []
