"""Exception types raised across the package."""


class DomainAlignError(Exception):
    """Base class for all package-specific errors."""


class ConfigError(DomainAlignError):
    """Invalid or inconsistent configuration."""


class IoError(DomainAlignError):
    """File could not be read or written."""


class FormatError(DomainAlignError):
    """Unsupported or corrupt raster file."""


class EmptyDatasetError(DomainAlignError):
    """A scanned dataset directory contains no usable images."""


class DegenerateSourceError(DomainAlignError):
    """Source lightness histogram has all mass at zero; gamma is unidentifiable."""


class NonConvergenceError(DomainAlignError):
    """Numerical solve did not reach the requested tolerance within its budget."""


class ImageTooSmallError(DomainAlignError):
    """Image is smaller than the minimum size an operator requires."""


class InsufficientCorrectPixelsError(DomainAlignError):
    """Fewer correctly classified pixels than the requested sample size."""


class DegenerateDataError(DomainAlignError):
    """Input data has no variance; decomposition is undefined."""


class DimensionMismatchError(DomainAlignError):
    """Operands have incompatible shapes."""


class AllClassesAbsentError(DomainAlignError):
    """No class has any labeled pixel in the corpus."""


class SingleClassError(DomainAlignError):
    """Fewer than two classes present; no negative center exists."""


class WarpMismatchError(DomainAlignError):
    """Displacement field geometry does not match the maps it should align."""
