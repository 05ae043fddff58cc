"""Exception types shared across the package."""


class CvmriError(Exception):
    """Base class for all package errors."""


class DimensionError(CvmriError, ValueError):
    """Operand shapes are incompatible with the requested operation."""


class UnsupportedSizeError(CvmriError, ValueError):
    """An operation only defined for power-of-two sizes got something else."""


class ContractError(CvmriError, ValueError):
    """A caller violated an operation's precondition."""


class FormatError(CvmriError, ValueError):
    """A binary file (.cvt / .cvck / config) is malformed."""


class TrainingDivergedError(CvmriError, RuntimeError):
    """A loss became NaN/Inf during training; a diagnostic dump was written."""
