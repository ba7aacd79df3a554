"""Exception hierarchy shared by the library and the CLI."""


class NrmfError(ValueError):
    """Base class for every error raised by nrmf."""

    error_class = "nrmf"


class ShapeError(NrmfError):
    error_class = "shape"


class SymmetryError(ShapeError):
    """Matrix handed to the eigensolver is not symmetric."""


class RankError(NrmfError):
    error_class = "rank"


class ConvergenceError(NrmfError):
    """Iterative solver hit its iteration cap."""

    error_class = "numerical"

    def __init__(self, message: str, residual: float):
        super().__init__(f"{message} (residual {residual:.3e})")
        self.residual = residual


class DegenerateEnergyError(NrmfError):
    error_class = "degenerate-energy"


class DegenerateInputError(NrmfError):
    error_class = "degenerate-input"


class EmptyLayerSetError(NrmfError):
    error_class = "empty-layers"


class StaleCacheError(NrmfError):
    error_class = "cache"


class LabelError(NrmfError):
    error_class = "label"


class UnknownLayerError(NrmfError):
    error_class = "unknown-layer"


class MissingRankError(NrmfError):
    error_class = "missing-rank"


class ConfigError(NrmfError):
    error_class = "config"


class KernelFormatError(NrmfError):
    error_class = "format"


class DatasetError(NrmfError):
    error_class = "dataset"


class BadMagicError(DatasetError):
    pass


class TruncatedFileError(DatasetError):
    pass


class CountMismatchError(DatasetError):
    pass


class MissingOutputError(NrmfError):
    """An expected file under the output directory (checkpoint, report) is absent."""

    error_class = "missing-output"


class ReportMismatchError(NrmfError):
    """A report's TOTAL row disagrees with the sum of its layer rows."""

    error_class = "report-mismatch"


# Error class printed by the CLI for OS-level failures (unreadable or unwritable files).
IO_ERROR_CLASS = "io"
