"""Exception types shared across the package."""


class TesageError(Exception):
    """Base class for all errors raised by this package."""


class ParameterError(TesageError, ValueError):
    """An argument or configuration value violates its documented domain."""


class DimensionError(TesageError, ValueError):
    """Inputs have incompatible lengths or shapes."""


class DegenerateChannelError(TesageError, ValueError):
    """A channel is constant and cannot be normalized."""


class AutodiffError(TesageError):
    """A differentiation contract was violated (non-scalar loss, missing grad)."""


class DataFormatError(TesageError):
    """A dataset, graph, or manifest file could not be parsed.

    Carries the file plus one-based row and zero-based column where the
    problem was found, when they are known.
    """

    def __init__(self, message, file=None, row=None, column=None):
        loc = ""
        if file is not None:
            loc = f" [{file}"
            if row is not None:
                loc += f", row {row}"
            if column is not None:
                loc += f", column {column}"
            loc += "]"
        super().__init__(message + loc)
        self.file = str(file) if file is not None else None
        self.row = row
        self.column = column


class StratificationError(TesageError, ValueError):
    """The dataset cannot be split into stratified train/test subsets."""


class CheckpointError(TesageError):
    """A checkpoint file is unreadable or structurally invalid."""


class FingerprintMismatchError(CheckpointError):
    """A checkpoint was produced under a different configuration."""


class ConfigError(TesageError, ValueError):
    """The pipeline configuration file is invalid."""


class MissingArtifactError(TesageError):
    """A pipeline stage needs an output that an earlier stage has not produced."""
