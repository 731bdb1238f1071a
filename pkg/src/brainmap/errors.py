"""Exception hierarchy shared across the package."""


class BrainMapError(Exception):
    """Base class for all package errors."""

    code = "error"


class ShapeError(BrainMapError, ValueError):
    code = "shape"


class ContractError(BrainMapError, ValueError):
    code = "contract"


class ConfigError(BrainMapError, ValueError):
    code = "config"

    def __init__(self, message, keys=None):
        super().__init__(message)
        self.keys = list(keys or [])


class NumericalError(BrainMapError, ArithmeticError):
    code = "numerical"

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = dict(diagnostics or {})


class DivergenceError(NumericalError):
    code = "divergence"


class DataError(BrainMapError):
    code = "data"


class MissingFileError(DataError, FileNotFoundError):
    code = "missing-file"


class ShapeMismatchError(DataError, ShapeError):
    code = "shape-mismatch"


class AsymmetricAdjacencyError(DataError):
    code = "asymmetric"


class LabelRangeError(DataError):
    code = "label-range"


class ResampleError(BrainMapError, RuntimeError):
    code = "resample"
