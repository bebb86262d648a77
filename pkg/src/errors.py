"""
H2SGNN Errors

Exception hierarchy shared by the library and the CLI.
"""


class H2SGNNError(Exception):
    """Base class for every error raised by this package"""


class ShapeError(H2SGNNError, ValueError):
    """Operand dimensions do not line up"""


class ArgumentError(H2SGNNError, ValueError):
    """Empty or otherwise unusable argument"""


class DomainError(H2SGNNError, ValueError):
    """Value outside the domain an operation is defined on"""


class RelationLookupError(H2SGNNError, KeyError):
    """Unknown relation name"""

    def __str__(self) -> str:
        # KeyError quotes its argument; keep the plain message
        return str(self.args[0]) if self.args else ""


class SchemaError(H2SGNNError, ValueError):
    """Meta-path or dataset schema is inconsistent"""


class UndefinedHomophilyError(H2SGNNError, ValueError):
    """Homophily requested on a graph without eligible edges"""


class StateError(H2SGNNError, RuntimeError):
    """Object is not in the state an operation requires"""


class NonFiniteGradientError(H2SGNNError, FloatingPointError):
    """A gradient tensor contains NaN or Inf"""


class ConfigError(H2SGNNError, ValueError):
    """Experiment configuration is invalid"""


class DatasetValidationError(H2SGNNError, ValueError):
    """Dataset files violate the documented schema"""


class FormatError(H2SGNNError, ValueError):
    """Checkpoint or report file is corrupt"""
