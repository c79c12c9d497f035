"""Error hierarchy shared by every layer of the project.

Each class carries the process exit code the command layer reports for it:
1 for usage and contract problems, 2 for data problems, 3 for numerical
divergence.
"""

EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_DIVERGENCE = 3


class GlacierSegError(Exception):
    exit_code = EXIT_USAGE


class ShapeError(GlacierSegError, ValueError):
    """Operand shapes are incompatible with the requested operation."""


class ContractError(GlacierSegError):
    """A precondition of an operation does not hold."""


class ConfigError(GlacierSegError):
    """A configuration value is out of its documented range."""


class DataError(GlacierSegError):
    exit_code = EXIT_DATA


class IoError(DataError):
    """Reading or writing a file failed."""


class FormatError(DataError):
    """A file exists but its content is not in the expected format."""


class DivergenceError(GlacierSegError):
    """Training produced a non-finite loss or parameter."""

    exit_code = EXIT_DIVERGENCE
