"""Error taxonomy shared by the library and the CLI.

Two families matter to callers: validation errors (bad inputs, bad files,
bad parameters) and runtime-limit errors (an instance is too large for an
exact algorithm, or a configured cap fired mid-run). The CLI maps them to
exit codes 2 and 3 respectively.
"""


class QuadlimitError(Exception):
    """Base class for every error raised on purpose by this package."""


class ValidationError(QuadlimitError):
    """Invalid parameters, malformed files, unknown ids. CLI exit code 2."""


class ParseError(ValidationError):
    """A file or inline description could not be parsed."""


class RuntimeLimitError(QuadlimitError):
    """A size or runtime guard fired. CLI exit code 3."""


class InstanceTooLargeError(RuntimeLimitError):
    """Instance exceeds an exact algorithm's hard size limit."""


class BlockCountExceededError(RuntimeLimitError):
    """Too many refined blocks for exact enumeration."""


class SimulationOverflowError(RuntimeLimitError):
    """A simulated statistic exceeded the configured value cap."""
