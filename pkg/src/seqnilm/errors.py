"""Exception hierarchy shared across the toolkit."""


class NILMError(Exception):
    """Base class for all toolkit errors."""


class ShapeError(NILMError, ValueError):
    """Operand shapes are incompatible."""


class ConfigError(NILMError, ValueError):
    """A configuration value violates its invariant."""


class ContractError(NILMError, ValueError):
    """A caller broke an operation's precondition."""


class DataError(NILMError):
    """Input data could not be read or is unusable."""


class ParseError(DataError):
    def __init__(self, path, line_no, line):
        self.path = path
        self.line_no = line_no
        self.line = line
        super().__init__(f"{path}: malformed reading at line {line_no}: {line!r}")


class MetricError(NILMError, ValueError):
    """A metric is undefined for the given inputs."""


class CheckpointError(NILMError):
    """A checkpoint could not be loaded."""


class DivergenceError(NILMError):
    """Training produced a non-finite loss."""
