"""Exception types shared across the package."""


class MPCLError(Exception):
    pass


class DimensionError(MPCLError, ValueError):
    pass


class ParameterError(MPCLError, ValueError):
    pass


class ConfigError(MPCLError, ValueError):
    pass


class ContractError(MPCLError, ValueError):
    """An input violated a documented precondition (e.g. a non-simplex distribution)."""


class SchemaError(MPCLError, ValueError):
    pass


class LabelError(MPCLError, ValueError):
    pass


class SplitError(MPCLError, ValueError):
    pass


class EvaluationError(MPCLError, RuntimeError):
    pass


class TrainingError(MPCLError, RuntimeError):
    pass


class DegenerateRowWarning(UserWarning):
    """A zero row was passed through L2 normalization unchanged."""
