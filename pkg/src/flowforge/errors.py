"""Exception hierarchy shared by every module."""


class FlowForgeError(ValueError):
    """Base class for contract violations (CLI exit code 1)."""


class ConfigError(FlowForgeError):
    pass


class ShapeError(FlowForgeError):
    pass


class ContractError(FlowForgeError):
    pass


class ConsistencyError(FlowForgeError):
    pass


class FormatError(FlowForgeError):
    """A file was readable but its content does not match the expected layout."""
