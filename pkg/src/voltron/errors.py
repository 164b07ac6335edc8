"""Exception hierarchy; each class carries the CLI exit code it maps to."""


class VoltronError(Exception):
    exit_code = 1


class ConfigError(VoltronError, ValueError):
    exit_code = 2


class DataError(VoltronError, ValueError):
    exit_code = 2


class VocabularyError(DataError):
    pass


class ContractError(VoltronError, ValueError):
    """A caller violated an operation's precondition."""

    exit_code = 2


class CheckpointError(VoltronError):
    exit_code = 3


class CapabilityError(VoltronError):
    """The model variant cannot perform the requested operation."""

    exit_code = 4


class InvariantError(VoltronError, AssertionError):
    exit_code = 5
