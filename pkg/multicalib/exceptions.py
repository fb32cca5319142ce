class MulticalibError(Exception):
    """Base class for every error raised by the multicalib app."""


class ContractViolation(MulticalibError, ValueError):
    """Invalid arguments, signature mismatches or broken type invariants."""


class SizeCapExceeded(ContractViolation):
    pass


class ZeroMassGroup(ContractViolation):
    pass


class MissingReference(ContractViolation):
    """A weak oracle or weak regret was requested without a minmax reference."""


class OracleFailure(MulticalibError):
    def __init__(self, message, round_index=None):
        super().__init__(message if round_index is None else f"round {round_index}: {message}")
        self.round_index = round_index


class SchemaError(MulticalibError):
    """Malformed distribution, predictor or configuration file."""

    def __init__(self, message, field=None, line=None, path=None):
        where = []
        if path:
            where.append(str(path))
        if line is not None:
            where.append(f"line {line}")
        prefix = ":".join(where)
        if field:
            message = f"field '{field}': {message}"
        super().__init__(f"{prefix}: {message}" if prefix else message)
        self.field = field
        self.line = line
        self.path = path
