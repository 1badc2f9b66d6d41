"""Exception hierarchy shared by every pipeline stage."""


class AssignmentError(Exception):
    """Base class for all errors raised by the package."""


class ConfigurationError(AssignmentError):
    pass


class SchemaError(AssignmentError):
    """An input file does not match its expected layout."""

    def __init__(self, message, path=None, line=None, column=None):
        self.path = path
        self.line = line
        self.column = column
        where = []
        if path is not None:
            where.append(str(path))
        if line is not None:
            where.append(f"line {line}")
        if column is not None:
            where.append(f"column {column!r}")
        prefix = ", ".join(where)
        super().__init__(f"{prefix}: {message}" if prefix else message)


class ReferentialError(SchemaError):
    """A row points at a district, cell or table key that does not exist."""


class DuplicateIdError(SchemaError):
    pass


class DegenerateDistrictError(AssignmentError):
    """Every cell of a district carries zero weight for the active purpose."""


class MissingDistributionError(AssignmentError):
    pass


class ContractViolation(AssignmentError):
    """A precondition on a probability vector or sampler argument failed."""


class CapacityExhaustedError(AssignmentError):
    pass


class InfeasibleRowError(AssignmentError):
    """Every outcome of a conditional row is ruled out by feasibility rules."""


class StageIncompleteError(AssignmentError):
    pass
