"""Exception hierarchy shared by all ccmed modules."""


class CcmError(Exception):
    """Base class for every error raised by ccmed."""


class InputError(CcmError):
    """Malformed or structurally invalid input data."""


class SchemaError(InputError):
    """A required column role is missing or misconfigured."""

    def __init__(self, role, message=None):
        self.role = role
        super().__init__(message or f"no column mapped for role {role!r}")


class ParseError(InputError):
    """A cell could not be parsed as the type its role requires."""

    def __init__(self, row, column, value, reason):
        self.row = row
        self.column = column
        self.value = value
        super().__init__(f"row {row}, column {column!r}: cannot parse {value!r} ({reason})")


class ExclusivityError(InputError):
    """A row is assigned to both treatments at once."""

    def __init__(self, row):
        self.row = row
        super().__init__(f"row {row}: t1 and t2 are both 1; treatments must be mutually exclusive")


class SingularityError(CcmError):
    """A least-squares design is rank deficient."""

    def __init__(self, message, columns=(), arm=None):
        self.columns = tuple(columns)
        self.arm = arm
        super().__init__(message)


class DegenerateEstimandError(CcmError, ZeroDivisionError):
    """A ratio estimand has a zero denominator component."""


class ModeError(CcmError, ValueError):
    """An estimator was requested in a mode the fit does not support."""


class UnreliableResamplingError(CcmError):
    """Too many bootstrap replicates produced an undefined statistic."""

    def __init__(self, b_valid, b_requested, threshold):
        self.b_valid = b_valid
        self.b_requested = b_requested
        super().__init__(
            f"only {b_valid} of {b_requested} bootstrap replicates were usable "
            f"(need at least {threshold:.0%}); the statistic is unstable on this data"
        )


class GateError(CcmError):
    """The denominator of a ratio estimand is not bounded away from zero."""
