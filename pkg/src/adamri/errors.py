"""Exception types shared across the package.

The CLI maps these onto exit codes: contract/dimension/compatibility
problems are data errors (exit 3), numeric failures are exit 4.
"""


class DimensionError(ValueError):
    """Array shapes or dtypes do not satisfy an operation's contract."""


class ContractError(ValueError):
    """A precondition on argument values was violated."""


class NumericError(RuntimeError):
    """A computation produced non-finite values or a solver diverged."""


class CompatibilityError(RuntimeError):
    """Stored artifact (checkpoint, dataset) does not match the expected schema."""


class UndefinedTestError(ValueError):
    """A statistical test is undefined for the given data (e.g. all-zero differences)."""
