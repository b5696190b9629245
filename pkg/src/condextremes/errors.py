"""Exception types shared across the package.

The CLI maps these onto exit codes: ConfigError -> 2, DataError -> 3,
NumericalError -> 4.  Plain ValueError is used for local precondition
violations inside library functions and is treated as a data error at the
command-line boundary.
"""


class ConfigError(Exception):
    """Invalid or inconsistent run configuration."""


class DataError(Exception):
    """Malformed or insufficient input data."""


class NumericalError(Exception):
    """Numerical failure: non-positive-definite matrix, non-convergence."""
