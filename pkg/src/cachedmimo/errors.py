"""Exception hierarchy shared across the package.

The CLI maps these onto process exit codes, so solver code should raise the
most specific class that applies rather than bare ValueError.
"""


class CachedMimoError(Exception):
    """Base class for all package-specific errors."""


class ConfigurationError(CachedMimoError):
    """Invalid or infeasible configuration (bad field values, impossible
    geometry, K > M for the disjoint-subcarrier initializer, ...)."""


class SolverError(CachedMimoError):
    """Numerical solver failed to reach its contract (non-convergence,
    infeasible rates at exit)."""


class InfeasibleChannelError(SolverError):
    """Channel outside the feasible set: some direct link H[m,k,k] is
    numerically zero, so no finite power meets a positive rate target."""


class UsageError(CachedMimoError):
    """Malformed command line (unknown flag, bad override, missing config)."""
