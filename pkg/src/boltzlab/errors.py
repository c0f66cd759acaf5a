"""Exception taxonomy shared by all modules.

The CLI maps these onto process exit codes, so library code should raise
the most specific class that applies.
"""


class BoltzlabError(Exception):
    """Base class for all library errors."""


class InputError(BoltzlabError, ValueError):
    """Malformed or inconsistent user input (bad config, grid mismatch, ...)."""


class DegenerateConfigurationError(InputError):
    """Collision configuration with v == v_*, where no angle is defined."""


class SingularConfigurationError(BoltzlabError):
    """Evaluation exactly on the kernel singularity (v' == v)."""


class ResolutionError(InputError):
    """A requested scale is below what the grid can resolve."""


class NumericalFailureError(BoltzlabError):
    """A quadrature or iteration failed to converge."""


class StiffnessError(BoltzlabError):
    """Time step rejected repeatedly; integration aborted."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}
