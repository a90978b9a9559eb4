"""Exception hierarchy shared across the toolkit.

Two broad families matter to callers: input/validation problems
(:class:`InputError`) and numerical failures discovered mid-computation
(:class:`NumericalFailure`).  The service layer maps them to HTTP 422 and
500, the CLI to exit codes 2 and 3.
"""


class MslError(Exception):
    """Base class for all toolkit errors."""


class InputError(MslError, ValueError):
    """Invalid input data or configuration."""


class NumericalFailure(MslError, RuntimeError):
    """A computation failed for numerical reasons (singularity, divergence)."""
