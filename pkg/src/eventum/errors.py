"""Shared exception types.

The CLI maps these onto exit codes: configuration / argument problems
exit with 1, numerical failures (blowups, NaNs, unstable steps) with 2.
"""


class InvalidArgumentError(ValueError):
    """An argument is outside its documented domain."""


class DegenerateInputError(ValueError):
    """Input is formally valid but numerically meaningless (e.g. a wave
    packet whose tails stick out of the grid)."""


class NumericalFailureError(RuntimeError):
    """Integration blew up, produced NaNs, or drifted past a guard."""
