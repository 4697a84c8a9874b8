"""eventum: a simulation and verification lab for time-continuous quantum
measurement.

Subpackages:

- ``algebra``: exact quantum Ito matrix algebra, boundary generators, and
  the generator-level identities (pseudo-unitarity, the G -> S map).
- ``grid``: finite-difference representation of a 1-D quantum particle.
- ``noise``: counter-based, reproducible Wiener increment streams.
- ``sde``: stochastic decoherence / state-diffusion integrators and
  ensemble statistics.
- ``moments``: closed-moment (Gaussian) filter oracle, deviation ODE,
  stationary covariance fixed point.
- ``lindblad``: deterministic master-equation oracle.
- ``collision``: discrete repeated-interaction (boundary) model and the
  jump-to-diffusion comparison.
- ``cli``: batch front-end and verification suites.
"""

from .errors import (
    DegenerateInputError,
    InvalidArgumentError,
    NumericalFailureError,
)

__version__ = "0.1.0"

__all__ = [
    "DegenerateInputError",
    "InvalidArgumentError",
    "NumericalFailureError",
    "__version__",
]
