"""Large deviations of busy-period areas for the reflected random walk.

Subpackages and modules:

* ``models``: increment laws, log-MGF and convex conjugate.
* ``paths``: bounded-variation and step-drift paths, completed graphs, M1' distance.
* ``rates``: path costs and the rate functions built on B0*.
* ``variational``: direct and shooting solvers for the minimal excursion cost.
* ``sim``: Lindley chain simulation, cycle harvesting, scaled processes.
* ``oracle``: exact computations for lattice chains.
* ``verify``, ``acceptance``, ``cli``: tail fits, acceptance suite, command line.
"""

from importlib.metadata import PackageNotFoundError, version

try:
    __version__ = version("busyldp")
except PackageNotFoundError:  # running from a source tree
    __version__ = "0.1.0"

from .models import (  # noqa: E402
    ConvexConjugate,
    IncrementModel,
    exp_minus_constant,
    gaussian,
    lattice,
    legendre,
    legendre_grad,
    log_mgf,
    tilt_root_beta,
    two_point,
    validate_assumptions,
)
from .rates import RateContext, make_context  # noqa: E402

__all__ = [
    "__version__",
    "ConvexConjugate",
    "IncrementModel",
    "exp_minus_constant",
    "gaussian",
    "lattice",
    "legendre",
    "legendre_grad",
    "log_mgf",
    "tilt_root_beta",
    "two_point",
    "validate_assumptions",
    "RateContext",
    "make_context",
]
