"""netdecay: spectral and essential spectral radii of Jackson networks.

Four mutually cross-checking routes to the same two numbers:

* closed-form rate-function formulas (:mod:`netdecay.ratefn`),
* variational minimization of the path action (:mod:`netdecay.pathopt`),
* Perron eigenvalues of truncated killed generators (:mod:`netdecay.spectral`),
* Monte-Carlo survival decay (:mod:`netdecay.montecarlo`),

plus the dyadic cluster partition of far-from-origin paths
(:mod:`netdecay.cluster`) and a CLI front end (:mod:`netdecay.cli`).
"""

from .network import (
    Classification,
    Network,
    Transition,
    TrafficSolution,
    generator_row,
    solve_traffic,
    validate,
)
from .ratefn import ALPHA_CAP, RateEnv, face_of

__version__ = "0.1.0"

__all__ = [
    "ALPHA_CAP",
    "Classification",
    "Network",
    "RateEnv",
    "TrafficSolution",
    "Transition",
    "face_of",
    "generator_row",
    "solve_traffic",
    "validate",
    "__version__",
]
