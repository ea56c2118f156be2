"""pamtree: simulation and numerical-verification lab for the parabolic
Anderson model du/dt = Lu + xi*u on critical Galton-Watson trees conditioned
to survive, with i.i.d. Pareto potential xi.

The package generates the random environment (tree + potential), solves the
equation from a point source on truncated domains, locates the predicted
localisation sites, and validates the functional, probabilistic and spectral
bounds the model's analysis relies on — all at desk scale.
"""

from .scales import ModelParams, derive_params

__version__ = "0.1.0"

__all__ = [
    "ModelParams",
    "derive_params",
    "__version__",
]
