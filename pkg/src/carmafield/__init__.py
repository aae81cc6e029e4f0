"""Causal CARMA random fields on lattices: theory, simulation, fitting.

Public surface:

- ``model``: exact second-order quantities (kernel, autocovariance,
  variogram, spectral density) of a CARMA(p, q) random field.
- ``simulate``: lattice realizations under compound Poisson or general
  Lévy noise, with closed-form approximation errors.
- ``estimate``: empirical variograms, weighted-least-squares fitting,
  asymptotic covariances, AIC model selection.
- ``identify``: constructive recovery of the parameters from exact
  variogram ordinates on the principal axes.
- ``cli``: the ``carma-field`` command.
"""

__version__ = "0.1.0"

from . import estimate, gridio, identify, model, simulate, workflows  # noqa: F401
from .estimate import EmpiricalVariogram, FitConfig, FitResult  # noqa: F401
from .model import CarmaSpec  # noqa: F401
from .simulate import (  # noqa: F401
    CompoundPoissonBasis,
    GaussianBasis,
    LatticeField,
    VarianceGammaBasis,
)
