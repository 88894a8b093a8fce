"""Multivariate Gaussian distributional regression with unconstrained
Cholesky-style covariance parameterizations.

Every distributional parameter (means, innovation variances or
inverse-factor diagonals, autoregression or off-diagonal entries) is
linked to its own additive predictor built from intercepts, linear terms
and penalized splines.  Fitting is by penalized iteratively weighted least
squares with AIC smoothing selection, or by an IWLS-proposal
Metropolis-Hastings sampler for credible intervals.
"""

from .covparam import (
    ADMask,
    CovarianceMatrix,
    InvalidParameterError,
    InverseCholFactor,
    ModifiedCholParams,
    apply_ad_mask,
    basic_to_modified,
    correlation_from_sigma,
    modified_to_basic,
    sigma_from_ar1,
    sigma_from_basic,
    sigma_from_const_corr,
    sigma_from_modified,
)
from .kernels import BACKEND as KERNEL_BACKEND
from .likelihood import (
    LINKS,
    DerivativeBundle,
    NumericalError,
    PredictorBundle,
    grad_reference,
    loglik_basic,
    loglik_generic,
    loglik_modified,
)

__version__ = "0.1.0"

__all__ = [
    "ADMask",
    "CovarianceMatrix",
    "DerivativeBundle",
    "InvalidParameterError",
    "InverseCholFactor",
    "KERNEL_BACKEND",
    "LINKS",
    "ModifiedCholParams",
    "NumericalError",
    "PredictorBundle",
    "apply_ad_mask",
    "basic_to_modified",
    "correlation_from_sigma",
    "grad_reference",
    "loglik_basic",
    "loglik_generic",
    "loglik_modified",
    "modified_to_basic",
    "sigma_from_ar1",
    "sigma_from_basic",
    "sigma_from_const_corr",
    "sigma_from_modified",
    "__version__",
]
