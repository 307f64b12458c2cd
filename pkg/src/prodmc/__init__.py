"""prodmc: joint vs marginal Monte Carlo estimation of product-form means.

Library layout:

* :mod:`prodmc.core`        sample blocks, moments, batch-mean MCE, streams
* :mod:`prodmc.product`     the two estimators and their exact variances
* :mod:`prodmc.covariation` total covariation diagnostics
* :mod:`prodmc.nested`      conditional-independence (nested) estimators
* :mod:`prodmc.quadrature`  Gauss-Hermite rules for normal expectations
* :mod:`prodmc.latent`      binary latent trait model and MWG sampler
* :mod:`prodmc.evidence`    RM/BH/BG evidence estimators, both approaches
* :mod:`prodmc.conjugate`   closed-form Gaussian oracle for the estimators
* :mod:`prodmc.experiments` CSV-producing experiment drivers
* :mod:`prodmc.cli`         the ``prodmc`` command

Set ``PRODMC_BACKEND=numpy`` to disable the numba kernels.
"""

from ._backend import backend_name
from .core import (EstimateReport, MomentSummary, RandomStreamSet, SampleBlock,
                   as_block, batch_mce, make_streams, moments,
                   summary_from_moments)
from .covariation import (TciReport, cov_partial, estimator_tci_diagnostics,
                          tci_bound, tci_decomposition, tci_prefix_curve,
                          tci_report, tci_sample, variance_underestimation)
from .logspace import SignedLog
from .product import (VarianceBreakdown, estimator_variances,
                      goodman_product_variance, joint_estimate,
                      marginal_estimate, required_iterations,
                      variance_cv_form, variance_difference)

__version__ = "0.1.0"

__all__ = [
    "EstimateReport", "MomentSummary", "RandomStreamSet", "SampleBlock",
    "SignedLog", "TciReport", "VarianceBreakdown", "as_block", "backend_name",
    "batch_mce", "cov_partial", "estimator_tci_diagnostics",
    "estimator_variances", "goodman_product_variance", "joint_estimate",
    "make_streams", "marginal_estimate", "moments", "required_iterations",
    "summary_from_moments", "tci_bound", "tci_decomposition",
    "tci_prefix_curve", "tci_report", "tci_sample", "variance_cv_form",
    "variance_difference", "variance_underestimation",
]
