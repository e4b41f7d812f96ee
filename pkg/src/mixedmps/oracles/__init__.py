"""Independent reference implementations used to validate the MPS machinery.

These deliberately avoid the MPO/evolution code paths: operators are embedded
as full (sparse) matrices with explicit parity strings, superoperators are
assembled by global Kronecker products and reordered to the per-site
vectorization convention, and time integration is a classic fixed-step RK4
with step halving.
"""

from .dense import (
    DenseState,
    dense_channel,
    dense_evolve,
    dense_expect,
    dense_expect_sites,
    dense_generator,
    dense_operator,
    dense_product_state,
)
from .covariance import (
    CovarianceModel,
    boson_source,
    covariance_evolve,
    fermion_dephasing,
    fermion_source,
    xx_boundary,
    xx_current,
    xx_sz,
)

__all__ = [
    "DenseState",
    "dense_channel",
    "dense_evolve",
    "dense_expect",
    "dense_expect_sites",
    "dense_generator",
    "dense_operator",
    "dense_product_state",
    "CovarianceModel",
    "boson_source",
    "covariance_evolve",
    "fermion_dephasing",
    "fermion_source",
    "xx_boundary",
    "xx_current",
    "xx_sz",
]
