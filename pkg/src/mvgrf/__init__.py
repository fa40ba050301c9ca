"""Stationary multivariate random fields.

Three interchangeable constructions of the same second-order targets:
spectral square-root filtering of white noise on periodic grids, kernel
convolution of independently scattered measures, and sparse Markov
precision operators; plus cross-covariance/asymmetry diagnostics,
likelihood paths, and scaling benchmarks.
"""

__version__ = "0.1.0"

from .convolution import (
    KernelSpec,
    NoiseMeasureSpec,
    build_kernel,
    implied_cov_pair,
    implied_cross_cov,
    sample_convolution_field,
    sample_noise_increments,
)
from .covariance import (
    CrossCovariance,
    analytic_cross_cov,
    asymmetry_index,
    empirical_cross_cov,
)
from .grid import FrequencyGrid, GridSpec, build_frequency_grid, probe_lags
from .likelihood import (
    LikelihoodProblem,
    RidgeReport,
    dense_loglik,
    fd_gradient_check,
    profile_surface,
    ridge_report,
    sparse_loglik,
)
from .markov import (
    PrecisionModel,
    SparseOperator,
    assemble_component_precision,
    bench_scaling,
    build_precision_model,
    calibrate_tau,
    couple_components,
    nested_dissection_order,
    precision_sample,
    sparse_factorize,
)
from .simulate import Realization, draw_spectral_noise, sample_batch, sample_field
from .spectra import (
    MaternParams,
    SpectralFilter,
    SpectrumModel,
    build_filter,
    component_density,
    cross_spectral_matrix,
    spectral_sqrt,
    validate_hermitian_psd,
)

__all__ = [name for name in dir() if not name.startswith("_")]
