"""Robust model-based clustering with mixtures of t-factor analyzers.

Each mixture component is a multivariate t distribution whose scale
matrix has the low-rank-plus-diagonal form loadings @ loadings.T +
diag(uniquenesses). Fitting alternates posterior expectations with
conditional maximizations, estimating the factor parameters through a
matrix-free profile likelihood; model order is chosen by BIC.
"""

from .covariance import (
    CovarianceFactor,
    build_cov_factor,
    log_det_sigma,
    log_t_density,
    mahalanobis,
    solve_sigma,
)
from .dataio import read_csv, write_dataset_csv
from .ecm import (
    EcmError,
    FitResult,
    cm_step_dof,
    cm_step_factor,
    cm_step_pi_mu,
    e_step,
    fit,
    make_result,
    observed_loglik,
)
from .eigensolver import ScatterOperator, make_operator, top_eigenpairs
from .initialization import em_em, kmeans_start, random_start
from .model import (
    ComponentParams,
    Dataset,
    FitConfig,
    MixtureModel,
    Responsibilities,
    model_from_json,
    model_to_json,
    validate_model,
)
from .profile import ProfileState, optimize_psi, profile_grad, profile_loglik, recover_lambda
from .selection import (
    SelectionTable,
    bic,
    count_params,
    enumerate_q_vectors,
    max_factors,
    select,
)
from .simulate import (
    SimSpec,
    ari,
    calibrate_overlap,
    correctness_rate,
    draw_model,
    estimate_overlap,
    gen_tmix,
    match_components,
    rel_distances,
)

__version__ = "0.1.0"
