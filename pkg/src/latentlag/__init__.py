"""Structure learning for linear systems whose observations read a hidden state with random delays."""
from .covariance import (LagCovSeq, SingularSystem, UnstableSystem, exact_lag_covariances,
                         noise_cross_covariances, sample_lag_covariances, vec_kron_apply)
from .granger import (GrangerEstimate, granger_fit, granger_predict, latentlag_predict,
                      normalized_mse)
from .harness import ExperimentConfig, RocCurve, ingest_csv, roc_from_sweep, run_synthetic
from .identify import (BlockToeplitz, IdentifiedCombos, build_toeplitz, detect_theta_max,
                       numeric_rank, recover_combos_general, recover_combos_theta01)
from .kernels import BACKEND
from .learn import (LearnConfig, LearnEstimate, cross_validate, fit, objective, project_diag_pos,
                    project_l1_ball, project_simplex)
from .model import (SupportMetrics, SystemParams, ValidationReport, delay_stability_radius,
                    random_sparse_system, sign_pattern_of, spectral_radius, support_metrics,
                    validate_params)
from .simulate import NotStationary, SimConfig, Trajectory, simulate, write_csv

__version__ = "0.1.0"
