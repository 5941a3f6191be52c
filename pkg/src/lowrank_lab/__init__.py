"""Low-rank approximability of fixed-point limits on tensor-product spaces.

Dense tensors with splitting diagnostics, Kronecker-sum operators,
Richardson iterations with rank bookkeeping, closed-form tail bounds and
an experiment harness that certifies the bounds against measured spectra.
"""

__version__ = "0.1.0"

from .errors import LabError
from .tensor_core import (
    Entropy,
    SingularSpectrum,
    Splitting,
    Tensor,
    fold,
    overlap_theta,
    singular_spectrum,
    t_rank,
    tail_error,
    truncate,
    tt_aggregate_error,
    tt_round,
    unfold,
    von_neumann_entropy,
)
from .kron_operator import (
    ElementaryOp,
    KronSumOperator,
    RhsTensor,
    apply,
    assemble_dense,
    build_model,
    identity_operator,
    operator_t_rank,
    spectral_interval,
)
from .richardson import (
    IterationTrace,
    SpectralData,
    bound_simplified,
    bound_thm21_full,
    bound_thm31,
    commuting_rank_bound,
    contraction_rate,
    dense_solve,
    richardson_run,
    sv_bound_eq27,
)
from .eigen import (
    EigenSetup,
    bound_thm41,
    bound_thm42,
    pi1_upper_bounds,
    rank_one_start,
    shifted_richardson_run,
    smallest_pair,
    theta_bound_thm42,
    two_step_rank_probe,
)
from .config import ExperimentConfig, load_configs
from .bound_lab import (
    DecayReport,
    certify_dominance,
    run_commuting_experiment,
    run_d_sweep,
    run_eigen_experiment,
    run_linear_experiment,
)
