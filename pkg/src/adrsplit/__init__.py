"""Adaptive Douglas-Rachford splitting and multiblock ADMM."""

from .admm import (
    AdmmState,
    BlockProblem,
    admm_general_run,
    admm_special_run,
    block_operators,
    comonotone_moduli,
    equivalent_general_start,
    extract_kkt_from_fixed_point,
    gs_admm_run,
    kkt_residual,
    special_params,
    stopping_residual,
)
from .experiment import (
    ExperimentConfig,
    RunReport,
    build_denoise_problem,
    denoise_stepsizes,
    gen_signal,
    mae,
    mcp_threshold,
    run_experiment,
)
from .functions import McpPenalty, QuadraticFunction, ZeroFunction, prox_mcp, prox_mcp_scalar
from .linalg import LinearMap, difference_matrix, op_norm
from .operators import ResolventOp, affine_operator, resolvent_affine
from .splitting import (
    ADRParams,
    RegimeCertificate,
    adr_run,
    certify_multi,
    certify_two_op,
    dual_params,
    make_params,
    multi_adr_run,
    multi_adr_run_switched,
)

__version__ = "0.1.0"
