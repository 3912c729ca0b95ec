"""Stationary distributions of quasi-birth-death chains by successive
lumping (QDESA and its structured variants) and lattice path counting
(LPCA), with a direct sparse reference solver and a queueing model zoo."""
from .core import (
    LevelBlockChain,
    StageBlockChain,
    SteadyState,
    TruncationMeta,
    UnboundedChain,
    assemble_full_generator,
    check_des_columns,
    relabel_entrance_first,
    transpose_to_stage_view,
    truncate_chain,
    validate_generator,
)
from .errors import (
    ApplicabilityError,
    DESViolationError,
    DivergenceError,
    HomogeneityError,
    InputError,
    InstabilityError,
    LPCViolationError,
    NotStageQBDError,
    NumericalError,
    QBDError,
    SingularMatrixError,
    StructuralError,
)
from .bench import run_bench
from .lattice import (
    JumpProbabilities,
    LpcRateMatrix,
    catalan_G0,
    compute_G,
    compute_G_sequence,
    compute_kappa,
    compute_rhat,
    jump_probabilities,
    lpc_steady_state,
)
from .lumping import RateMatrixSet, build_B, classify_variant, compute_rate_matrices, solve_qdesa
from .models import (
    ModelSpec,
    build_batch_priority,
    build_chain,
    build_longest,
    build_longest_hetero,
    build_priority,
    parse_model_spec,
)
from .oracle import ComparisonReport, compare_distributions, direct_steady_state, fixed_point_R
from .solvers import Problem, SolveResult, applicable_methods, compare_results, solve
from .structured import StructuredB, invert_B_structured

__all__ = [
    "ApplicabilityError",
    "ComparisonReport",
    "DESViolationError",
    "DivergenceError",
    "HomogeneityError",
    "InputError",
    "InstabilityError",
    "JumpProbabilities",
    "LPCViolationError",
    "LevelBlockChain",
    "LpcRateMatrix",
    "ModelSpec",
    "NotStageQBDError",
    "NumericalError",
    "Problem",
    "QBDError",
    "RateMatrixSet",
    "SingularMatrixError",
    "SolveResult",
    "StageBlockChain",
    "SteadyState",
    "StructuralError",
    "StructuredB",
    "TruncationMeta",
    "UnboundedChain",
    "applicable_methods",
    "assemble_full_generator",
    "build_B",
    "build_batch_priority",
    "build_chain",
    "build_longest",
    "build_longest_hetero",
    "build_priority",
    "catalan_G0",
    "check_des_columns",
    "classify_variant",
    "compare_distributions",
    "compare_results",
    "compute_G",
    "compute_G_sequence",
    "compute_kappa",
    "compute_rate_matrices",
    "compute_rhat",
    "direct_steady_state",
    "fixed_point_R",
    "invert_B_structured",
    "jump_probabilities",
    "lpc_steady_state",
    "parse_model_spec",
    "relabel_entrance_first",
    "run_bench",
    "solve",
    "solve_qdesa",
    "transpose_to_stage_view",
    "truncate_chain",
    "validate_generator",
]
