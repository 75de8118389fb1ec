"""subzero: zeroth-order optimization with subspace perturbations.

A numpy library plus command-line harness for studying two-point
(SPSA-style) gradient estimators under structured random perturbations:
low-rank projections, sparse masks, and block-sparse masks, together
with the block-coordinate optimizer family built on the seed-reuse
perturbation trick, subspace-alignment statistics on a randomized
quadratic testbed, and closed-form memory/traffic cost models.
"""

from .analysis import (
    LayerShape,
    MemoryReport,
    iterations_to_target,
    mean_rho,
    peak_memory_params,
    traffic_per_step,
)
from .errors import AcceptanceError, DivergenceError, InputError, NumericalError
from .linalg import EigenDecomp, SymMatrix, eig_sym, intdim, orthonormalize, srank
from .objectives import (
    HessianSpec,
    QuadraticObjective,
    StochasticObjective,
    generate_hessian,
    heterogeneous_block_hessian,
    load_hessian,
    make_logistic_data,
    quadratic_loss,
    save_hessian,
    stochastic_loss,
)
from .optim import (
    AdamState,
    OptimConfig,
    ParamVector,
    RunLog,
    StepRecord,
    adaptive_run,
    make_sampler,
    mezo_bcd_adam_run,
    mezo_bcd_run,
    perturb_parameters,
    spsa_gradient,
    update_block_idx,
    zo_sgd_run,
)
from .perturbation import (
    AlignmentSample,
    BlockPartition,
    BlockSparse,
    Identity,
    LowRank,
    SparseMask,
    alignment_rho,
    alignment_rho_dense,
    apply_M,
    as_dense,
    block_tail_probability,
    controlled_projection,
    expected_rho,
    rho_distribution,
    sample_block_sparse,
    sample_low_rank,
    sample_sparse,
    write_alignment_csv,
)
from .rng import mix64, normals, uniforms

__version__ = "0.1.0"
