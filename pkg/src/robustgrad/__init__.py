"""Memory-compressed optimization for tensor-structured weights.

Gradients are split into a sparse part plus a Tucker low-rank part; Adam
moments live in the compressed spaces.  Ships the optimizer and its
baselines, a theory verification lab, and a CLI benchmark harness on
synthetic spectral-operator regression tasks.
"""

from .tensor_ops import (
    fold,
    fro_norm,
    inner,
    mode_product,
    mode_spectral_norm,
    multilinear_stable_rank,
    outer,
    stable_rank,
    unfold,
)
from .decompose import (
    SvdResult,
    TuckerFactors,
    hooi,
    hosvd_init,
    subspace_distance,
    truncated_svd,
    tucker_compress,
    tucker_expand,
)
from .sparsify import (
    IndexSet,
    SparseTensor,
    back_project,
    dense,
    extract,
    restrict,
    scatter_add,
    select_indices,
    structured_mask,
)
from .halfprec import HALF_MAX, half_round, half_ulp
from .optim import (
    DenseAdamState,
    GaloreState,
    MomentPair,
    OptimizerConfig,
    RobustState,
    adam_update,
    dense_adam_step,
    galore_step,
    load_checkpoint,
    lowrank_only_step,
    moment_element_count,
    moment_scalar_count,
    ranks_from_ratio,
    robust_step,
    save_checkpoint,
    sparse_only_step,
)
from .memory import MemoryReport, matched_rank_parameter_counts, memory_count
from .task import Dataset, LinearSpectralModel, SpectralTask, TwoLayerSpectralModel, generate_task
from .train import NanLossError, RunRecord, run_experiment, train_once

__version__ = "0.1.0"
