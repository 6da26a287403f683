"""Parallel Bayesian matrix factorization with posterior propagation.

Trains R ~ U V^T by Gibbs sampling on sparse ratings, scaling through a
three-phase block scheme: the anchor block's posterior marginals become
priors for its row/column neighbours, whose marginals in turn seed the
remaining blocks. Blocks inside a phase run in parallel with no
communication.
"""

from .blocking import BlockGrid, build_grid, extract_block, suggest_grid
from .config import ModelConfig, RunConfig
from .data import (
    SparseRatings, compute_stats, load_csv_triplets, load_matrix_market,
    train_test_split,
)
from .gibbs import SidePrior, StreamContext, run_chain
from .scheduler import (
    execute_plan, max_phase_parallelism, plan_phases, sample_accounting,
)
from .synthetic import generate_synthetic

__version__ = "0.1.0"

__all__ = [
    "BlockGrid", "ModelConfig", "RunConfig", "SidePrior", "SparseRatings",
    "StreamContext", "build_grid", "compute_stats", "execute_plan",
    "extract_block", "generate_synthetic", "load_csv_triplets",
    "load_matrix_market", "max_phase_parallelism", "plan_phases", "run_chain",
    "sample_accounting", "suggest_grid", "train_test_split", "__version__",
]
