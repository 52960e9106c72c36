"""Training-free block-sparse attention at desk scale.

Offline per-(layer, head) sparsity profiling, bidirectional query/key
co-clustering, threshold-based block selection, and dense-attention oracles
to check them against.
"""

from .attention import (LayerParams, StabilityBoundParams, attention_density, dense_attention,
                        logit_variance_direct, logit_variance_trace, logits, project,
                        stability_bound)
from .errors import ConfigError, ContractError, ShapeError
from .metrics import (QualityReport, RecallReport, ReferencePairSet, induced_budget, psnr,
                      recall_at_budget, reference_pairs)
from .numerics import (GaussianFit, gaussian_fit, l2_normalize_rows, matmul, normal_quantile,
                       softmax_rows, spectral_norm)
from .partitioning import CoClusterResult, Partition, cocluster, kmeans, nmi
from .profiling import (CalibrationSet, ScheduleEntry, SparsitySchedule, collect_densities,
                        fit_schedule)
from .selection import (BlockMask, CoarseEstimate, RhoSemantics, SelectionDecision,
                        block_recall, build_mask, coarse_estimate, select_rho, sparse_attention)
from .synth import SynthSpec, gen_stack, gen_tokens, perturb

__version__ = "0.1.0"

__all__ = [
    "LayerParams",
    "StabilityBoundParams",
    "attention_density",
    "dense_attention",
    "logit_variance_direct",
    "logit_variance_trace",
    "logits",
    "project",
    "stability_bound",
    "ConfigError",
    "ContractError",
    "ShapeError",
    "QualityReport",
    "RecallReport",
    "ReferencePairSet",
    "induced_budget",
    "psnr",
    "recall_at_budget",
    "reference_pairs",
    "GaussianFit",
    "gaussian_fit",
    "l2_normalize_rows",
    "matmul",
    "normal_quantile",
    "softmax_rows",
    "spectral_norm",
    "CoClusterResult",
    "Partition",
    "cocluster",
    "kmeans",
    "nmi",
    "CalibrationSet",
    "ScheduleEntry",
    "SparsitySchedule",
    "collect_densities",
    "fit_schedule",
    "BlockMask",
    "CoarseEstimate",
    "RhoSemantics",
    "SelectionDecision",
    "block_recall",
    "build_mask",
    "coarse_estimate",
    "select_rho",
    "sparse_attention",
    "SynthSpec",
    "gen_stack",
    "gen_tokens",
    "perturb",
]
