"""Topologically consistent magnitude pruning at desk scale.

Train layered networks (dense stacks, optionally headed by a multi-head GCN
aggregation-convolution block) under a differentiable pruning mask, with two
bidirectional supervisory passes that keep every surviving connection on an
input-to-output path, an independent reachability oracle, and Table-2-style
sweep reporting.
"""

from .backend import backend_name, set_backend
from .mask import AnnealSchedule, binarize, ones_count, psi_apply, psi_grad
from .netgraph import (
    LayerSpec,
    MaskedWeights,
    NetworkSpec,
    dense,
    forward_crisp,
    forward_masked,
    gcn_block,
    gcn_block_forward,
    init_weights,
    total_prunable,
    unpruned_count,
)
from .topo import (
    TopoReport,
    TopoState,
    consistency_report,
    effective_mask,
    extract_consistent,
    phi_forward,
    reachability_oracle,
    sa_sc_products,
)
from .lossopt import (
    AdamState,
    Grads,
    LossBreakdown,
    LrState,
    PruneConfig,
    access_penalty,
    adam_step,
    backward,
    budget_loss,
    clip_gradients,
    cross_entropy,
    lr_update,
    total_loss,
)
from .data import (
    DataConfig,
    Dataset,
    SkeletonSequence,
    build_adjacency,
    gen_synthetic,
    load_dataset,
    save_dataset,
    split_train_test,
    temporal_chunking,
)
from .train import RunResult, network_report, run_training

__version__ = "0.1.0"
