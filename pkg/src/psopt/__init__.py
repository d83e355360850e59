"""Persistence-sensitive simplification and optimization of scalar fields.

The package computes merge trees and 0-dimensional persistence diagrams of
functions on graphs, simplifies away low-persistence features, and uses the
distance to the simplified function as a differentiable regularizer, both
directly on vertex values and inside a neural-network training loop.
"""

from .field import (
    DataError,
    DatasetSplit,
    Graph,
    NumericError,
    PointCloud,
    ScalarField,
    augment_cloud,
    build_grid_graph,
    build_knn_graph,
    pca_project,
    split_dataset,
    standardize,
)
from .merge_tree import (
    Direction,
    MergeTree,
    PersistenceDiagram,
    Vineyard,
    compute_diagram,
    compute_merge_tree,
    diagram_of,
    oracle_diagram,
)
from .simplify import (
    ConfidenceField,
    SimplificationTarget,
    confidence_field,
    epsilon_largest_gap,
    epsilon_top_j,
    simplify,
    simplify_confidence,
)
from .losses import LossGrad, diagram_loss_grad, pso_loss_grad, record_vineyard
from .optim_values import (
    FOUR_GAUSSIANS,
    GaussianSpec,
    LossKind,
    ValueOptReport,
    gaussian_mixture_field,
    optimize_values,
    peak_persistences,
)
from .neural import (
    AdamState,
    EpsilonPolicy,
    Mlp,
    TrainConfig,
    TrainReport,
    adam_step,
    init_mlp,
    mlp_backward,
    mlp_forward,
    topo_phase,
    train,
)
from .data import load_csv, make_blobs, make_wine_like, save_csv

__version__ = "0.1.0"
