"""Region-aware graph convolutional regression.

Library for node-level regression on spatial graphs with region-level
spatially varying parameters: layer forwards and hand-derived gradients,
adaptive region optimization during training, consensus regionalization of
repeated runs, plus the baselines and diagnostics around them.
"""

from .baselines import LinearModel, eval_metrics, ols_fit, slx_augment
from .data import (Dataset, SyntheticTruth, apply_split_file, grid_graph,
                   load_dataset, save_dataset, split, standardize,
                   standardize_columns, synth_generate, vote_share)
from .deepwalk import (EmbeddingTable, WalkCorpus, augment_features,
                       sample_walks, train_embeddings)
from .ensemble import (SimilarityGraph, anmi, co_assignment_graph, cut_cost,
                       nmi, partition_kway, partition_kway_report, select_R)
from .graph import (SpatialGraph, connected_components, from_edge_list,
                    renormalized_laplacian, row_normalize, symmetrize_flows)
from .model import (GraphOperators, LayerParams, LocalWeights, ModelParams,
                    NetworkConfig, OutputHead, RegionLayerParams,
                    RegionLossEvaluator, TrainConfig, TrainResult,
                    TrainingDiverged, basic_gconv_forward, default_dims,
                    export_model, forward, gconv_forward, gwconv_forward,
                    import_model, init_params, load_model, loss_and_grads,
                    regconv_forward, save_model, train, transfer_from_global)
from .numerics import (AdamState, Prng, activation, activation_grad,
                       adam_step, matmul, spmm)
from .regions import (Allocation, boundary_nodes, grow_regions,
                      kmeans_allocate, optimize_allocation)

__version__ = "0.1.0"
