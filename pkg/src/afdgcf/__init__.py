"""Graph collaborative filtering with adaptive feature de-correlation.

Linear propagation recommenders (LightGCN, residual GCCF) trained with BPR
plus a layer-wise, side-wise column de-correlation penalty, using
hand-derived gradients, together with the Corr/SMV representation
diagnostics.
"""

from .afd import adaptive_coefficients, afd_backward, afd_loss, column_correlation, mean_feature_correlation
from .dataset import InteractionDataset, build_dataset, filter_k_core, load_interactions
from .diagnostics import corr_metric, double_standardize, smv_metric, norm_identity_residual
from .graph import SparseMatrix, build_adjacency, normalize_symmetric, spmm
from .metrics import MetricsReport, evaluate, map_at_k, ndcg_at_k, rank_topk, recall_at_k
from .model import EmbeddingTable, LayerStack, PooledEmbedding, init_embeddings, pool, propagate, score_all
from .train import TrainConfig, TrainState, adam_update, backward_through_stack, bpr_loss_and_grad, sample_batch
from .train import train as fit

__version__ = "0.1.0"
