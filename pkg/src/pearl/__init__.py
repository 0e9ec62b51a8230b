"""Label-efficient post-processing of fixed embeddings.

Refines a frozen embedding space toward class prototypes using a small
reconstruction-regularized network, alongside the standard baselines
(L2, PCA whitening, LDA) and an exact cosine-retrieval metric suite with a
cross-validated evaluation harness.
"""
from .data import (
    BudgetSample,
    DataFormatError,
    EmbeddingMatrix,
    LabeledDataset,
    SplitPlan,
    SyntheticConfig,
    generate_synthetic,
    load_embeddings,
    sample_label_budget,
    save_binary,
    save_csv,
    stratified_kfold,
)
from .harness import ExperimentConfig, MetricRecord, ReportTable, run_experiment
from .kernels import active_backend
from .metrics import (
    NeighborList,
    cosine_similarity,
    f1_per_class,
    hit_at_k,
    knn_predict,
    mrr_at_k,
    purity_at_k,
    separation_delta,
    top_k_neighbors,
)
from .model import (
    PearlConfig,
    PearlParams,
    TrainTrace,
    compute_gradients,
    forward,
    init_params,
    loss_terms,
    train,
    transform,
)
from .preprocessing import (
    LdaProjector,
    PcaWhitener,
    Standardizer,
    l2_normalize,
    lda_apply,
    lda_fit,
    pca_whiten_apply,
    pca_whiten_fit,
    standardizer_apply,
    standardizer_fit,
)
from .prototypes import PrototypeSet, compute_prototypes
from .serialize import ModelCheckpoint, load_checkpoint, save_checkpoint

__version__ = "0.1.0"
