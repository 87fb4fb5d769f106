"""Graph contrastive learning on structural/functional connectivity matrices."""

from .augment import AugmentConfig, GraphView, clean_view
from .data import (
    Connectome,
    Dataset,
    SplitSpec,
    generate_synthetic,
    load_dataset,
    normalize_adjacency,
    save_dataset,
    split_dataset,
)
from .errors import DataError, NumericalError, ValidationError
from .evaluation import evaluate, export_embeddings, pca_project, proportion_sweep
from .losses import SupConBatch, baseline_loss, ce_loss, mse_loss, pretrain_loss, supcon_loss
from .model import (
    EncoderOutput,
    ModelConfig,
    ModelParams,
    classify,
    decode,
    encode,
    forward_full,
    load_checkpoint,
    pool,
    save_checkpoint,
)
from .optim import (
    BatchInputs,
    Gradients,
    compute_gradients,
    finite_difference_check,
    init_optimizer_state,
    init_params,
    optimizer_step,
)
from .training import (
    FinetuneConfig,
    PretrainConfig,
    TrainConfig,
    TrainReport,
    finetune,
    pretrain_contrastive,
    run_contrastive,
    train_baseline,
)

__version__ = "0.1.0"
