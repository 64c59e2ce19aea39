"""Pretrained Actigraphy Transformer: masked-autoencoder pretraining, fine-tuning
and attention explainability for week-long minute-level activity series."""

from .benchmark import BenchmarkReport, ModelRecipe, render_report, report_csv, run_benchmark
from .checkpoint import (
    Checkpoint,
    checkpoint_from_model,
    load_checkpoint,
    model_from_checkpoint,
    save_checkpoint,
)
from .data import (
    ActigraphyRecord,
    ParseError,
    SplitSpec,
    load_csv,
    save_csv,
    savgol_smooth,
    standardize_per_minute,
    stratified_subsets,
    synth_generate,
)
from .explain import aggregate_importance, expand_to_minutes, export_heatmap, extract_attention
from .finetune import (
    CheckpointError,
    Classifier,
    FinetuneConfig,
    attach_head,
    binary_cross_entropy,
    finetune,
    predict,
    predict_batch,
)
from .metrics import auc
from .model import (
    ActigraphyTransformer,
    AttentionBundle,
    ModelConfig,
    count_parameters,
    patchify,
    positional_embedding,
)
from .pretrain import MAEConfig, MaskPlan, MaskedAutoencoder, pretrain_loop, sample_mask
from .tensor import ContractError, ShapeError, Tensor

__version__ = "0.1.0"
