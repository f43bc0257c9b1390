"""Deep metric learning with memory-based virtual classes (MemVir)."""

from .core import ZeroNorm, l2_normalize, pairwise_cosine, stable_log_softmax
from .losses import (
    GradDecomposition,
    LabelOutOfRange,
    LossConfig,
    LossOutput,
    LossVariant,
    grad_decompose_baseline,
    grad_decompose_memvir,
    loss_forward,
)
from .memory import (
    MemVirConfig,
    MemVirState,
    Mode,
    VirtualBatch,
    assemble_extended_batch,
    enqueue_step,
    memvir_training_step,
    schedule_class_count,
    select_virtual,
)
from .metrics import EvalReport, compute_metrics, mean_cos_to_weight, retrieve

__version__ = "0.1.0"
