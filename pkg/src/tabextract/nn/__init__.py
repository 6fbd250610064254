from .batch import TableBatch, make_batch, split_probs
from .models import (PARAM_TARGETS, TRAINABLE, VARIANTS, ModelConfig, ModelError, SegModel,
                     build_model, forward, param_count)
from .train import (Adam, HistoryRow, binary_cross_entropy, finite_difference_grads, gradient_check,
                    history_csv, loss_and_grad, train)
from .weights import WeightFileError, load_weights, save_weights

__all__ = [
    "TableBatch", "make_batch", "split_probs", "PARAM_TARGETS", "TRAINABLE", "VARIANTS",
    "ModelConfig", "ModelError", "SegModel", "build_model", "forward", "param_count", "Adam",
    "HistoryRow", "binary_cross_entropy", "finite_difference_grads", "gradient_check",
    "history_csv", "loss_and_grad", "train", "WeightFileError", "load_weights", "save_weights",
]
