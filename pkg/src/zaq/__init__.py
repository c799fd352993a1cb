"""Data-free low-bit quantization.

A generator and a simulated k-bit copy of a pretrained network play an
alternating minimax game over a two-level discrepancy (outputs plus channel
relation maps), so the quantized copy recovers accuracy without any original
training data. Everything runs on the package's own tape-based autodiff
engine.
"""

from . import autodiff
from .autodiff import Tape, Tensor, precision
from .config import RunConfig, TrainConfig
from .data import Dataset, SyntheticDatasetSpec, gen_dataset
from .losses import (ActivationStats, AdaptiveWeightState, activation_regularizer, crm,
                     feature_discrepancy, loss_de, loss_kt, output_discrepancy,
                     update_adaptive_weights)
from .models import (Generator, ModelGraph, build_generator, build_teacher,
                     forward_with_taps)
from .quantize import (ActRangeTracker, FakeQuantParam, QuantSpec, fake_quant,
                       fake_quant_array, quantize_model, quantize_value, scale_for)
from .train import (RunResult, discrepancy_estimation_step, evaluate,
                    knowledge_transfer_step, run, train_supervised)

__all__ = [
    "ActRangeTracker", "ActivationStats", "AdaptiveWeightState", "Dataset",
    "FakeQuantParam", "Generator", "ModelGraph", "QuantSpec", "RunConfig",
    "RunResult", "SyntheticDatasetSpec", "Tape", "Tensor", "TrainConfig",
    "activation_regularizer", "autodiff", "build_generator", "build_teacher",
    "crm", "discrepancy_estimation_step", "evaluate", "fake_quant",
    "fake_quant_array", "feature_discrepancy", "forward_with_taps",
    "gen_dataset", "knowledge_transfer_step", "loss_de", "loss_kt",
    "output_discrepancy", "precision", "quantize_model", "quantize_value",
    "run", "scale_for", "train_supervised", "update_adaptive_weights",
]

__version__ = "0.1.0"
