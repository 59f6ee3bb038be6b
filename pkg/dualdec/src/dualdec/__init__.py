"""Toy-scale dual-decoder transformer for guided text generation.

One decoder stack, shared weights, two passes: the guided-context pass
produces key/value states; the prompt pass cross-attends into them and is
the only stream that generates tokens.
"""

from .config import PAD_ID, DualDecoderConfig
from .model import (
    ModelError,
    cross_attention,
    encode_guided,
    forward,
    generate,
    init_params,
    loss_and_grads,
    parameter_count,
)
from .train import (
    TrainingDiverged,
    VOCAB_SIZE,
    default_config,
    generation_accuracy,
    load_checkpoint,
    make_batch,
    make_example,
    recall_accuracy,
    save_checkpoint,
    train_toy,
)

__version__ = "0.1.0"

__all__ = [
    "PAD_ID", "DualDecoderConfig", "ModelError", "cross_attention", "encode_guided",
    "forward", "generate", "init_params", "loss_and_grads", "parameter_count",
    "TrainingDiverged", "VOCAB_SIZE", "default_config", "generation_accuracy",
    "load_checkpoint", "make_batch", "make_example", "recall_accuracy",
    "save_checkpoint", "train_toy",
    "__version__",
]
