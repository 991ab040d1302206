"""Multi-resolution neural ranking engine with duplex attention."""

from mrnn.autodiff import Array, backward, no_grad
from mrnn.ngram import ModelConfig
from mrnn.model import MRNNModel, forward_pair, init_model, score_pair
from mrnn.training import TrainConfig, load_checkpoint, save_checkpoint, train

__all__ = [
    "Array",
    "backward",
    "no_grad",
    "ModelConfig",
    "MRNNModel",
    "forward_pair",
    "init_model",
    "score_pair",
    "TrainConfig",
    "load_checkpoint",
    "save_checkpoint",
    "train",
]

__version__ = "0.1.0"
