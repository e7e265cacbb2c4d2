from .losses import Triplet, relation_loss, total_loss, triplet_loss
from .trainer import EpochLoss, TrainResult, Trainer, read_loss_trace, train, write_loss_trace

__all__ = [
    "EpochLoss",
    "TrainResult",
    "Trainer",
    "Triplet",
    "read_loss_trace",
    "relation_loss",
    "total_loss",
    "train",
    "triplet_loss",
    "write_loss_trace",
]
