from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .config import TrainConfig
from .evaluate import ablate, dump_embeddings, evaluate
from .train import cosine_lr, train_stage1, train_stage2

__all__ = [
    "Checkpoint", "TrainConfig", "ablate", "cosine_lr", "dump_embeddings", "evaluate",
    "load_checkpoint", "save_checkpoint", "train_stage1", "train_stage2",
]
