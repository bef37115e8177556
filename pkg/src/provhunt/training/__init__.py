from provhunt.training.config import TrainConfig
from provhunt.training.schedule import lr_at
from provhunt.training.trainer import TrainResult, build_tokenizer, compute_losses, train

__all__ = ["TrainConfig", "TrainResult", "build_tokenizer", "compute_losses", "lr_at", "train"]
