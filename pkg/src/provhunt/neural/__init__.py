from provhunt.neural.checkpoint import load_checkpoint, save_checkpoint
from provhunt.neural.model import GraphTextModel, GraphBatch, ModelConfig
from provhunt.neural.tokenizer import Tokenizer

__all__ = ["GraphTextModel", "GraphBatch", "ModelConfig", "Tokenizer", "load_checkpoint", "save_checkpoint"]
