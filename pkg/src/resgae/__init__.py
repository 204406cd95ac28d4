"""Graph autoencoders (GAE, VGAE) and their residual variants for link prediction."""
from .graph import Graph, NormalizedAdjacency, EdgeSplit, normalize, split_edges
from .models import EncoderConfig, ModelKind
from .train import TrainConfig, train_single, train_multi

__all__ = [
    "Graph", "NormalizedAdjacency", "EdgeSplit", "normalize", "split_edges",
    "EncoderConfig", "ModelKind", "TrainConfig", "train_single", "train_multi",
]
__version__ = "0.1.0"
