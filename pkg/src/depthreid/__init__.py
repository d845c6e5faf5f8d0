"""depthreid: person re-identification from depth video.

Frames are single-channel depth maps in millimeters. A small CNN embeds
each frame, an LSTM integrates the sequence, and an attention unit
trained by a score-function gradient scores per-frame relevance so that
multi-shot predictions are a quality-weighted fusion of frame
posteriors. Transfer from an RGB source network uses split learning
rates per layer group.
"""

__version__ = "0.1.0"

from .embedding import EmbeddingConfig, FrameEmbedding
from .estimators import SequenceReid, SingleShotReid
from .nn import Parameter, RngStream
from .sequence import SequenceModel
from .training import SequenceTrainer, TrainConfig, train_embedding
from .transfer import (TransferPlan, load_checkpoint, save_checkpoint,
                       sweep_plan)

__all__ = [
    "EmbeddingConfig", "FrameEmbedding", "Parameter", "RngStream",
    "SequenceModel", "SequenceReid", "SequenceTrainer", "SingleShotReid",
    "TrainConfig", "TransferPlan", "load_checkpoint", "save_checkpoint",
    "sweep_plan", "train_embedding", "__version__",
]
