"""strforge: a four-stage scene-text recognition framework and benchmark kit.

Stages: thin-plate-spline rectification (optional), a convolutional feature
extractor (VGG / RCNN / ResNet), an optional bidirectional-LSTM sequence
model, and a CTC or attention predictor — with a shared evaluation protocol
and accuracy/cost trade-off analysis over all 24 stage combinations.
"""

from .pipeline import PipelineConfig, TrainRecipe, all_combinations, assemble
from .predict import CODEC, LabelCodec

__version__ = "0.1.0"

__all__ = [
    "PipelineConfig", "TrainRecipe", "all_combinations", "assemble",
    "CODEC", "LabelCodec", "__version__",
]
