from .autograd import Tensor
from .models import (CNN_LONG, CNN_SHORT, ConvBlock, ModelSpec, SequenceClassifier,
                     VocabularyMismatch, predict)
from .train import Dataset, TrainConfig, TrainingDiverged, train

__all__ = [
    "Tensor", "ModelSpec", "ConvBlock", "CNN_LONG", "CNN_SHORT", "SequenceClassifier",
    "VocabularyMismatch", "predict", "Dataset", "TrainConfig", "TrainingDiverged", "train",
]
