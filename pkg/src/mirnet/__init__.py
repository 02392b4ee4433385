"""Dilated residual network for myocardial infarction detection and
localization from 12-lead ECG."""
from .estimator import MIResNetClassifier
from .model import CLASS_NAMES, ClassLabel, count_parameters, init_model
from .trainer import TrainConfig

__all__ = ["MIResNetClassifier", "CLASS_NAMES", "ClassLabel", "TrainConfig", "count_parameters", "init_model"]
__version__ = "0.1.0"
