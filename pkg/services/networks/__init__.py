from services.networks.classifier import (
    ClassifierTrainResult,
    FeatureHook,
    MLPClassifier,
    extract_features,
    load_classifier,
    save_classifier,
    train_classifier,
)
from services.networks.heads import (
    DependencyMode,
    GmmParams,
    HeadConfig,
    HeadTemperatures,
    MixtureHead,
    head_forward,
)

__all__ = [
    "ClassifierTrainResult",
    "FeatureHook",
    "MLPClassifier",
    "extract_features",
    "load_classifier",
    "save_classifier",
    "train_classifier",
    "DependencyMode",
    "GmmParams",
    "HeadConfig",
    "HeadTemperatures",
    "MixtureHead",
    "head_forward",
]
