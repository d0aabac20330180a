from .ecg import EcgAutoencoder, EcgDecoder, EcgEncoder, EcgLatent
from .fusion import FusionState, TemporalGatedFusion, fuse_features
from .network import IN_CHANNELS, FusionSegmenter, ModelConfig, ModelOutputs
from .unet import FeatureMap, UNetBackbone

__all__ = [
    "EcgAutoencoder", "EcgDecoder", "EcgEncoder", "EcgLatent",
    "FusionState", "TemporalGatedFusion", "fuse_features",
    "IN_CHANNELS", "FusionSegmenter", "ModelConfig", "ModelOutputs",
    "FeatureMap", "UNetBackbone",
]
