from .checkpoint import (
    CheckpointError,
    config_hash,
    decode_checkpoint,
    encode_checkpoint,
    load_checkpoint,
    save_checkpoint,
)
from .layers import ActNorm, AffineCoupling, InvMix1x1, NoiseInjector, squeeze2, unsqueeze2
from .model import Condition, FlowConfig, FlowModel

__all__ = [
    "CheckpointError",
    "config_hash",
    "decode_checkpoint",
    "encode_checkpoint",
    "load_checkpoint",
    "save_checkpoint",
    "ActNorm",
    "AffineCoupling",
    "InvMix1x1",
    "NoiseInjector",
    "squeeze2",
    "unsqueeze2",
    "Condition",
    "FlowConfig",
    "FlowModel",
]
