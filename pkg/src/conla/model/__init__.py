from conla.model.lam import (
    LatentActionModel,
    LamOutput,
    frames_to_tensor,
    load_lam_checkpoint,
    reconstruction_loss,
    save_lam_checkpoint,
)
from conla.model.quantizer import VectorQuantizer

__all__ = [
    "LamOutput",
    "LatentActionModel",
    "VectorQuantizer",
    "frames_to_tensor",
    "load_lam_checkpoint",
    "reconstruction_loss",
    "save_lam_checkpoint",
]
