"""Contrastive latent-action learning on a controllable synthetic video world.

Three training stages share one small codebase: a latent action model (inverse
dynamics encoder -> split -> contrastive heads -> vector quantizer -> forward
dynamics decoder), an autoregressive policy pretrained on the quantized latent
action tokens, and an action-finetuning pass that maps the policy onto
discretized continuous controls. The evaluation module quantifies how well the
latent action space separates motion from appearance.
"""

__version__ = "0.1.0"

from conla.config import (
    Config,
    ModelConfig,
    PolicyConfig,
    TrainConfig,
    WorldConfig,
)

__all__ = [
    "Config",
    "ModelConfig",
    "PolicyConfig",
    "TrainConfig",
    "WorldConfig",
    "__version__",
]
