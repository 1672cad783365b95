from conla.training.discretize import discretize_actions, undiscretize
from conla.training.lam_trainer import train_lam
from conla.training.policy import (
    PolicyModel,
    Vocabulary,
    finetune_policy,
    load_policy_checkpoint,
    pretrain_policy,
)
from conla.training.pseudo import PolicySample, load_label_file, pseudo_label, write_label_file

__all__ = [
    "PolicyModel",
    "PolicySample",
    "Vocabulary",
    "discretize_actions",
    "finetune_policy",
    "load_label_file",
    "load_policy_checkpoint",
    "pretrain_policy",
    "pseudo_label",
    "train_lam",
    "undiscretize",
    "write_label_file",
]
