from .budget import DEFAULT_EPSILON, PerturbationBound, PoisonBudget, choose_rows
from .dump import dump_samples
from .gc import (
    TARGET_GROUPS,
    GcConfig,
    GcResult,
    GradPcResult,
    canceling_grad,
    canceling_loss,
    gradient_canceling,
    gradpc_targets,
    nas_gc,
)
from .labels import clf, clf_from_logits, rlf, train_surrogate
from .noise import gaussian_noise

ATTACKS = ("rlf", "clf", "noise", "gc")

__all__ = [
    "DEFAULT_EPSILON", "PerturbationBound", "PoisonBudget", "choose_rows", "dump_samples",
    "TARGET_GROUPS", "GcConfig", "GcResult", "GradPcResult", "canceling_grad", "canceling_loss",
    "gradient_canceling", "gradpc_targets", "nas_gc", "clf", "clf_from_logits", "rlf",
    "train_surrogate", "gaussian_noise", "ATTACKS",
]
