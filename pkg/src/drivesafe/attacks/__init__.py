from .effects import EffectKind, EffectModel, inject_effect, inject_effects, perturbation_effect
from .patch import (
    PatchOutOfBounds,
    PatchSpec,
    PatchTrainingConfig,
    Placement,
    PlacementPolicy,
    apply_patch,
    train_patch,
)
from .pgd import PerturbationConfig, pgd_attack, pgd_perturb

__all__ = [
    "EffectKind",
    "EffectModel",
    "PatchOutOfBounds",
    "PatchSpec",
    "PatchTrainingConfig",
    "PerturbationConfig",
    "Placement",
    "PlacementPolicy",
    "apply_patch",
    "inject_effect",
    "inject_effects",
    "perturbation_effect",
    "pgd_attack",
    "pgd_perturb",
    "train_patch",
]
