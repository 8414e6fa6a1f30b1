"""rtda: robust-training engine and benchmark harness.

Seven training objectives (plain, adversarial, augmentation-consistency,
and their combinations) over a compact differentiable residual CNN, with
from-scratch reverse-mode autodiff, PGD attacks, AugMix-style
augmentation, contrast-shift evaluation, and a deterministic CLI.
"""

from ._kernels import backend
from .attacks import AttackSpec, pgd_attack, project_ball
from .augment import (AugmixSpec, ContrastSpec, apply_chain, augmix_sample,
                      contrast_shift, shift_testset)
from .autodiff import Tensor, finite_diff_check
from .data import (LabeledDataset, SyntheticSpec, export_dataset,
                   generate_synthetic, load_dataset, split_dataset)
from .evaluate import (EvalConfig, EvalReport, adversarial_accuracy, brier_score,
                       contrast_histogram, cross_validate, epsilon_sweep,
                       select_epsilon, shifted_brier)
from .models import (Model, ModelConfig, ParameterSet, SgdConfig, build_model,
                     load_params, lr_at_epoch, save_params, sgd_step)
from .objectives import (KINDS, LossBreakdown, ObjectiveSpec, jsd,
                         mean_distribution, objective_loss)
from .training import train_model

__version__ = "0.1.0"

__all__ = [
    "AttackSpec", "AugmixSpec", "ContrastSpec", "EvalConfig", "EvalReport",
    "KINDS", "LabeledDataset", "LossBreakdown", "Model", "ModelConfig",
    "ObjectiveSpec", "ParameterSet", "SgdConfig", "SyntheticSpec", "Tensor",
    "adversarial_accuracy", "apply_chain", "augmix_sample", "backend",
    "brier_score", "build_model", "contrast_histogram", "contrast_shift",
    "cross_validate", "epsilon_sweep", "export_dataset", "finite_diff_check",
    "generate_synthetic", "jsd", "load_dataset", "load_params", "lr_at_epoch",
    "mean_distribution", "objective_loss", "pgd_attack", "project_ball",
    "save_params", "select_epsilon", "sgd_step", "shift_testset",
    "shifted_brier", "split_dataset", "train_model",
]
