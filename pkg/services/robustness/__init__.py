from services.robustness.attacks import ar_cw, ar_pgd
from services.robustness.entropy import entropy_ratio, mixture_statistics
from services.robustness.estimators import mc_half_width, nppr_estimate, perturbed_correctness, pr_estimate
from services.robustness.margin import margin_loss
from services.robustness.report import EvaluationSettings, evaluate_robustness
from services.robustness.types import ExperimentKey, PerturbationLaw, RobustnessReport

__all__ = [
    "ar_cw",
    "ar_pgd",
    "entropy_ratio",
    "mixture_statistics",
    "mc_half_width",
    "nppr_estimate",
    "perturbed_correctness",
    "pr_estimate",
    "margin_loss",
    "EvaluationSettings",
    "evaluate_robustness",
    "ExperimentKey",
    "PerturbationLaw",
    "RobustnessReport",
]
