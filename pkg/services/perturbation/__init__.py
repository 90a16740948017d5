from services.perturbation.anneal import AnnealSchedule, GumbelConfig, anneal_value, temperatures
from services.perturbation.generator import PerturbationGenerator
from services.perturbation.gmm_sampler import PerturbationBatch, SamplerNoise, sample_exact, sample_perturbations
from services.perturbation.gumbel import gumbel_softmax_sample
from services.perturbation.upsample import Upsampler, UpsamplerConfig, apply_budget, bicubic_kernel, upsample

__all__ = [
    "AnnealSchedule",
    "GumbelConfig",
    "anneal_value",
    "temperatures",
    "PerturbationGenerator",
    "PerturbationBatch",
    "SamplerNoise",
    "sample_exact",
    "sample_perturbations",
    "gumbel_softmax_sample",
    "Upsampler",
    "UpsamplerConfig",
    "apply_budget",
    "bicubic_kernel",
    "upsample",
]
