"""Non-affine normalizing flows with mixture-of-logistics CDF transforms,
trained by probability density distillation from an autoregressive teacher."""

__version__ = "0.1.0"

from .distributions import (Logistic, MoLParams, mol_cdf, mol_log_pdf, mol_pdf, mol_quantile,
                            sample_logistic, sample_mol)
from .flow import (FlowLayer, FlowStack, TransformParams, nonaffine_forward, nonaffine_inverse,
                   stack_forward, student_log_density, transform_forward)
from .conditioner import ConditionerConfig, ParamVector, load_checkpoint, save_checkpoint
from .teacher import Teacher, teacher_fit_mle, teacher_log_density, teacher_sample
from .distill import (KldEstimate, cross_entropy_mc, distill, entropy_affine_analytic, entropy_mc,
                      kld_estimate, power_loss)
from .signal import (StftConfig, Waveform, l2_spectral_distance, make_synthetic_corpus,
                     stft_magnitude, wav_read, wav_write)
from .errors import MolflowError, NumericalError, UserError

__all__ = [
    "Logistic", "MoLParams", "mol_cdf", "mol_log_pdf", "mol_pdf", "mol_quantile",
    "sample_logistic", "sample_mol", "FlowLayer", "FlowStack", "TransformParams",
    "nonaffine_forward", "nonaffine_inverse", "stack_forward", "student_log_density",
    "transform_forward", "ConditionerConfig", "ParamVector", "load_checkpoint", "save_checkpoint",
    "Teacher", "teacher_fit_mle", "teacher_log_density", "teacher_sample", "KldEstimate",
    "cross_entropy_mc", "distill", "entropy_affine_analytic", "entropy_mc", "kld_estimate",
    "power_loss", "StftConfig", "Waveform", "l2_spectral_distance", "make_synthetic_corpus",
    "stft_magnitude", "wav_read", "wav_write", "MolflowError", "NumericalError", "UserError",
]
