"""Digital over-the-air SUM computation: joint channel decoding and aggregation."""

__version__ = "0.1.0"

from .aggregate import QuantizerConfig, dequantize, quantize_stochastic, sum_to_average
from .analysis import (
    ConvergenceParams,
    SweepSpec,
    analytic_sum_ber,
    exact_sum_ber,
    run_sweep,
    theorem1_bound,
)
from .conv import ConvCode, bcjr_sum_decode, conv_encode, conv_psud_decode, fsjd_decode, rsjd_decode
from .flsim import FLConfig, run_fl
from .ldpc import ParityCheckMatrix, builtin_matrix, ldpc_encode, ldpc_jt_decode, ldpc_psud_decode
from .phy import FrameConfig, UserChannel, soft_joint_likelihoods, superimpose
from .scenarios import PhaseScenario

__all__ = [
    "ConvCode", "ConvergenceParams", "FLConfig", "FrameConfig", "ParityCheckMatrix",
    "PhaseScenario", "QuantizerConfig", "SweepSpec", "UserChannel", "analytic_sum_ber",
    "bcjr_sum_decode", "builtin_matrix", "conv_encode", "conv_psud_decode", "dequantize",
    "exact_sum_ber", "fsjd_decode", "ldpc_encode", "ldpc_jt_decode", "ldpc_psud_decode",
    "quantize_stochastic", "rsjd_decode", "run_fl", "run_sweep", "soft_joint_likelihoods",
    "sum_to_average", "superimpose", "theorem1_bound",
]
