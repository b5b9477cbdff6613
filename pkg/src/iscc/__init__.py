"""Covert symbol-level ISCC waveform design.

Numba-compiled kernels are used by default; set ``ISCC_NUMBA=0`` before
import to run the pure-numpy fallback.
"""
from ._accel import backend_name
from .array_model import (Constellation, NoiseShapingAux, Scene, SymbolFrame, SystemConfig, TargetSpec, UserSpec,
                          draw_noise_reference, draw_symbol_frame, rng_stream, sample_rician_channels,
                          steering_matrix, steering_vector)
from .harness import (BFPrecoder, ExperimentPlan, bf_baseline, eavesdropper_eval, monte_carlo_ser, run_experiment,
                      slp_baseline)
from .metrics import (Waveform, beampattern, js_divergence, min_scnr, noise_shaping_residual, psk_safety_margin,
                      psk_sep_bound, q_func, q_inv, scnr, wilson_interval)
from .mm import SolveOptions, SolveReport
from .pda import PenaltySchedule, StopRule, pda_solve
from .psk import qos_threshold_psk, solve_iscc_psk
from .qam import qam_thresholds, solve_iscc_qam
from .robust import UncertaintyModel, solve_robust_psk, solve_robust_qam

__version__ = "0.1.0"

__all__ = [
    "BFPrecoder", "Constellation", "ExperimentPlan", "NoiseShapingAux", "PenaltySchedule", "Scene", "SolveOptions",
    "SolveReport", "StopRule", "SymbolFrame", "SystemConfig", "TargetSpec", "UncertaintyModel", "UserSpec",
    "Waveform", "backend_name", "beampattern", "bf_baseline", "draw_noise_reference", "draw_symbol_frame",
    "eavesdropper_eval", "js_divergence", "min_scnr", "monte_carlo_ser", "noise_shaping_residual", "pda_solve",
    "psk_safety_margin", "psk_sep_bound", "q_func", "q_inv", "qam_thresholds", "qos_threshold_psk", "rng_stream",
    "run_experiment", "sample_rician_channels", "scnr", "slp_baseline", "solve_iscc_psk", "solve_iscc_qam",
    "solve_robust_psk", "solve_robust_qam", "steering_matrix", "steering_vector", "wilson_interval",
]
