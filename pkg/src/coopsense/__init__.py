"""Hybrid information-signal domain cooperative sensing over a shared wireless backhaul."""
from .backhaul import (AllocationResult, McscaConfig, bit_realloc, build_mac_region, greedy_select,
                       mcsca_run, min_channel_uses)
from .estimation import LocalEstimate, crlb_alpha, crlb_tau, estimate_delay
from .exceptions import (CoopSenseError, DegenerateWindowError, InfeasibleEpsilonError, UnlocalizableError)
from .fusion import (build_fim_context, crlb_theta, epsilon_star, fc_ml_localize, fim, info_weight)
from .harness import ExperimentConfig, generate_scenario, run_pipeline_once, run_sweep
from .klt import KltCodec, build_window, lloyd_codebook, quantize_window, reconstruct, window_covariance
from .scene import EchoRecord, Scene, Waveform, synthesize_echo

__version__ = "0.1.0"

__all__ = [
    "AllocationResult", "CoopSenseError", "DegenerateWindowError", "EchoRecord", "ExperimentConfig",
    "InfeasibleEpsilonError", "KltCodec", "LocalEstimate", "McscaConfig", "Scene", "UnlocalizableError",
    "Waveform", "bit_realloc", "build_fim_context", "build_mac_region", "build_window", "crlb_alpha",
    "crlb_tau", "crlb_theta", "epsilon_star", "estimate_delay", "fc_ml_localize", "fim", "generate_scenario",
    "greedy_select", "info_weight", "lloyd_codebook", "mcsca_run", "min_channel_uses", "quantize_window",
    "reconstruct", "run_pipeline_once", "run_sweep", "synthesize_echo", "window_covariance",
]
