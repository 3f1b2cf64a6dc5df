"""Backhaul resource allocation: MAC region, MCSCA bit allocation, node selection."""
from .mac import MacRegion, build_mac_region, min_channel_uses, relaxed_channel_uses
from .mcsca import (AllocationResult, BitAllocationProblem, McscaConfig, SolverIterate, inner_solve,
                    mcsca_run, surrogate_weight, write_trace_csv)
from .selection import bit_realloc, greedy_select

__all__ = [
    "AllocationResult", "BitAllocationProblem", "MacRegion", "McscaConfig", "SolverIterate",
    "bit_realloc", "build_mac_region", "greedy_select", "inner_solve", "mcsca_run",
    "min_channel_uses", "relaxed_channel_uses", "surrogate_weight", "write_trace_csv",
]
