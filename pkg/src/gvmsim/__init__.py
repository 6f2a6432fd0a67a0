"""Trace-driven simulator of GPU memory virtualization.

Models a multi-application GPU with per-core L1 TLBs, a shared L2 TLB, a
multi-level page-table walker, and demand paging over a CPU-GPU bus, and
compares three memory managers: a baseline round-robin allocator, a
contiguity-conserving allocator with in-place large-page coalescing,
splintering and compaction, and an ideal (always-hit) TLB.
"""

from .config import (MODE_GPU_MMU, MODE_IDEAL, MODE_MOSAIC, RunConfig,
                     load_run_config, run_config_from_dict)
from .engine import MetricSet, SimEngine, run, weighted_speedup
from .errors import (ConfigError, ContractViolation, MapError,
                     OutOfMemoryError, ProtectionError, SimError)

__all__ = [
    "MODE_GPU_MMU", "MODE_IDEAL", "MODE_MOSAIC",
    "RunConfig", "load_run_config", "run_config_from_dict",
    "MetricSet", "SimEngine", "run", "weighted_speedup",
    "SimError", "ConfigError", "MapError", "ContractViolation",
    "ProtectionError", "OutOfMemoryError",
]

__version__ = "0.1.0"
