"""Model-based multi-agent RL with observation-loss recovery.

A latent world model generates training trajectories and reconstructs
missing observations, a correction network fuses cross-agent information
to refine those reconstructions, and a recurrent MAPPO policy acts on
local observations only (centralized training, decentralized execution).
"""

import os

# Tiny float64 matrices dominate this workload; threaded BLAS dispatch
# costs more than it saves.  Must be set before numpy initializes.
os.environ.setdefault("OMP_NUM_THREADS", "1")
os.environ.setdefault("OPENBLAS_NUM_THREADS", "1")
os.environ.setdefault("MKL_NUM_THREADS", "1")

from rmio.errors import (  # noqa: E402
    ContractViolationError,
    DimensionError,
    EmptyBufferError,
    NumericError,
)

__all__ = [
    "ContractViolationError",
    "DimensionError",
    "EmptyBufferError",
    "NumericError",
]

__version__ = "0.1.0"
