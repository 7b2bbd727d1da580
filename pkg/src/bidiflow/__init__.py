"""Bidirectional, occlusion-aware optical flow by direct energy minimisation."""

__version__ = "0.1.0"

from bidiflow._backend import BACKEND_NAME  # noqa: E402
from bidiflow.energy import LossConfig, total_loss  # noqa: E402
from bidiflow.grid import FlowField  # noqa: E402
from bidiflow.metrics import EvalReport, evaluate  # noqa: E402
from bidiflow.solver import SolverConfig, solve  # noqa: E402

__all__ = [
    "BACKEND_NAME", "EvalReport", "FlowField", "LossConfig", "SolverConfig",
    "evaluate", "solve", "total_loss", "__version__",
]
