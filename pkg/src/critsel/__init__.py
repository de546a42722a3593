"""critsel: critical-step selection and loss-masked dataset curation.

Identifies the steps of expert agent trajectories that matter most for
episode success (via an oracle LLM, perplexity ranking, random draws, or
Monte-Carlo value gaps), emits loss-masked imitation-learning datasets that
keep the full trajectory as context, and verifies the masked training
objective at desk scale with built-in maze environments, an exact value
oracle, and a log-linear policy trainer.
"""

from .errors import CritselError
from .trajectory import (
    CriticalSelection,
    Dataset,
    Step,
    StepCategory,
    Trajectory,
    apply_selection,
    history_prefix,
    selection_cap,
    validate_trajectory,
)

__version__ = "0.1.0"

__all__ = [
    "CritselError",
    "CriticalSelection",
    "Dataset",
    "Step",
    "StepCategory",
    "Trajectory",
    "apply_selection",
    "history_prefix",
    "selection_cap",
    "validate_trajectory",
    "__version__",
]
