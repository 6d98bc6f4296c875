"""Figure rendering for predator-prey training runs."""

from .frames import RunLogFrame, load_runs, read_belief_records
from .figures import (
    plot_correlation,
    plot_learning_curves,
    plot_motion_beliefs,
    plot_reward_beliefs,
)

__version__ = "0.1.0"

__all__ = [
    "RunLogFrame",
    "load_runs",
    "read_belief_records",
    "plot_learning_curves",
    "plot_motion_beliefs",
    "plot_reward_beliefs",
    "plot_correlation",
    "__version__",
]
