from .figures import (
    plot_accuracy_delta,
    plot_clusters,
    plot_metrics_vs_workers,
    plot_predictive,
    plot_timings,
)
from .io import ArtifactError

__version__ = "0.1.0"

__all__ = [
    "ArtifactError",
    "plot_accuracy_delta",
    "plot_clusters",
    "plot_metrics_vs_workers",
    "plot_predictive",
    "plot_timings",
]
