"""Best-data-chunk segmentation and policy learning for panels of trajectories."""

__version__ = "0.1.0"
