"""fedzo: federated gradient-free training with NTK foresight pruning,
simulated deterministically in process."""

__version__ = "0.1.0"
