"""Exception types shared across the package."""


class FedzoError(Exception):
    """Base class for package errors."""


class ShapeError(FedzoError):
    """Tensor or layer shapes are incompatible."""


class NonFiniteError(FedzoError):
    """A NaN or Inf appeared where only finite values are allowed."""


class StaleTraceError(FedzoError):
    """A forward trace was paired with different params/mask than produced it."""


class LayerCollapseError(FedzoError):
    """A pruning step would remove every weight of a layer."""

    def __init__(self, layer_index: int, kind: str):
        self.layer_index = layer_index
        self.kind = kind
        super().__init__(f"pruning would collapse layer {layer_index} ({kind})")


class PartitionError(FedzoError):
    """Dirichlet partitioning could not give every device at least one sample."""


class ConfigError(FedzoError):
    """Invalid or unknown experiment configuration."""


class DatasetError(FedzoError):
    """Missing, truncated, or corrupt dataset files."""
