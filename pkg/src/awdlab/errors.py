"""Exception types shared across the package."""


class AwdlabError(Exception):
    """Base class for package errors."""


class ConfigError(AwdlabError):
    """Invalid configuration value or unknown key."""


class DimensionError(AwdlabError):
    """Tensor shapes incompatible with the requested operation."""


class StateError(AwdlabError):
    """Operation requires state that is missing or stale (e.g. gradients)."""


class NonFiniteGradientError(AwdlabError):
    """A gradient turned NaN or infinite during optimization."""

    def __init__(self, step: int, tensor: str):
        self.step = step
        self.tensor = tensor
        super().__init__(f"non-finite gradient at step {step} in tensor '{tensor}'")


class EstimationError(AwdlabError):
    """A trace did not contain enough usable data for estimation."""


class StratificationError(AwdlabError):
    """A stratified split could not be formed."""
