class ConfigError(ValueError):
    """Invalid bounds, swarm settings, or run configuration."""


class DescriptorError(ValueError):
    """Malformed architecture descriptor text."""


class ShapeError(ValueError):
    """Tensor or filter shapes that cannot be combined."""


class TrainingError(RuntimeError):
    """Non-finite values produced during training."""
