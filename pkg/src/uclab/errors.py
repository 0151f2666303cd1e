"""Exception types shared across the package."""


class GeometryError(ValueError):
    """A mask, stencil, or geometric construction is unusable as requested."""


class SceneError(ValueError):
    """A rupture scene violates one of its structural requirements."""


class ConfigError(ValueError):
    """An experiment configuration failed validation.

    The message carries the dotted path of the offending field.
    """


class CFLError(RuntimeError):
    """Requested time step exceeds the stability limit of the explicit scheme."""
