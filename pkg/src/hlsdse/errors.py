"""Exception types shared across the package."""


class HlsDseError(Exception):
    """Base class for package errors."""


class SpaceValidationError(HlsDseError, ValueError):
    """A design-space declaration violates a structural invariant."""


class ConfigError(HlsDseError, ValueError):
    """A pragma configuration is inconsistent with its design space."""


class InfeasibleSiteError(HlsDseError, ValueError):
    """All options at a decision site were masked out during sampling."""


class MalformedGraphError(HlsDseError, ValueError):
    """Graph JSON has missing, unknown, or ill-typed fields."""


class DuplicateNodeError(MalformedGraphError):
    """Two nodes share one id."""


class DanglingEdgeError(MalformedGraphError):
    """An edge references a node id that does not exist."""


class EmbeddingError(HlsDseError, ValueError):
    """A graph cannot be embedded under the given embedding config."""


class ShapeError(HlsDseError, ValueError):
    """Tensor operands have incompatible shapes."""


class AutodiffError(HlsDseError, RuntimeError):
    """Misuse of the reverse-mode tape (non-scalar root, double backward)."""


class KernelModelError(HlsDseError, ValueError):
    """A kernel description is malformed or inconsistent with its space."""


class BackendError(HlsDseError, RuntimeError):
    """An external synthesis backend failed outside the modeled outcomes."""


class RunConfigError(HlsDseError, ValueError):
    """Invalid experiment or loop configuration."""
