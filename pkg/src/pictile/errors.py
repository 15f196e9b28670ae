"""Exception hierarchy shared by the toolkit."""


class PicError(Exception):
    """Base class for all toolkit errors."""


class ConfigError(PicError, ValueError):
    """Invalid or inconsistent configuration."""


class CapacityError(PicError):
    """A requested allocation exceeds the configured budget."""


class CorruptStateError(PicError, ValueError):
    """Particle state is non-finite or otherwise unusable."""


class CflViolation(PicError, ValueError):
    """A timestep would move some particle more than one cell."""


class GpmaError(PicError):
    """Logic error or broken invariant in the gapped index structure."""
