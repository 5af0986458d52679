"""Exception types raised by napmat."""


class NapmatError(Exception):
    pass


class ShapeError(NapmatError, ValueError):
    """Array or grid dimensions are inconsistent with the operation."""


class ConfigError(NapmatError, ValueError):
    """A configuration value is unknown, malformed or out of range."""


class InputError(NapmatError, ValueError):
    """Input data (an image, a token file) is unusable."""


class ImageFormatError(InputError):
    """A PPM/PGM file could not be parsed."""


class PlanError(NapmatError, RuntimeError):
    """A merge plan violates its own bookkeeping invariants."""
