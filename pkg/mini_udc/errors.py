"""Exception hierarchy for mini_udc.

Every failure the library raises on purpose derives from :class:`UdcError`, so
callers (and the ``udc`` driver) can separate expected domain errors from bugs.
"""


class UdcError(Exception):
    pass


class InvalidInputError(UdcError, ValueError):
    """Malformed numeric input: negative distortions, off-simplex p, bad lengths."""


class DomainError(UdcError, ValueError):
    """Argument outside the domain of an encoder (Elias i < 4, field overflow)."""


class SizeError(UdcError):
    """An enumeration guard was exceeded.

    The message always carries an advisory naming the knob to turn.
    """


class ConvergenceError(UdcError):
    def __init__(self, message: str, residual: float):
        super().__init__(f"{message} (residual={residual:.3e})")
        self.residual = residual


class DecodeError(UdcError):
    pass


class ClassLookupError(UdcError, LookupError):
    """Fingerprint not present in a frozen class table."""


class PreconditionError(UdcError):
    pass


class ConfigError(UdcError):
    pass


class EmptySampleError(UdcError, ValueError):
    pass
