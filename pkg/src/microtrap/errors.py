"""Exception hierarchy. The CLI maps each family to an exit code."""


class MicrotrapError(Exception):
    """Base class for all package errors."""


class ConfigError(MicrotrapError, ValueError):
    """Malformed or semantically invalid configuration (exit code 2)."""


class PhysicsError(MicrotrapError, ValueError):
    """Inputs outside the validity range of a physical model (exit code 3)."""


class DomainError(PhysicsError):
    """Argument outside the mathematical domain of an operation."""


class AddressingError(PhysicsError):
    """A lens cannot be addressed: outside the mapped subset or pixel grid."""


class ModelValidityError(PhysicsError):
    """Wavelength too close to resonance, or blue detuned."""


class SequenceError(PhysicsError):
    """Pulse sequence is inconsistent (e.g. echo pulse after readout)."""


class TimingError(PhysicsError):
    """Mask changes faster than the modulator can switch."""


class EmptySelectionError(MicrotrapError, ValueError):
    """A site filter matched nothing."""
