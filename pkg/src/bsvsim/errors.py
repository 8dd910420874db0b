"""Exception types raised across the package."""


class BSVError(Exception):
    """Base class for all package errors."""


class WavelengthRangeError(BSVError, ValueError):
    """A wavelength falls outside the validity window of a dispersion fit."""


class NoPhaseMatchingError(BSVError):
    """No quasi-phase-matched pair exists on the requested energy-conservation curve."""


class DesignError(BSVError, ValueError):
    """Invalid poling pattern, hologram or pump specification."""


class GridMismatchError(BSVError, ValueError):
    """Arrays that must share a frequency grid do not."""


class DivergenceError(BSVError, FloatingPointError):
    """Non-finite values appeared while integrating the coupled-mode equations."""

    def __init__(self, message, z=None, omega=None, family=None):
        super().__init__(message)
        self.z = z
        self.omega = omega
        self.family = family


class UnsupportedGraphError(BSVError):
    """Hamiltonian graph outside the self-inverse (G = G^-1) case."""


class SingularMatrixError(BSVError, ValueError):
    """A matrix that must be inverted is singular."""


class NRFUndefinedError(BSVError, ZeroDivisionError):
    """The noise reduction factor is undefined because the windows hold no photons."""


class ConfigError(BSVError, ValueError):
    """Invalid experiment configuration; ``path`` names the offending field."""

    def __init__(self, path, message):
        super().__init__(f"{path}: {message}")
        self.path = path
        self.detail = message
