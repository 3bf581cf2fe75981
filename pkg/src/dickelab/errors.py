"""Exception types raised across the package."""


class DickeLabError(Exception):
    """Base class for all dickelab errors."""


class ParameterError(DickeLabError, ValueError):
    """A model parameter violates its admissible range."""


class PackingError(DickeLabError, ValueError):
    """State packing failed: broken conjugation symmetry or wrong length."""


class IntegrationError(DickeLabError, RuntimeError):
    """The ODE integrator failed before reaching the requested time."""


class NoCrossingError(DickeLabError, RuntimeError):
    """Stability indicator has the same sign at both ends of the bracket."""


class RealCrossingError(DickeLabError, RuntimeError):
    """Eigenvalues cross the imaginary axis with zero frequency (not oscillatory)."""


class NotPeriodicError(DickeLabError, RuntimeError):
    """Trajectory tail lacks the rotating constant-amplitude structure."""


class MultiModeError(DickeLabError, RuntimeError):
    """More than one mode stays active in the trajectory tail."""


class HorizonError(DickeLabError, ValueError):
    """Time horizon too short for transients to have decayed."""


class MissingCycleError(DickeLabError, ValueError):
    """A limit-cycle record is required but was not supplied."""


class BlochNormError(DickeLabError, ValueError):
    """Bloch vector norm exceeds 1 beyond tolerance; not a quantum state."""


class NotPositiveError(DickeLabError, ValueError):
    """Matrix fails positive semidefiniteness beyond tolerance."""


class DimensionError(DickeLabError, ValueError):
    """Hilbert-space dimension exceeds the cap or is inconsistent."""


class CutoffError(DickeLabError, ValueError):
    """Fock cutoff too small for the requested coherent amplitude."""


class TruncationLeakError(DickeLabError, RuntimeError):
    """Population leaked into the top Fock level during evolution."""


class SameSiteError(DickeLabError, ValueError):
    """Connected correlator requires two distinct sites."""


class ConfigError(DickeLabError, ValueError):
    """Run configuration is malformed or contains unknown keys."""
