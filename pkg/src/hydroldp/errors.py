"""Exception types shared across the package."""


class HydroLdpError(Exception):
    """Base class for all package errors."""


class InvalidField(HydroLdpError):
    """Field data is malformed (non-finite entries, wrong shape, bad metadata)."""


class MissingBoundaryCondition(HydroLdpError):
    """An operation needing vertical ghost layers was called on a field without a bc tag."""


class ParabolicityViolation(HydroLdpError):
    """Noise family violates the ellipticity margin (nu >= 2)."""


class ModeMismatch(HydroLdpError):
    """Operation requires the other noise interpretation (Ito vs Stratonovich)."""


class BlowupDetected(HydroLdpError):
    """A state norm exceeded the blowup threshold, or a non-finite value appeared.

    Carries the name of the offending term and the step index when known.
    """

    def __init__(self, term: str, step: int | None = None):
        self.term = term
        self.step = step
        at = f" at step {step}" if step is not None else ""
        super().__init__(f"blowup detected in '{term}'{at}")


class SolverError(HydroLdpError):
    """Linear solve failed (singular or ill-conditioned implicit system)."""


class ControlBudgetExceeded(HydroLdpError):
    """Control path L2(0,T; l2) norm exceeds the declared budget."""


class Diverged(HydroLdpError):
    """Optimizer failed to converge; carries the last iterate."""

    def __init__(self, message: str, last_iterate=None, trace=None):
        self.last_iterate = last_iterate
        self.trace = trace
        super().__init__(message)


class ConfigError(HydroLdpError):
    """Invalid run configuration; message names the offending key path."""

    def __init__(self, key: str, message: str):
        self.key = key
        super().__init__(f"config key '{key}': {message}")
