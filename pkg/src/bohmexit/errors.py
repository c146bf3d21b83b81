"""Exception hierarchy shared by all modules."""


class BohmExitError(Exception):
    """Base class for every error raised by the package."""


class InvalidParameterError(BohmExitError, ValueError):
    """A constructor or operation received a parameter outside its domain."""


class ArityError(InvalidParameterError):
    """An operation was called with the wrong number of particles or radii."""


class DomainError(InvalidParameterError):
    """Evaluation requested outside the region where the operation is defined."""


class SamplingDegenerateError(BohmExitError):
    """Rejection sampling accepts too rarely to be trusted."""


class DomainOverflowError(BohmExitError):
    """A grid wave function reached the edge of its grid."""


class NotAsymptoticError(BohmExitError):
    """The wave still overlaps the potential, so no outgoing asymptote exists yet."""


class NodeEncounterError(BohmExitError):
    """Trajectory integration stalled next to a node of the wave function.

    Attributes
    ----------
    t, q : last state that was accepted before the step size collapsed.
    """

    def __init__(self, message, t=None, q=None):
        super().__init__(message)
        self.t = t
        self.q = q


class NoExitError(BohmExitError):
    """A trajectory never crossed the detector sphere within its horizon."""


class HorizonTooShortError(BohmExitError):
    """Flux beyond the time horizon is larger than the requested tolerance."""


class AccuracyError(BohmExitError):
    """A quadrature could not certify the requested accuracy."""


class ExperimentDegenerateError(BohmExitError):
    """Too many trajectories failed for the ensemble statistics to be meaningful."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class ConfigError(BohmExitError, ValueError):
    """Configuration could not be parsed or validated.

    ``field`` names the offending key (dotted path), ``line`` the source line
    when the failure comes from the parser.
    """

    def __init__(self, message, field=None, line=None):
        super().__init__(message)
        self.field = field
        self.line = line
