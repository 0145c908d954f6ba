"""Exception taxonomy shared by all fluxlab modules.

Every failure mode raised on purpose derives from FluxlabError so callers
(and the CLI) can distinguish deliberate diagnostics from genuine bugs.
"""


class FluxlabError(Exception):
    """Base class for all deliberate fluxlab failures."""


class ConfigError(FluxlabError):
    """Malformed configuration file or invalid CLI arguments."""


class DomainExceeded(FluxlabError):
    """A potential vector (or a finite-difference stencil point) left the
    admissible domain of the backend."""


class NonFinite(FluxlabError):
    """A NaN or infinity appeared where a finite number was required."""


class IllConditioned(FluxlabError):
    """Richardson extrapolation levels disagree far beyond tolerance,
    signalling an unreliable derivative."""


class InsufficientSamples(FluxlabError):
    """A statistical check was asked to run on fewer than two states."""


class NoConvergence(FluxlabError):
    """Fixed-point or Newton iteration hit its iteration cap."""


class DrivingUnbounded(FluxlabError):
    """TBA driving term is unbounded below, so no pseudo-energy exists."""


class UnknownChargeIndex(FluxlabError, KeyError):
    """Charge index not registered with the model or backend."""


class SingularSystem(FluxlabError):
    """Dressing (or another linear) system is numerically singular."""


class MemoryBudget(FluxlabError):
    """Requested dense object would exceed the configured memory budget."""


class InvolutionFailure(FluxlabError):
    """Charges supposed to commute fail to do so beyond tolerance."""


class RingInconsistency(FluxlabError):
    """Telescoped currents violate the periodic consistency condition."""


class DimensionMismatch(FluxlabError):
    """Array shapes or charge sets do not line up."""


class InversionFailure(FluxlabError):
    """State inversion (averages -> potentials) failed: no admissible
    solution or Newton diverged."""


class CFLViolation(FluxlabError):
    """Time step exceeds the stable CFL bound."""


class TimelikeViolation(FluxlabError):
    """Potential vector is not timelike (rest inverse temperature would be
    imaginary)."""


class CheckFailure(FluxlabError):
    """At least one requested check failed (CLI exit code 1)."""
