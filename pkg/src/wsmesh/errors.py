"""Exception hierarchy. CLI maps these to exit codes (config 2, numerical 3)."""


class WsmError(Exception):
    """Base class for all wsmesh errors."""


class ConfigError(WsmError):
    """Invalid or inconsistent experiment configuration."""


class SimulationError(WsmError):
    """Path simulation produced a non-finite state."""


class DensityError(WsmError):
    """Transition density undefined or singular at the requested point."""


class CapabilityError(WsmError):
    """Operation requires a model capability that is not available."""


class DegenerateDenominatorError(WsmError):
    """All mesh density summands vanished for some grid point."""


class RewardError(WsmError):
    """Reward function returned a negative or non-finite value."""


class ParameterSelectionError(WsmError):
    """Accuracy target incompatible with the supplied problem constants."""


class ContaminationError(WsmError):
    """Evaluation paths share a seed record with the training paths."""


class IntegrationError(WsmError):
    """Adaptive quadrature failed to converge."""


class DomainError(WsmError):
    """Point outside the invertible range of a transform."""


class ExpansionRegimeError(WsmError):
    """Step size too large for the truncated density expansion."""


class EnvelopeError(WsmError):
    """Acceptance-rejection envelope violated at a sampled point."""
