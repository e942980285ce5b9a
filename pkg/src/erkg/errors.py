"""Exception types shared across the package."""


class ErkgError(Exception):
    """Base class for package-specific errors."""


class ParseError(ErkgError):
    """A text input file violates its declared format."""


class VocabError(ErkgError):
    """An entity or relation name is missing from a fixed vocabulary."""


class ConfigError(ErkgError):
    """Invalid configuration, flags, or an unsupported combination."""


class CheckpointError(ErkgError):
    """A checkpoint file is corrupt, truncated, or incompatible."""


class NumericError(ErkgError):
    """A non-finite value appeared during optimization."""


class InfeasibleError(ErkgError):
    """No restart of a constrained minimization reached feasibility."""
