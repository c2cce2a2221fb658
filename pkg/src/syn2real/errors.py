"""Exception taxonomy shared across the package.

``ValidationError`` covers bad user input (configs, CLI arguments, malformed
files) and maps to exit status 1; everything else that aborts a run maps to
exit status 2.
"""


class Syn2RealError(Exception):
    """Base class for all package errors."""


class ValidationError(Syn2RealError):
    """Invalid user-supplied input (config file, CLI argument, data file)."""


class ConfigError(ValidationError):
    """Malformed or inconsistent run configuration."""


class ShapeError(Syn2RealError):
    """Tensor operation received incompatible shapes."""


class NonFiniteError(Syn2RealError):
    """A tensor value or op output contained NaN or Inf."""


class GraphError(Syn2RealError):
    """Misuse of the autodiff graph (non-scalar loss, consumed graph, ...)."""


class TrainingError(Syn2RealError):
    """A training-stage contract could not be met (e.g. pretraining budget)."""


class StageError(Syn2RealError):
    """Wraps a failure with the name of the harness stage that caused it."""

    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"stage '{stage}' failed: {cause}")
        self.stage = stage
        self.cause = cause
