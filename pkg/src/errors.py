from dataclasses import dataclass


class ConfigError(ValueError):
    """Bad configuration or command-line usage."""


class DataError(ValueError):
    """Input data that cannot be processed."""


class InvalidManifestError(DataError):
    pass


class ShapeError(DataError):
    pass


class ModelInputError(DataError):
    pass


class NonFiniteGradientError(DataError):
    pass


class CheckpointError(DataError):
    pass


class SynthError(DataError):
    pass


class ExampleError(DataError):
    """A sentence that cannot be turned into a training example."""


@dataclass(frozen=True)
class Diagnostic:
    """Non-fatal problem found while reading an input."""

    source: str
    line: int
    message: str

    def __str__(self) -> str:
        return f"{self.source}:{self.line}: {self.message}"
