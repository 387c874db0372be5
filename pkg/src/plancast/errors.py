"""Exception types shared across the package.

The CLI maps these onto process exit codes: configuration problems exit
with 2, data problems with 3, and numerical divergence with 4.
"""


class ConfigError(ValueError):
    """A run configuration is malformed or internally inconsistent."""


class AnnotationError(ValueError):
    """An annotation file or record violates the corpus schema."""


class DivergenceError(RuntimeError):
    """Training produced a non-finite loss or parameter."""


class SearchDeadEnd(RuntimeError):
    """Every candidate extension of a beam scored minus infinity."""

    def __init__(self, prefix):
        self.prefix = tuple(prefix)
        super().__init__(f"no finite-score extension for prefix {self.prefix}")


class GeneratorError(RuntimeError):
    """The external text generator failed after all retries.

    Carries whatever partial plan had been assembled before the failure.
    """

    def __init__(self, message, partial_plan=()):
        self.partial_plan = tuple(partial_plan)
        super().__init__(message)
