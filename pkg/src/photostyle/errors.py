"""Exception taxonomy shared across the package.

The CLI maps these onto exit codes: configuration and input problems
(ConfigError, file-format errors raised before any optimization) exit
with 2, anything that fails mid-run exits with 1.
"""


class PhotoStyleError(Exception):
    """Base class for all errors raised by this package."""


class PngDecodeError(PhotoStyleError):
    """The PNG byte stream is corrupt or truncated."""


class UnsupportedPngError(PhotoStyleError):
    """The PNG is valid but uses a feature outside the supported subset."""


class FeatureFileError(PhotoStyleError):
    """A FEAT1 feature file is malformed or incomplete."""


class ExtractorError(PhotoStyleError):
    """A feature-extraction request cannot be satisfied."""


class LabelError(PhotoStyleError):
    """Label images and tables are inconsistent."""


class OptimizationError(PhotoStyleError):
    """The optimizer hit a non-finite loss or gradient."""

    def __init__(self, message: str, iteration: int | None = None):
        super().__init__(message)
        self.iteration = iteration


class ConfigError(PhotoStyleError):
    """Aggregated semantic-validation failures for a run configuration."""

    def __init__(self, problems):
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))
