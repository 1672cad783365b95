"""Error types shared across the pipeline.

The CLI maps these onto exit codes: usage/config problems exit 1, missing
prerequisite artifacts exit 2, numeric failures (NaN loss) exit 3.
"""


class ConfigError(ValueError):
    """Invalid or inconsistent configuration."""


class DataError(ValueError):
    """Malformed dataset record or layout problem.

    Carries the manifest line number when the problem is tied to a record.
    """

    def __init__(self, message: str, line: int | None = None):
        if line is not None:
            message = f"{message} (manifest line {line})"
        super().__init__(message)
        self.line = line


class MissingArtifactError(FileNotFoundError):
    """A prerequisite artifact (dataset, checkpoint, label file) is absent."""

    def __init__(self, path):
        super().__init__(f"missing prerequisite: {path}")
        self.path = str(path)


class NumericError(RuntimeError):
    """Training diverged. Carries a diagnostic snapshot of the failing step."""

    def __init__(self, message: str, diagnostic: dict | None = None):
        super().__init__(message)
        self.diagnostic = diagnostic or {}
