"""Exception types shared across the package.

Invalid in-memory arguments raise plain ``ValueError``; the classes here
cover everything that can go wrong with files and experiment configs, so
callers (and the CLI) can tell corruption apart from misuse.
"""


class CQKDError(Exception):
    """Base class for package-specific errors."""


class FormatError(CQKDError):
    """A binary container has bad magic bytes, an unknown version, or
    structurally inconsistent contents."""


class TruncatedFileError(FormatError):
    """A binary container ended early.

    Carries the expected and actual byte counts so the message can name
    exactly how much data is missing.
    """

    def __init__(self, expected: int, actual: int, context: str = "file"):
        self.expected = expected
        self.actual = actual
        super().__init__(
            f"truncated {context}: expected at least {expected} bytes, got {actual}"
        )


class RecordParseError(CQKDError):
    """A prediction-record CSV row could not be parsed or validated.

    ``line_number`` is 1-based and counts the header line.
    """

    def __init__(self, line_number: int, message: str):
        self.line_number = line_number
        super().__init__(f"line {line_number}: {message}")


class ConfigError(CQKDError):
    """An experiment config file failed validation."""


class SweepRunError(CQKDError):
    """A sweep sub-run failed; carries the path of its manifest."""

    def __init__(self, manifest_path, message: str):
        self.manifest_path = str(manifest_path)
        super().__init__(f"{message} (manifest: {self.manifest_path})")
