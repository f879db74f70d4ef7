"""Cross-quality knowledge distillation on synthetic images.

A teacher classifier trained on full-resolution images transfers its
knowledge to a student trained on downsampled images, with calibration
diagnostics (expected calibration error, output entropy) tracking how
temperature smoothing of the teaching signal affects the student.
"""

__version__ = "0.1.0"

from .exceptions import (  # noqa: F401
    ConfigError,
    CQKDError,
    FormatError,
    RecordParseError,
    SweepRunError,
    TruncatedFileError,
)
