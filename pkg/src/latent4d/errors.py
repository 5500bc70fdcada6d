"""Exception types raised across latent4d."""

from __future__ import annotations

from typing import Any


class Latent4DError(Exception):
    """Root of every error raised by this package."""


class ShapeMismatch(Latent4DError, ValueError):
    """Operand shapes are incompatible."""


class NonScalarLoss(Latent4DError, ValueError):
    """backward() was called on a tensor with more than one element."""


class BehindCamera(Latent4DError, ValueError):
    """A point has non-positive depth in camera space."""


class OutOfBounds(Latent4DError, ValueError):
    """A pixel lies outside the image."""


class OutOfRange(Latent4DError, ValueError):
    """A continuous coordinate lies outside its valid range."""


class InvalidRange(Latent4DError, ValueError):
    """Sampling bounds are not ordered near < depth band < far."""


class ConfigError(Latent4DError, ValueError):
    """Malformed configuration text or an unknown key."""


class FormatError(Latent4DError, ValueError):
    """A PPM, tensor or CSV file could not be decoded."""


class CheckpointError(Latent4DError):
    """Base class for checkpoint failures."""


class CheckpointIoError(CheckpointError, OSError):
    """The checkpoint is unreadable, truncated or has trailing garbage."""


class FormatVersionMismatch(CheckpointError):
    """The file carries a magic or version this build cannot read."""


class NonFinite(Latent4DError, ArithmeticError):
    """A loss term or gradient became NaN or infinite."""

    def __init__(self, message: str, step: int | None = None, terms: dict[str, Any] | None = None):
        super().__init__(message)
        self.step = step
        self.terms = dict(terms or {})

    def __str__(self) -> str:
        text = super().__str__()
        if self.step is not None:
            text = f"{text} (step {self.step})"
        if self.terms:
            parts = ", ".join(f"{k}={v}" for k, v in self.terms.items())
            text = f"{text}: {parts}"
        return text
