"""Error taxonomy shared across the package.

Every domain error carries a stable ``kind`` string (the class name) so the
service layer can serialize it and the CLI can map it to an exit code
without string-matching messages.
"""

from __future__ import annotations


class FetalBiometryError(Exception):
    """Base class for all domain errors."""

    @property
    def kind(self) -> str:
        return type(self).__name__


class BadInput(FetalBiometryError):
    """Caller-supplied value violates a precondition."""


class BadConfig(FetalBiometryError):
    """Analysis configuration is out of range or inconsistent."""


class BadMetadata(FetalBiometryError):
    """study.json is missing, malformed, or self-inconsistent."""


class MissingFrame(FetalBiometryError):
    """Frame files do not match the frame count declared in metadata."""


class BadImage(FetalBiometryError):
    """A frame file is not the expected 8-bit grayscale raster."""


class BadSize(FetalBiometryError):
    """Array shapes disagree or a target size is not positive."""


class BadThreshold(FetalBiometryError):
    """Probability threshold outside the open interval (0, 1)."""


class DegenerateFit(FetalBiometryError):
    """Too few or collinear points for the requested geometric fit."""


class Unmeasurable(FetalBiometryError):
    """Mask has no usable component for the requested measurement."""


class IncompleteBiometry(FetalBiometryError):
    """GA/EFW requested with one of the four measurements missing."""


class EmptyOverlap(FetalBiometryError):
    """Two raters share no commonly rated cases."""


class Insufficient(FetalBiometryError):
    """Not enough cases/readers/groups for the requested statistic."""


class InfiniteLoss(FetalBiometryError):
    """Cross-entropy of a zero-probability true class."""


class BadFixture(FetalBiometryError):
    """Fixture directory contents are inconsistent or malformed."""


class BadSpec(FetalBiometryError):
    """Phantom specification is invalid or out of bounds."""


class AllFramesFailed(FetalBiometryError):
    """Every frame of a study failed scoring; no report can be produced."""
