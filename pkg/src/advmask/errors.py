"""Exception types raised across the package."""


class AdvMaskError(Exception):
    """Base class for all advmask errors."""


# geometry

class DegenerateInput(AdvMaskError):
    """Point set cannot be triangulated (fewer than 3 points or all collinear)."""


class DegenerateTriangle(AdvMaskError):
    """Triangle area below the degeneracy threshold."""


class MeshMismatch(AdvMaskError):
    """Landmark sets disagree in length or scheme."""


class SchemeMissingIndices(AdvMaskError):
    """Landmark scheme does not provide the required contour/nose indices."""


class DimensionMismatch(AdvMaskError):
    """Array dimensions disagree where they must match."""


# models

class ShapeMismatch(AdvMaskError):
    """Image shape does not match the model input spec."""


class UnsupportedLoss(AdvMaskError):
    """Loss spec incompatible with the model kind."""


# attacks

class EvenKernel(AdvMaskError):
    """Pixel-wise kernel size must be odd."""


class ConfigInvalid(AdvMaskError):
    """Attack configuration violates its invariants."""


# baselines

class MissingSeed(AdvMaskError):
    """A stochastic attack variant was requested without a seed."""


# evaluation

class EmptyScores(AdvMaskError):
    """Score set has an empty side."""


class NoMateInGallery(AdvMaskError):
    """A probe identity has no same-identity entry in the gallery."""


class EmptySet(AdvMaskError):
    """Operation requires a non-empty collection."""


class EmptyTemplates(AdvMaskError):
    """Template list is empty."""


class TooSmall(AdvMaskError):
    """Image smaller than the metric window."""


# pipeline

class ConfigError(AdvMaskError):
    """Experiment configuration is invalid."""


class UnknownKey(ConfigError):
    """Strict config parsing hit an unrecognized key."""

    def __init__(self, path: str):
        super().__init__(f"unknown config key: {path}")
        self.path = path


class ConfigTypeError(ConfigError):
    """Config value has the wrong type."""

    def __init__(self, path: str, expected: str, got: object):
        super().__init__(f"config key {path}: expected {expected}, got {type(got).__name__}")
        self.path = path
