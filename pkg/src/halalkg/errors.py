"""Exception types raised across the package."""


class HalalKGError(Exception):
    """Base class for every error raised by this package."""


# graph construction / lookup
class SchemaViolation(HalalKGError, ValueError):
    pass


class DuplicateStatus(HalalKGError, ValueError):
    pass


class UnknownEntity(HalalKGError, KeyError):
    pass


class InsufficientData(HalalKGError, ValueError):
    pass


# tensors
class ShapeMismatch(HalalKGError, ValueError):
    pass


class NonScalarLoss(HalalKGError, ValueError):
    pass


class DoubleBackward(HalalKGError, RuntimeError):
    pass


class EmptySegment(HalalKGError, ValueError):
    pass


class NonFiniteValue(HalalKGError, FloatingPointError):
    pass


# model
class UnknownRelation(HalalKGError, KeyError):
    pass


class WrongLayerCount(HalalKGError, ValueError):
    pass


class NoCandidates(HalalKGError, ValueError):
    pass


class MissingGradient(HalalKGError, RuntimeError):
    pass


# configuration and I/O
class ConfigInvalid(HalalKGError, ValueError):
    """Raised with every violated constraint listed in ``violations``."""

    def __init__(self, violations):
        if isinstance(violations, str):
            violations = [violations]
        self.violations = list(violations)
        super().__init__("; ".join(self.violations))


class HeaderMismatch(HalalKGError, ValueError):
    pass


class UnknownProduct(HalalKGError, KeyError):
    pass


class UnknownIngredient(HalalKGError, KeyError):
    pass
