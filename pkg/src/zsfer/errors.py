"""Exception and warning types raised across the package."""


class ZsferError(Exception):
    """Base class for every error raised by this package."""


class ZeroVector(ZsferError, ValueError):
    pass


class DimensionMismatch(ZsferError, ValueError):
    pass


class EmptyInput(ZsferError, ValueError):
    pass


class EmptyClassSet(EmptyInput):
    pass


class ShapeMismatch(ZsferError, ValueError):
    pass


class NonFiniteActivation(ZsferError, FloatingPointError):
    pass


class NonFiniteLoss(ZsferError, FloatingPointError):
    pass


class UnknownToken(ZsferError, KeyError):
    def __str__(self):
        return Exception.__str__(self)


class EmptySequence(EmptyInput):
    pass


class InsufficientData(ZsferError, ValueError):
    pass


class ParseError(ZsferError, ValueError):
    pass


class UnknownSubset(ZsferError, ValueError):
    pass


class AssetMissing(ZsferError, FileNotFoundError):
    pass


class UnknownComponent(ZsferError, KeyError):
    def __str__(self):
        return Exception.__str__(self)


class DuplicateName(ZsferError, ValueError):
    pass


class LabelOutOfRange(ZsferError, ValueError):
    pass


class MissingMetadata(ZsferError, ValueError):
    pass


class ClassNotInRegistry(ZsferError, KeyError):
    def __str__(self):
        return Exception.__str__(self)


class DuplicateId(ZsferError, ValueError):
    pass


class UnresolvedSource(ZsferError, FileNotFoundError):
    pass


class EmptyVideo(ZsferError, ValueError):
    pass


class ConfigInvalid(ZsferError, ValueError):
    pass


class SchemaMismatch(ZsferError, ValueError):
    pass


class CorruptPayload(ZsferError, ValueError):
    pass


class DegenerateRange(ZsferError, ValueError):
    pass


class TruncationWarning(UserWarning):
    """Text was cut to the tokenizer's maximum length."""


class RankDeficient(UserWarning):
    """Fewer non-trivial principal components exist than were requested."""


class ZeroVariance(UserWarning):
    """A correlation was requested for a constant series."""
