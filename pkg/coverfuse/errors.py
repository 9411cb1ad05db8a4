"""
Exception types for coverfuse.

Data errors (bad audio, bad shapes, missing features) derive from DataError;
bad invocations derive from UsageError. The CLI maps them to exit codes.
"""


class CoverFusionError(Exception):
    """Base class for every error raised by coverfuse."""


class DataError(CoverFusionError):
    """Input data cannot be processed."""


class UsageError(CoverFusionError):
    """The caller asked for something that is not allowed."""


# Audio / features
class UnsupportedFormat(DataError):
    pass


class CorruptFile(DataError):
    pass


class EmptyAudio(DataError):
    pass


class ClipTooShort(DataError):
    pass


# Blocks
class DegenerateBlock(DataError):
    pass


class TooFewBeats(DataError):
    pass


# Cross-similarity
class ChannelMismatch(DataError):
    pass


class LengthMismatch(DataError):
    pass


class EmptyCSM(DataError):
    pass


# Fusion
class NonSquare(DataError):
    pass


class NegativeDistance(DataError):
    pass


class DimensionMismatch(DataError):
    pass


# Alignment
class EmptyMask(DataError):
    pass


# Pipeline
class MissingFeatures(DataError):
    pass


class CacheFormatError(DataError):
    pass


class ManifestError(DataError):
    pass


class ConfigError(UsageError):
    pass
