"""Exception hierarchy shared across geoat modules."""


class GeoAtError(Exception):
    """Base class for every error raised deliberately by geoat."""


# geo ingest
class GeoIngestError(GeoAtError):
    pass


class InvalidCoordinate(GeoIngestError, ValueError):
    pass


class InvalidBBox(GeoIngestError, ValueError):
    pass


class PolarLatitude(GeoIngestError, ValueError):
    pass


class InvalidSide(GeoIngestError, ValueError):
    pass


class NetworkError(GeoIngestError):
    pass


class RateLimited(NetworkError):
    """Overpass answered 429 or 504 on every attempt."""


class ParseError(GeoIngestError):
    def __init__(self, message, offset=None, path=None):
        self.offset = offset
        self.path = path
        parts = [message]
        if offset is not None:
            parts.append(f"at byte {offset}")
        if path is not None:
            parts.append(f"in {path}")
        super().__init__(" ".join(parts))


class MissingField(ParseError):
    pass


# gsc encoding / embedding files
class GscError(GeoAtError):
    pass


class EmptyDescriptor(GscError, ValueError):
    pass


class DimMismatch(GscError, ValueError):
    pass


class MissingEmbedding(GscError, KeyError):
    def __str__(self):
        return Exception.__str__(self)


class EmbeddingFileError(GscError):
    pass


class BadMagic(EmbeddingFileError):
    pass


class TruncatedFile(EmbeddingFileError):
    pass


class DuplicateKey(EmbeddingFileError):
    pass


# audio
class AudioError(GeoAtError):
    pass


class UnsupportedFormat(AudioError):
    pass


class CorruptHeader(AudioError):
    pass


# tensor core
class TensorError(GeoAtError):
    pass


class ShapeMismatch(TensorError, ValueError):
    pass


class NumericFault(TensorError, ArithmeticError):
    pass


class NonScalarLoss(TensorError, ValueError):
    pass


# models
class ModelError(GeoAtError):
    pass


class WrongBackbone(ModelError, ValueError):
    pass


class CheckpointError(ModelError):
    pass


# data / training / metrics
class DataError(GeoAtError):
    pass


class ManifestError(DataError, ValueError):
    pass


class InfeasibleSplit(DataError):
    def __init__(self, message, labels=()):
        self.labels = list(labels)
        super().__init__(message)


class MissingGsc(DataError):
    pass


class MetricError(GeoAtError, ValueError):
    pass


class NoPositives(MetricError):
    pass


class Degenerate(MetricError):
    pass


class DegenerateClass(Degenerate):
    pass


class ClassMismatch(MetricError):
    pass


# statistics
class StatsError(GeoAtError, ValueError):
    pass


class NoItems(StatsError):
    pass


class DegenerateData(StatsError):
    pass


class AllZeroDifferences(StatsError):
    pass


class DegenerateVariance(StatsError):
    pass


# zero-shot mapping
class ZeroShotError(GeoAtError):
    pass


class AllTokensOov(ZeroShotError, KeyError):
    def __str__(self):
        return Exception.__str__(self)


# config / cli
class ConfigError(GeoAtError, ValueError):
    pass
