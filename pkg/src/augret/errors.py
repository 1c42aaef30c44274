"""Exception types shared across the pipeline.

Data problems raise subclasses of :class:`DataError` so the CLI can map them
to exit code 2; everything else is a programming error and propagates.
"""


class AugretError(Exception):
    pass


class DataError(AugretError):
    pass


class EmptyDocument(DataError):
    pass


class EmptyCorpus(DataError):
    pass


class DuplicateDocId(DataError):
    pass


class UnknownDoc(DataError):
    pass


class TooShort(DataError):
    pass


class EmptySpan(DataError):
    pass


class EmptyInput(DataError):
    pass


class NoTitle(DataError):
    pass


class NoAnchor(DataError):
    pass


class BadSpec(DataError):
    pass


class BadPairFile(DataError):
    pass


class GenUnavailable(DataError):
    pass


class EmptyGeneration(DataError):
    pass


class DimMismatch(AugretError):
    pass


class NonFinite(AugretError):
    pass


class MissingHardNegative(DataError):
    pass


class BatchExceedsQueue(AugretError):
    pass


class NoRelevanceInfo(DataError):
    pass
