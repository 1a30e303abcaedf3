"""Exception hierarchy.

Every error family maps to its own CLI exit code (see ``hctree.cli``).
"""


class HctreeError(Exception):
    """Base class for all library errors."""

    exit_code = 1


# vector math ---------------------------------------------------------------

class VectorError(HctreeError, ValueError):
    exit_code = 5


class DimensionMismatch(VectorError):
    pass


class ZeroNorm(VectorError):
    pass


class NonFiniteVector(VectorError):
    pass


class EmptySet(VectorError):
    pass


# ingest --------------------------------------------------------------------

class IngestError(HctreeError):
    exit_code = 3


class EmptyDocument(IngestError, ValueError):
    pass


class CorpusReadError(IngestError, OSError):
    pass


class CorpusDecodeError(IngestError, UnicodeError):
    pass


class EmptyCorpus(IngestError, ValueError):
    pass


# providers -----------------------------------------------------------------

class ProviderError(HctreeError):
    """Transport or HTTP failure talking to a remote model provider."""

    exit_code = 4

    def __init__(self, message, *, query=None, attempts=None):
        super().__init__(message)
        self.query = query
        self.attempts = attempts


class CacheCorrupt(HctreeError):
    exit_code = 4


class TemplateError(HctreeError, ValueError):
    exit_code = 9


# tree ----------------------------------------------------------------------

class ClusterError(HctreeError):
    exit_code = 5


class DisjointnessViolation(ClusterError, ValueError):
    pass


class DegenerateMean(ClusterError, ValueError):
    def __init__(self, node_id, message=None):
        super().__init__(message or f"representative of node {node_id} has zero norm")
        self.node_id = node_id


class UnknownNode(ClusterError, KeyError):
    def __str__(self):
        return str(self.args[0]) if self.args else "unknown node"


class InvariantViolation(ClusterError, ValueError):
    pass


# search --------------------------------------------------------------------

class SearchError(HctreeError):
    exit_code = 6


class BadK(SearchError, ValueError):
    pass


# store ---------------------------------------------------------------------

class StoreError(HctreeError):
    exit_code = 7


class IndexIOError(StoreError, OSError):
    pass


class ChecksumMismatch(StoreError):
    pass


class FormatVersionUnsupported(StoreError):
    pass


# evaluation ----------------------------------------------------------------

class EvalError(HctreeError, ValueError):
    exit_code = 8


class EmptyGold(EvalError):
    pass


class BadBeta(EvalError):
    pass


class OutOfRange(EvalError):
    pass


class ZeroVariance(EvalError):
    pass


class TooFewSamples(EvalError):
    pass


class QuerySetMismatch(EvalError):
    pass
