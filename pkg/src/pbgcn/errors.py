"""Exception hierarchy. Every error carries a short ``code`` used by the CLI."""


class PBGCNError(Exception):
    code = "PBGCNError"

    def __init_subclass__(cls, **kw):
        super().__init_subclass__(**kw)
        cls.code = cls.__name__

    def __init__(self, message: str = "", **context):
        super().__init__(message)
        # Structured details (offending vertices, part names, ...) for callers.
        self.context = context


# graph
class GraphError(PBGCNError):
    pass


class InvalidGraph(GraphError):
    pass


class UncoveredVertex(GraphError):
    pass


class UncoveredEdge(GraphError):
    pass


class DisconnectedPart(GraphError):
    pass


class NoSharedVertex(GraphError):
    pass


class ZeroDegreeVertex(GraphError):
    pass


class VertexNotInPart(GraphError):
    pass


class UnknownScheme(GraphError):
    pass


# tensors / network
class ShapeMismatch(PBGCNError):
    pass


class InvalidLabel(PBGCNError):
    pass


class NonScalarLoss(PBGCNError):
    pass


class UnknownClassCount(PBGCNError):
    pass


class EmptyReferenceSet(PBGCNError):
    pass


class CheckpointMismatch(PBGCNError):
    pass


# training
class EpochOutOfRange(PBGCNError):
    pass


class MissingGrad(PBGCNError):
    pass


class EmptyDataset(PBGCNError):
    pass


class DivergedLoss(PBGCNError):
    pass


# data
class ParseError(PBGCNError):
    pass


class MalformedHeader(ParseError):
    pass


class JointCountMismatch(ParseError):
    pass


class NonFiniteCoordinate(ParseError):
    pass


class TooManyBodies(ParseError):
    pass


class PatternMismatch(ParseError):
    pass


class EmptySide(PBGCNError):
    pass


class InvalidSpec(PBGCNError):
    pass


# evaluation / cli
class EmptyEvalSet(PBGCNError):
    pass


class UnknownSubcommand(PBGCNError):
    pass


class ConfigParseError(PBGCNError):
    pass
