"""Exception types shared across the toolkit."""


class GraphiclError(Exception):
    """Base class for all toolkit errors."""


class MalformedEquation(GraphiclError):
    pass


class IllegalCharacter(GraphiclError):
    pass


class UnbalancedParens(GraphiclError):
    pass


class DanglingOperator(GraphiclError):
    pass


class ForwardReference(GraphiclError):
    pass


class DuplicateIndex(GraphiclError):
    pass


class NoAnswerFound(GraphiclError):
    pass


class FlavorMismatch(GraphiclError):
    pass


class DimensionMismatch(GraphiclError):
    pass


class EmptyQuery(GraphiclError):
    pass


class InsufficientData(GraphiclError):
    pass


class CorpusTooSmall(GraphiclError):
    pass


class NonFiniteLoss(GraphiclError):
    pass


class MissingSteps(GraphiclError):
    pass


class SchemaError(GraphiclError):
    pass


class IdMismatch(GraphiclError):
    pass


class TransportError(GraphiclError):
    pass


class RateLimited(GraphiclError):
    pass


class ContextLengthExceeded(GraphiclError):
    pass


class UnsupportedByEndpoint(GraphiclError):
    pass


class ScorerUnavailable(GraphiclError):
    pass


class ConfigError(GraphiclError):
    pass
