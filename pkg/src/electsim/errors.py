"""Exception hierarchy shared by every layer of the simulator."""


class ElectionError(Exception):
    """Base class for all simulator errors."""


class InvalidSizeError(ElectionError, ValueError):
    """Graph-family parameters are out of range."""


class GenerationFailureError(ElectionError):
    """A randomized generator gave up after its attempt budget."""


class PreconditionError(ElectionError, ValueError):
    """An operation was called on inputs violating its precondition."""


class NoConvergenceError(ElectionError):
    """A plain random walk on a bipartite graph never mixes."""


class ConvergenceFailureError(ElectionError):
    """Power iteration hit its iteration cap."""


class ModelViolationError(ElectionError):
    """A protocol broke a communication-model constraint (CONGEST budget, port range)."""

    def __init__(self, message, round_no=None, src=None, port=None):
        super().__init__(message)
        self.round_no = round_no
        self.src = src
        self.port = port


class RunawayError(ElectionError):
    """A protocol schedule does not fit in ``max_rounds``."""


class ProtocolInvariantError(ElectionError):
    """A node observed a state that the protocol's invariants rule out."""


class ConfigError(ElectionError, ValueError):
    """An experiment configuration field is invalid."""

    def __init__(self, field, message):
        super().__init__(f"{field}: {message}")
        self.field = field
