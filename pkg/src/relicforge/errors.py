"""Exception types shared across relicforge modules.

Everything derives from ``ValueError`` so callers that only care about
"bad input" can catch that; the CLI maps these to exit code 1.
"""


class RelicError(ValueError):
    pass


class ParseError(RelicError):
    def __init__(self, message, record=None):
        self.record = record
        if record is not None:
            message = f"frame record {record}: {message}"
        super().__init__(message)


class PoseValidationError(RelicError):
    pass


class DegenerateClipError(RelicError):
    pass


class ReflectionError(RelicError):
    pass


class ActionConflictError(RelicError):
    def __init__(self, pair):
        self.pair = tuple(pair)
        super().__init__(f"opposing actions pressed together: {pair[0]} / {pair[1]}")


class ActionInvariantError(RelicError):
    pass


class ShapeError(RelicError):
    pass


class ContractError(RelicError):
    pass


class RankError(RelicError):
    pass


class DivergenceError(RuntimeError):
    pass
