"""Exception hierarchy shared across the package."""


class CausalMineError(Exception):
    """Base class for all package errors."""


class ValidationError(CausalMineError, ValueError):
    """A model, map or configuration violates a structural invariant."""


class CycleDetected(ValidationError):
    def __init__(self, cycle):
        self.cycle = list(cycle)
        super().__init__("cycle among endogenous variables: " + " -> ".join(self.cycle))


class UnknownVariable(CausalMineError, KeyError):
    def __str__(self):
        return str(self.args[0]) if self.args else "unknown variable"


class DegenerateEvidence(CausalMineError):
    """Evidence has zero probability under the model."""


class ParseError(CausalMineError, ValueError):
    def __init__(self, message, row=None, col=None):
        self.row = row
        self.col = col
        where = f" (row {row}, col {col})" if row is not None else ""
        super().__init__(message + where)


class LabelMismatch(ValidationError):
    pass


class EmptyBatch(CausalMineError, ValueError):
    pass


class EmptyBelief(CausalMineError, ValueError):
    pass


class UnknownAction(CausalMineError, ValueError):
    pass


class InvalidAction(UnknownAction):
    pass


class StateNotFlying(CausalMineError):
    pass


class ParticleDepletion(CausalMineError):
    pass
