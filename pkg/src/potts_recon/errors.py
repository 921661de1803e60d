"""Exception types raised across the package."""


class PottsReconError(Exception):
    pass


class InvalidParameters(PottsReconError, ValueError):
    pass


class DegenerateNormalization(PottsReconError, ArithmeticError):
    """Every coordinate of an unnormalised posterior product vanished."""


class AtomBudgetExceeded(PottsReconError):
    def __init__(self, requested, budget):
        super().__init__(f"atom support of {requested} exceeds budget {budget}")
        self.requested = requested
        self.budget = budget


class BracketNotFound(PottsReconError):
    pass


class PrecisionExhausted(PottsReconError):
    pass


class GridFailure(PottsReconError):
    def __init__(self, failures):
        listed = ", ".join(f"{s:.3f}" for s in failures[:10])
        super().__init__(f"{len(failures)} grid point(s) failed: {listed}")
        self.failures = list(failures)
