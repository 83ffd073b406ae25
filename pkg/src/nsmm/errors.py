"""Exception types raised across the package."""


class PositivityError(ValueError):
    """A function that must be strictly positive has a nonpositive cell."""


class DataError(ValueError):
    """Malformed input data (CSV contents, out-of-domain observations, specs)."""


class SinkhornError(RuntimeError):
    """Kernel normalization failed to reach double stochasticity."""


class InvariantViolation(ArithmeticError):
    """A guaranteed inequality or identity failed during a fit.

    ``lemma`` names the result whose consequence was violated, e.g.
    ``"Remark 1"`` or ``"Lemma 11"``.
    """

    def __init__(self, lemma: str, message: str):
        super().__init__(f"{lemma}: {message}")
        self.lemma = lemma
