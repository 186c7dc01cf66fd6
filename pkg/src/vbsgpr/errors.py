"""Exception types raised by the library."""


class VBSGPRError(Exception):
    """Base class for all library errors."""


class DimensionError(VBSGPRError, ValueError):
    """Raised when input dimensions disagree."""


class FactorizationError(VBSGPRError, ArithmeticError):
    """Raised when a Cholesky factorization fails even after jitter.

    Attributes
    ----------
    condition : float
        Estimated 2-norm condition number of the offending matrix.
    jitter : float
        Largest jitter that was tried.
    """

    def __init__(self, message, condition=float("nan"), jitter=0.0):
        super().__init__(message)
        self.condition = condition
        self.jitter = jitter


class NonFiniteError(VBSGPRError, FloatingPointError):
    """Raised when a bound term, gradient or parameter is not finite.

    Attributes
    ----------
    term : str
        Name of the offending term or parameter.
    block : int or None
        Mini-batch index, when the failure is local to one block.
    """

    def __init__(self, term, block=None, detail=""):
        where = f" in block {block}" if block is not None else ""
        msg = f"non-finite value in {term}{where}"
        if detail:
            msg += f": {detail}"
        super().__init__(msg)
        self.term = term
        self.block = block


class DataError(VBSGPRError, ValueError):
    """Raised for malformed input data (CSV parse errors, bad columns)."""
