"""Exception types shared across the package."""


class CpsrError(Exception):
    """Base class for all errors raised by this package."""


class NumericalError(CpsrError, ValueError):
    """Non-finite input or a degenerate decomposition."""


class RankCollapseError(NumericalError):
    """Every singular value of the compressed statistics fell below tolerance."""

    def __init__(self, msg="rank collapse"):
        super().__init__(msg)


class TpsrInfeasibleError(CpsrError, MemoryError):
    """The explicit observable matrices would exceed the memory budget."""

    def __init__(self, needed_bytes, budget_bytes):
        self.needed_bytes = int(needed_bytes)
        self.budget_bytes = int(budget_bytes)
        super().__init__(
            f"TPSR infeasible: needs ~{self.needed_bytes / 2**30:.2f} GiB, "
            f"budget {self.budget_bytes / 2**30:.2f} GiB"
        )


class ZeroProbabilityError(NumericalError):
    """State update attempted with an observation the model deems impossible."""

    def __init__(self, msg="zero-probability observation"):
        super().__init__(msg)


class ImpossibleHistoryError(CpsrError, ValueError):
    """An oracle query conditioned on a history of probability zero."""

    def __init__(self, msg="impossible history"):
        super().__init__(msg)


class SpecMismatchError(CpsrError, ValueError):
    """Statistics and model were produced under different projections."""
