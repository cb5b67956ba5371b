"""Exception hierarchy shared by all xlab modules."""


class XlabError(Exception):
    """Base class for every error raised by xlab."""


class InvalidInput(XlabError, ValueError):
    pass


class DomainError(XlabError, ValueError):
    """Argument lies outside the domain of a closed-form map."""


class NumericalError(XlabError, ArithmeticError):
    pass


class UnsupportedGraph(XlabError, ValueError):
    pass


class BudgetExceeded(XlabError, RuntimeError):
    pass


class NonExpander(XlabError, ValueError):
    """The graph has spectral expansion lambda >= 1."""
