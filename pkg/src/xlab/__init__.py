"""Numerical verification toolkit for matrix Chernoff bounds on expander walks."""
from .errors import (
    BudgetExceeded,
    DomainError,
    InvalidInput,
    NonExpander,
    NumericalError,
    UnsupportedGraph,
    XlabError,
)
from .expander import (
    ExpanderGraph,
    build_complete_loops,
    build_cycle,
    build_margulis,
    parse_graph,
    random_walk,
    second_eigenvalue,
    seeded_walk,
)
from .sampler import MatrixFn, bound_main, gen_mean_zero_fn, tail_exact, tail_mc

__version__ = "0.1.0"
