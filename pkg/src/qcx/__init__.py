"""Numerical checks of real q-convexity for functions and open sets, and of
q-plurisubharmonicity and q-pseudoconvexity for their complex counterparts."""

from __future__ import annotations

__version__ = "0.1.0"

from .core import (  # noqa: E402
    Budget,
    KernelSpec,
    QIndexReport,
    Witness,
    approximate_from_above,
    check_sum_theorem,
    classify_on_grid,
    hessian_q_index,
    witness_search,
)
from .expr import ScalarField, parse_expr, print_expr  # noqa: E402
from .spectra import Inertia, inertia, jacobi_eigh  # noqa: E402

__all__ = [
    "Budget",
    "Inertia",
    "KernelSpec",
    "QIndexReport",
    "ScalarField",
    "Witness",
    "__version__",
    "approximate_from_above",
    "check_sum_theorem",
    "classify_on_grid",
    "hessian_q_index",
    "inertia",
    "jacobi_eigh",
    "parse_expr",
    "print_expr",
    "witness_search",
]
