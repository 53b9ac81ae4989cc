"""Nonlinear momentum splitting for three-operator monotone inclusions.

Solves ``0 in A x + B x + C x`` with ``A`` maximally monotone (accessed by
resolvents), ``B`` monotone Lipschitz and ``C`` cocoercive.
"""

from .metric import Metric, MetricError, s_inner, s_norm, s_inv_norm
from .operators import (
    Kernel,
    OperatorTriple,
    FourOperatorSplit,
    SingleValuedOp,
    kernel_classic,
    kernel_lipschitz_split,
    operator_norm,
    project_box,
    project_capped_simplex,
    project_nonneg,
)
from .conditions import ConstantSet, check_alg1, check_alg2, check_alg3, max_gamma
from .solvers import SolverConfig, StopRule, Trace, run
from .problems import build_portfolio, build_qp

__version__ = "0.1.0"
