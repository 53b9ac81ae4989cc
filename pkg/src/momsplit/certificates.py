"""Lyapunov-type certificates evaluated along a run.

Three certificate sequences are provided, one per momentum scheme:

* :func:`psi` for the semi-forward-reflected scheme,
* :func:`xi` (built on :func:`gamma_cert`) for the semi-reflected scheme,
* :func:`s_cert` for the outer-reflected scheme.

Each is evaluated at a reference zero ``x*`` and must not increase by more
than rounding along a run satisfying the step-size conditions. The
:class:`CertificateObserver` plugs into :func:`momsplit.solvers.run` and keeps
its own count of ``B`` evaluations so the solver budget is unaffected.
"""

import math
from dataclasses import dataclass
from typing import Callable, List, Optional, Union

import numpy as np

from . import conditions as cond
from .metric import Metric
from .operators import FourOperatorSplit, OperatorTriple

__all__ = [
    "CertificateError",
    "CertContext",
    "psi",
    "psi_lower_bound",
    "psi_decrease",
    "gamma_cert",
    "xi",
    "xi_lower_bound",
    "xi_decrease",
    "s_cert",
    "s_decrease",
    "alg3_rate_functional",
    "verify_zero",
    "fixed_point_residual",
    "reference_solution",
    "CertificateObserver",
    "Violation",
]

SQRT2 = math.sqrt(2.0)


class CertificateError(ValueError):
    """Raised when a certificate is requested outside its domain."""


Number = Union[float, Callable[[int], float]]


@dataclass
class CertContext:
    """Reference zero and constants shared by all certificates.

    Parameters
    ----------
    x_star : ndarray
        A zero of ``A + B + C``.
    metric : Metric
    B : callable
        The Lipschitz operator.
    gamma : float or callable
        Step size, or ``k -> gamma_k`` for schedules.
    mu, beta : float
    L : float or callable
        ``L_k``, or ``k -> L_k``. Negative indices map to ``L_0``.
    eps2, eps5, eps6, alpha : float, optional
        Weights used by :func:`xi` and :func:`s_cert`.
    """

    x_star: np.ndarray
    metric: Metric
    B: Callable[[np.ndarray], np.ndarray]
    gamma: Number
    mu: float
    beta: float
    L: Number = 0.0
    eps2: Optional[float] = None
    eps5: Optional[float] = None
    eps6: Optional[float] = None
    alpha: Optional[float] = None
    B_evals: int = 0

    def __post_init__(self):
        self.x_star = np.asarray(self.x_star, dtype=float)
        self._Bxs = None

    def g(self, k):
        return float(self.gamma(k)) if callable(self.gamma) else float(self.gamma)

    def Lk(self, k):
        k = max(k, 0)
        return float(self.L(k)) if callable(self.L) else float(self.L)

    def evalB(self, x):
        self.B_evals += 1
        return self.B(x)

    @property
    def Bx_star(self):
        if self._Bxs is None:
            self._Bxs = self.evalB(self.x_star)
        return self._Bxs

    @classmethod
    def for_problem(cls, problem, x_star, gamma, L=0.0, verify_tol=None, **kw):
        """Build a context from a problem; optionally certify ``x_star`` first."""
        triple = problem.as_triple() if isinstance(problem, FourOperatorSplit) else problem
        if verify_tol is not None and not verify_zero(triple, x_star, verify_tol):
            raise CertificateError(
                f"reference point is not a zero (residual "
                f"{fixed_point_residual(triple, x_star):.3e})")
        B = problem.B
        return cls(x_star, triple.metric, B, gamma, problem.B.mu,
                   problem.C.beta or 0.0, L, **kw)

    def _sq(self, v):
        return float(np.dot(self.metric.apply(v), v))

    def _sq_inv(self, v):
        return float(np.dot(self.metric.apply_inv(v), v))


# ---------------------------------------------------------------------------
# semi-forward-reflected scheme
# ---------------------------------------------------------------------------


def psi(ctx, state, Bx=None, Bx_prev=None):
    """``Psi_k(x*)`` at ``state`` (iteration ``k = state.k``).

    ``||x_k - x*||_S^2 + 2 <u_k, x_k - x*> + (gamma_k mu + L_{k-1}) ||x_k - x_{k-1}||_S^2
    + 2 gamma_k <B x_k - B x_{k-1}, x* - x_k>``.

    ``Bx`` and ``Bx_prev`` may be passed to avoid re-evaluating ``B``.
    """
    k = state.k
    g = ctx.g(k)
    x, xp = state.x, state.x_prev
    if Bx is None:
        Bx = ctx.evalB(x)
    if Bx_prev is None:
        Bx_prev = Bx if k == 0 else ctx.evalB(xp)
    e = x - ctx.x_star
    d = x - xp
    return (ctx._sq(e) + 2.0 * float(np.dot(state.u, e))
            + (g * ctx.mu + ctx.Lk(k - 1)) * ctx._sq(d)
            - 2.0 * g * float(np.dot(Bx - Bx_prev, e)))


def psi_lower_bound(ctx, state):
    """``(1 - L_{k-1} - gamma_k mu) ||x_k - x*||_S^2``."""
    k = state.k
    return (1.0 - ctx.Lk(k - 1) - ctx.g(k) * ctx.mu) * ctx._sq(state.x - ctx.x_star)


def psi_decrease(ctx, k):
    """Coefficient of ``||x_{k+1} - x_k||_S^2`` in the one-step decrease."""
    c = cond.ConstantSet(mu=ctx.mu, beta=ctx.beta, gamma=ctx.g(k),
                         gamma_next=ctx.g(k + 1), L_prev=ctx.Lk(k - 1),
                         L_cur=ctx.Lk(k), eps=0.0)
    return cond.check_alg1(c)


# ---------------------------------------------------------------------------
# semi-reflected scheme
# ---------------------------------------------------------------------------


def _need_k1(state):
    if state.k < 1:
        raise CertificateError("certificate needs one completed iteration (k >= 1)")


def gamma_cert(ctx, state):
    """``Gamma_k(x*)``; needs ``k >= 1`` and the cached ``B y_{k-1}``.

    ``||x_k - x*||_S^2 + 2 <u_k, x_k - x*> + 2 gamma <B y_{k-1} - B x*, x_k - x_{k-1}>
    + 2 <u_k - u_{k-1}, x_k - x_{k-1}>``.
    """
    _need_k1(state)
    By = state.By_prev
    if By is None:
        By = ctx.evalB(state.y_prev)
    g = ctx.g(state.k)
    e = state.x - ctx.x_star
    d = state.x - state.x_prev
    return (ctx._sq(e) + 2.0 * float(np.dot(state.u, e))
            + 2.0 * g * float(np.dot(By - ctx.Bx_star, d))
            + 2.0 * float(np.dot(state.u - state.u_prev, d)))


def xi(ctx, state):
    """``Xi_k(x*)``; requires ``eps2`` and ``k >= 1``."""
    if ctx.eps2 is None:
        raise CertificateError("xi needs eps2")
    k = state.k
    g, mu = ctx.g(k), ctx.mu
    d = state.x - state.x_prev
    w1 = 1.0 + 3.0 * ctx.Lk(k - 1) + g * ctx.beta / ctx.eps2 + g * mu * (SQRT2 + 1.0)
    return (gamma_cert(ctx, state) + w1 * ctx._sq(d)
            + ctx.Lk(k - 2) * ctx._sq(state.x_prev - state.x_prev2)
            + g * mu * ctx._sq(state.x - state.y_prev))


def xi_lower_bound(ctx, state):
    """Nonnegative lower bound of ``Xi_k`` valid under the step conditions."""
    k = state.k
    g, mu = ctx.g(k), ctx.mu
    a = 1.0 - ctx.Lk(k - 1) - g * mu
    b = 1.0 + g * ctx.beta / ctx.eps2 - ctx.Lk(k - 2) + (SQRT2 - 1.0) * g * mu
    return a * ctx._sq(state.x - ctx.x_star) + b * ctx._sq(state.x - state.x_prev)


def xi_decrease(ctx, k):
    """Coefficients ``(p, q)`` of ``||x_{k+1} - x_k||^2`` and ``||x_{k+1} - y_k||^2``."""
    c = cond.ConstantSet(mu=ctx.mu, beta=ctx.beta, gamma=ctx.g(k), L_prev=ctx.Lk(k - 1),
                         L_cur=ctx.Lk(k), L_prev2=ctx.Lk(k - 2), eps=0.0, eps2=ctx.eps2)
    return cond.check_alg2(c)


# ---------------------------------------------------------------------------
# outer-reflected scheme
# ---------------------------------------------------------------------------


def _alg3_set(ctx, k):
    if None in (ctx.eps5, ctx.eps6, ctx.alpha):
        raise CertificateError("s_cert needs eps5, eps6 and alpha")
    return cond.ConstantSet(mu=ctx.mu, beta=ctx.beta, gamma=ctx.g(k), L_prev=ctx.Lk(k - 1),
                            L_cur=ctx.Lk(k), eps=0.0, eps5=ctx.eps5, eps6=ctx.eps6,
                            alpha=ctx.alpha)


def s_cert(ctx, state):
    """``S_k(x*)`` of the outer-reflected scheme.

    ``||x_k - x* + gamma S^{-1}(B x_{k-1} - B x*)||_S^2 + 2 <u_k, x_k - x*>
    + L_{k-1} ||y_{k-1} - x_{k-1}||_S^2 + K ||x_k - x_{k-1}||_S^2`` with
    ``K = (alpha + gamma mu (eps5 mu + 1)) / (1 - (1 + eps6) gamma^2 mu^2)``.

    Raises
    ------
    momsplit.conditions.PreconditionError
        If ``1 - (1 + eps6) gamma^2 mu^2 <= 0``.
    """
    k = state.k
    _, K, _ = cond.alg3_constants(_alg3_set(ctx, k))
    g = ctx.g(k)
    Bxp = state.Bx_prev
    if Bxp is None:
        Bxp = ctx.evalB(state.x_prev)
    v = state.x - ctx.x_star + g * ctx.metric.apply_inv(Bxp - ctx.Bx_star)
    return (ctx._sq(v) + 2.0 * float(np.dot(state.u, state.x - ctx.x_star))
            + ctx.Lk(k - 1) * ctx._sq(state.y_prev - state.x_prev)
            + K * ctx._sq(state.x - state.x_prev))


def s_decrease(ctx, k):
    """Coefficient ``nu`` of ``||y_k - x_k||_S^2`` in the one-step decrease."""
    return cond.alg3_constants(_alg3_set(ctx, k))[0]


def alg3_rate_functional(ctx, state, t):
    """Contracting functional of the linear-rate argument for the third scheme.

    ``(1 + t gamma mu (1 + gamma mu)) ||x_k - x*||^2 + d_k + K / (1 + t) ||x_k - x_{k-1}||^2``
    with ``d_k = 2 gamma <B x_{k-1} - B x*, x_k - x*> + gamma^2 ||B x_{k-1} - B x*||_{S^-1}^2
    + 2 <u_k, x_k - x*> + L_{k-1} ||y_{k-1} - x_{k-1}||^2``.
    """
    k = state.k
    _, K, _ = cond.alg3_constants(_alg3_set(ctx, k))
    g, mu = ctx.g(k), ctx.mu
    Bxp = state.Bx_prev
    if Bxp is None:
        Bxp = ctx.evalB(state.x_prev)
    e = state.x - ctx.x_star
    dB = Bxp - ctx.Bx_star
    d_k = (2.0 * g * float(np.dot(dB, e)) + g * g * ctx._sq_inv(dB)
           + 2.0 * float(np.dot(state.u, e))
           + ctx.Lk(k - 1) * ctx._sq(state.y_prev - state.x_prev))
    return ((1.0 + t * g * mu * (1.0 + g * mu)) * ctx._sq(e) + d_k
            + K / (1.0 + t) * ctx._sq(state.x - state.x_prev))


# ---------------------------------------------------------------------------
# reference zeros
# ---------------------------------------------------------------------------


def _as_triple(problem):
    return problem.as_triple() if isinstance(problem, FourOperatorSplit) else problem


def _ref_gamma(triple):
    s = triple.B.mu + (triple.C.beta or 0.0)
    return 1.0 / s if s > 0 else 1.0


def fixed_point_residual(problem, x, gamma=None):
    """``||x - J_{gamma A}(x - gamma (B + C) x)||`` (Euclidean)."""
    triple = _as_triple(problem)
    g = _ref_gamma(triple) if gamma is None else gamma
    x = np.asarray(x, dtype=float)
    r = x - triple.A(g, x - g * (triple.B(x) + triple.C(x)))
    return float(np.linalg.norm(r))


def verify_zero(problem, x_candidate, tol, gamma=None):
    """True iff the forward-backward fixed-point residual is at most ``tol``.

    The reference step defaults to ``1 / (mu + beta)``.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    return fixed_point_residual(problem, x_candidate, gamma) <= tol


def reference_solution(problem, x0, gamma=None, algorithm="fbhf", tol=1e-14,
                       max_iter=1_000_000):
    """High-accuracy zero obtained by over-solving with a classical scheme.

    Returns
    -------
    x : ndarray
    trace : Trace
    """
    from .solvers import SolverConfig, StopRule, run

    triple = _as_triple(problem)
    if gamma is None:
        gamma = 0.9 * cond.fbhf_chi(triple.B.mu, triple.C.beta or 0.0)
        if not math.isfinite(gamma):
            gamma = 1.0
    cfg = SolverConfig(algorithm=algorithm, gamma=gamma,
                       stop=StopRule(rel_change_tol=tol, max_iter=max_iter))
    tr = run(cfg, triple, x0)
    return tr.x, tr


# ---------------------------------------------------------------------------
# observer
# ---------------------------------------------------------------------------


@dataclass
class Violation:
    k: int
    slack: float
    value: float


class CertificateObserver:
    """Evaluate a certificate after every step and check its decrease.

    Parameters
    ----------
    kind : {'psi', 'xi', 's'}
    ctx : CertContext
    slack : float
        Relative rounding allowance; a step passes when
        ``V_k - coeff * increment - V_{k+1} >= -slack * (1 + |V_k|)``.

    Attributes
    ----------
    values : list of float
        Certificate values ``V_1, V_2, ...`` (and ``V_0`` for ``'psi'``).
    lower : list of float
        Lower bounds at the same indices (``'psi'`` and ``'xi'`` only).
    slacks : list of float
        Decrease slack of each recorded step.
    """

    def __init__(self, kind, ctx, slack=1e-9):
        if kind not in ("psi", "xi", "s"):
            raise ValueError(f"unknown certificate {kind!r}")
        self.kind = kind
        self.ctx = ctx
        self.slack = slack
        self.values: List[float] = []
        self.ks: List[int] = []
        self.lower: List[float] = []
        self.slacks: List[float] = []
        self.violations: List[Violation] = []
        self._prev = None
        self._Bx = None

    def start(self, state):
        if self.kind == "psi":
            self._record(state)
        elif self.kind == "s":
            self._record(state)

    def _value(self, state):
        ctx = self.ctx
        if self.kind == "psi":
            Bx = ctx.evalB(state.x)
            v = psi(ctx, state, Bx=Bx, Bx_prev=self._Bx if state.k > 0 else Bx)
            self._Bx = Bx
            return v, psi_lower_bound(ctx, state)
        if self.kind == "xi":
            return xi(ctx, state), xi_lower_bound(ctx, state)
        return s_cert(ctx, state), math.nan

    def _record(self, state):
        v, lb = self._value(state)
        prev = self._prev
        if prev is not None:
            pk, pv, px = prev
            ctx = self.ctx
            if self.kind == "psi":
                dec = psi_decrease(ctx, pk) * ctx._sq(state.x - px)
            elif self.kind == "xi":
                p, q = xi_decrease(ctx, pk)
                dec = p * ctx._sq(state.x - px) + q * ctx._sq(state.x - state.y_prev)
            else:
                dec = s_decrease(ctx, pk) * ctx._sq(state.y_prev - px)
            sl = pv - dec - v
            self.slacks.append(sl)
            if sl < -self.slack * (1.0 + abs(pv)):
                self.violations.append(Violation(state.k, sl, v))
        self.values.append(v)
        self.ks.append(state.k)
        self.lower.append(lb)
        self._prev = (state.k, v, state.x)
        return v

    def __call__(self, state):
        return self._record(state)

    @property
    def ok(self):
        return not self.violations

    def lower_bound_violations(self, slack=None):
        """Indices ``k`` where the value falls below its lower bound."""
        s = self.slack if slack is None else slack
        out = []
        for k, v, lb in zip(self.ks, self.values, self.lower):
            if not math.isnan(lb) and v < lb - s * (1.0 + abs(v)):
                out.append(k)
        return out
