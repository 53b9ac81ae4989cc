"""Operators of the inclusion ``0 in Ax + Bx + Cx`` and warped-resolvent kernels.

``A`` is only ever touched through backward steps. Every resolvent object
implements :meth:`Resolvent.solve_diag`, which returns the unique ``x`` with
``z in diag(d) x + A x`` for a positive weight vector (or scalar) ``d``. The
usual resolvent ``J_{gamma A}`` is the special case ``d = 1 / gamma``, and the
warped resolvent of the classical kernel ``M = S / gamma`` under a diagonal
metric is the case ``d = s / gamma``.
"""

import logging
import warnings
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from . import _kernels
from .metric import Metric

__all__ = [
    "UnsupportedConfiguration",
    "OperatorNormWarning",
    "Resolvent",
    "ZeroResolvent",
    "BoxResolvent",
    "NonnegResolvent",
    "CappedSimplexResolvent",
    "ProductResolvent",
    "ShiftedResolvent",
    "CallableResolvent",
    "SingleValuedOp",
    "CountingOp",
    "Kernel",
    "OperatorTriple",
    "FourOperatorSplit",
    "project_box",
    "project_nonneg",
    "project_capped_simplex",
    "skew_saddle",
    "saddle_operator",
    "quad_grad",
    "quad_grad_operator",
    "operator_norm",
    "kernel_classic",
    "kernel_lipschitz_split",
]

logger = logging.getLogger(__name__)


class UnsupportedConfiguration(ValueError):
    """Raised when a kernel or resolvent cannot be formed for the given metric."""


class OperatorNormWarning(RuntimeWarning):
    """Power iteration stopped at its iteration cap."""


# ---------------------------------------------------------------------------
# projections
# ---------------------------------------------------------------------------


def project_box(z, lo, hi):
    """Componentwise clamp of ``z`` onto ``[lo, hi]^n``."""
    if lo > hi:
        raise ValueError(f"empty box: lo={lo} > hi={hi}")
    return np.clip(np.asarray(z, dtype=float), lo, hi)


def project_nonneg(z):
    """Projection onto the nonnegative orthant."""
    return np.maximum(np.asarray(z, dtype=float), 0.0)


def project_capped_simplex(z, weights=None):
    """Projection onto ``{x : sum(x) = 1, 0 <= x <= 1}``.

    Parameters
    ----------
    z : array_like, shape (n,)
    weights : array_like, optional
        Positive diagonal weights ``d``; the projection is then taken in the
        norm ``sum_i d_i v_i**2``. Defaults to the Euclidean norm.
    """
    z = np.asarray(z, dtype=float)
    if z.ndim != 1 or z.size == 0:
        raise ValueError("capped simplex projection needs a non-empty vector")
    d = np.ones_like(z) if weights is None else np.broadcast_to(
        np.asarray(weights, dtype=float), z.shape)
    return _kernels.capped_simplex(z, d)


# ---------------------------------------------------------------------------
# resolvents
# ---------------------------------------------------------------------------


class Resolvent:
    """Maximally monotone operator exposed through its backward steps."""

    #: True when ``A`` is a normal cone, i.e. ``t A = A`` for ``t > 0``.
    conic = False

    def solve_diag(self, z, d):
        """Return ``x`` with ``z in d * x + A x`` (``d`` positive)."""
        raise NotImplementedError

    def __call__(self, gamma, z):
        """Return ``J_{gamma A}(z) = (Id + gamma A)^{-1} z``."""
        if gamma <= 0:
            raise ValueError("gamma must be positive")
        return self.solve_diag(np.asarray(z, dtype=float) / gamma, 1.0 / gamma)

    eval = __call__

    def shifted(self, rho):
        """Resolvent of ``A + rho Id``."""
        return ShiftedResolvent(self, rho)


class _SetResolvent(Resolvent):
    """Normal cone of a closed convex set, so every backward step projects."""

    conic = True

    def weighted_projection(self, w, d):
        raise NotImplementedError

    def project(self, w):
        return self.weighted_projection(w, 1.0)

    def solve_diag(self, z, d):
        z = np.asarray(z, dtype=float)
        return self.weighted_projection(z / d, d)

    def __call__(self, gamma, z):
        if gamma <= 0:
            raise ValueError("gamma must be positive")
        return self.project(np.asarray(z, dtype=float))

    eval = __call__


class ZeroResolvent(Resolvent):
    """``A = 0`` (unconstrained problems)."""

    conic = True

    def solve_diag(self, z, d):
        return np.asarray(z, dtype=float) / d

    def __call__(self, gamma, z):
        return np.array(z, dtype=float)

    eval = __call__


class BoxResolvent(_SetResolvent):
    """Normal cone of ``[lo, hi]^n``; separable, so weights do not matter."""

    def __init__(self, lo=0.0, hi=1.0):
        if lo > hi:
            raise ValueError(f"empty box: lo={lo} > hi={hi}")
        self.lo = float(lo)
        self.hi = float(hi)

    def weighted_projection(self, w, d):
        return project_box(w, self.lo, self.hi)


class NonnegResolvent(_SetResolvent):
    """Normal cone of the nonnegative orthant."""

    def weighted_projection(self, w, d):
        return project_nonneg(w)


class CappedSimplexResolvent(_SetResolvent):
    """Normal cone of the capped simplex ``{sum x = 1, 0 <= x <= 1}``."""

    def weighted_projection(self, w, d):
        w = np.asarray(w, dtype=float)
        return project_capped_simplex(w, np.broadcast_to(d, w.shape))


class ProductResolvent(Resolvent):
    """Block-diagonal ``A = A_1 x A_2 x ...`` on a concatenated vector.

    Parameters
    ----------
    blocks : sequence of (int, Resolvent)
        Block sizes and the resolvent acting on each block.
    """

    def __init__(self, blocks):
        self.blocks = [(int(n), r) for n, r in blocks]
        self.sizes = [n for n, _ in self.blocks]
        self.offsets = np.cumsum([0] + self.sizes)
        self.conic = all(r.conic for _, r in self.blocks)

    @property
    def dim(self):
        return int(self.offsets[-1])

    def _split_d(self, d, i):
        if np.ndim(d) == 0:
            return d
        return d[self.offsets[i]:self.offsets[i + 1]]

    def solve_diag(self, z, d):
        z = np.asarray(z, dtype=float)
        out = np.empty_like(z)
        for i, (_, r) in enumerate(self.blocks):
            sl = slice(self.offsets[i], self.offsets[i + 1])
            out[sl] = r.solve_diag(z[sl], self._split_d(d, i))
        return out

    def __call__(self, gamma, z):
        z = np.asarray(z, dtype=float)
        out = np.empty_like(z)
        for i, (_, r) in enumerate(self.blocks):
            sl = slice(self.offsets[i], self.offsets[i + 1])
            out[sl] = r(gamma, z[sl])
        return out

    eval = __call__


class ShiftedResolvent(Resolvent):
    """Resolvent of ``A + rho Id`` (``rho``-strongly monotone when ``rho > 0``)."""

    def __init__(self, base, rho):
        if rho < 0:
            raise ValueError("rho must be nonnegative")
        self.base = base
        self.rho = float(rho)
        self.conic = False

    def solve_diag(self, z, d):
        return self.base.solve_diag(z, d + self.rho)

    def __call__(self, gamma, z):
        if self.base.conic:
            # J_{gamma (N + rho Id)}(z) = P(z / (1 + gamma rho))
            return self.base(gamma, np.asarray(z, dtype=float) / (1.0 + gamma * self.rho))
        return super().__call__(gamma, z)

    eval = __call__


class CallableResolvent(Resolvent):
    """Wrap a user function ``(gamma, z) -> J_{gamma A}(z)``.

    Only scalar weights can be served, so warped resolvents for non-identity
    diagonal metrics are rejected.
    """

    def __init__(self, fn):
        self.fn = fn

    def solve_diag(self, z, d):
        if np.ndim(d) != 0:
            dd = np.asarray(d)
            if not np.all(dd == dd.flat[0]):
                raise UnsupportedConfiguration(
                    "a plain resolvent cannot be evaluated under a non-scalar metric")
            d = float(dd.flat[0])
        return self.fn(1.0 / d, np.asarray(z, dtype=float) / d)

    def __call__(self, gamma, z):
        return self.fn(gamma, np.asarray(z, dtype=float))

    eval = __call__


# ---------------------------------------------------------------------------
# single-valued operators
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SingleValuedOp:
    """Single-valued operator with its constants measured in the metric ``S``.

    Attributes
    ----------
    fn : callable
        ``x -> T x``.
    mu : float
        Lipschitz constant.
    beta : float, optional
        ``T`` is ``1/beta``-cocoercive when given.
    rho : float
        Strong monotonicity modulus (0 if none).
    """

    fn: Callable[[np.ndarray], np.ndarray]
    mu: float = 0.0
    beta: Optional[float] = None
    rho: float = 0.0

    def __call__(self, x):
        return self.fn(x)

    eval = __call__

    def __add__(self, other):
        if not isinstance(other, SingleValuedOp):
            return NotImplemented
        f, g = self.fn, other.fn
        return SingleValuedOp(lambda x: f(x) + g(x), self.mu + other.mu, None,
                              self.rho + other.rho)

    @classmethod
    def zero(cls, beta=None):
        return cls(lambda x: np.zeros_like(x, dtype=float), 0.0, beta, 0.0)


class CountingOp:
    """Callable wrapper that counts evaluations of an operator."""

    def __init__(self, op):
        self.op = op
        self.calls = 0

    def __call__(self, *args):
        self.calls += 1
        return self.op(*args)

    def __getattr__(self, name):
        return getattr(self.op, name)


def skew_saddle(D, b, x, u):
    """Return ``(D^T u, -D x - b)``; pass ``b=None`` for the homogeneous map."""
    D = np.asarray(D)
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    if D.ndim != 2 or x.shape != (D.shape[1],) or u.shape != (D.shape[0],):
        raise ValueError(f"shape mismatch: D{D.shape}, x{x.shape}, u{u.shape}")
    top = D.T @ u
    bot = -(D @ x)
    if b is not None:
        b = np.asarray(b, dtype=float)
        if b.shape != (D.shape[0],):
            raise ValueError(f"shape mismatch: D{D.shape}, b{b.shape}")
        bot = bot - b
    return top, bot


def saddle_operator(D, b=None, scale=1.0, norm=None):
    """Saddle map ``(x, u) -> scale * (D^T u, -D x - b)`` on ``R^{n+q}``.

    Parameters
    ----------
    D : ndarray, shape (q, n)
    b : ndarray, shape (q,), optional
    scale : float
        Multiplies the whole map (``0.5`` gives each half of an even split).
    norm : float, optional
        Precomputed ``||D||``; estimated by power iteration otherwise.
    """
    D = np.asarray(D, dtype=float)
    q, n = D.shape
    Dt = D.T.copy()
    bb = None if b is None else scale * np.asarray(b, dtype=float)
    if norm is None:
        norm = operator_norm(lambda v: D @ v, lambda v: Dt @ v, n)

    def fn(z):
        out = np.empty(n + q)
        out[:n] = scale * (Dt @ z[n:])
        out[n:] = -scale * (D @ z[:n])
        if bb is not None:
            out[n:] -= bb
        return out

    return SingleValuedOp(fn, mu=abs(scale) * norm, beta=None)


def quad_grad(G, b, x):
    """Gradient ``G^T (G x - b)`` of ``||G x - b||^2 / 2``."""
    G = np.asarray(G)
    x = np.asarray(x, dtype=float)
    b = np.asarray(b, dtype=float)
    if G.ndim != 2 or x.shape != (G.shape[1],) or b.shape != (G.shape[0],):
        raise ValueError(f"shape mismatch: G{G.shape}, x{x.shape}, b{b.shape}")
    return G.T @ (G @ x - b)


def quad_grad_operator(G, b, n_dual=0, norm=None):
    """``(x, u) -> (G^T (G x - b), 0)`` with ``beta = ||G||^2``."""
    G = np.asarray(G, dtype=float)
    Gt = G.T.copy()
    b = np.asarray(b, dtype=float)
    n = G.shape[1]
    if norm is None:
        norm = operator_norm(lambda v: G @ v, lambda v: Gt @ v, n)

    def fn(z):
        out = np.zeros(n + n_dual)
        out[:n] = Gt @ (G @ z[:n] - b)
        return out

    return SingleValuedOp(fn, mu=norm**2, beta=norm**2)


def operator_norm(apply, apply_adjoint, dim, tol=1e-8, max_iter=10_000, seed=0):
    """Spectral norm by power iteration on the Gram map ``T^* T``.

    Parameters
    ----------
    apply, apply_adjoint : callable
        ``v -> T v`` and ``w -> T^* w``.
    dim : int
        Dimension of the domain of ``T``.
    tol : float
        Relative change of consecutive estimates at which to stop.
    max_iter : int
        Iteration cap; hitting it emits :class:`OperatorNormWarning` and
        returns the current estimate.
    seed : int
        Seed of the random start vector.

    Returns
    -------
    float
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(dim)
    v /= np.linalg.norm(v)
    sigma = 0.0
    for it in range(1, max_iter + 1):
        Tv = np.asarray(apply(v), dtype=float)
        new = float(np.linalg.norm(Tv))
        if new == 0.0:
            return 0.0
        w = np.asarray(apply_adjoint(Tv), dtype=float)
        nw = np.linalg.norm(w)
        if nw == 0.0:
            return new
        v = w / nw
        if abs(new - sigma) <= tol * new:
            logger.debug("operator_norm converged after %d iterations", it)
            return new
        sigma = new
    warnings.warn(f"power iteration did not converge in {max_iter} iterations",
                  OperatorNormWarning, stacklevel=2)
    return sigma


# ---------------------------------------------------------------------------
# kernels
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Kernel:
    """Nonlinear kernel ``M`` together with its warped resolvent.

    Attributes
    ----------
    eval_M : callable
        ``x -> M x``.
    warped_resolvent : callable
        ``z -> (M + A)^{-1} z``.
    lipschitz_L : float
        Lipschitz constant of ``gamma M - S`` w.r.t. ``S``, in ``[0, 1)``.
    gamma : float
        Step size the kernel was built for.
    metric : Metric
    correction : callable, optional
        ``x -> (gamma M - S) x``; derived from ``eval_M`` when omitted.
    trivial : bool
        True when ``gamma M - S`` vanishes, so the momentum is identically 0.
    """

    eval_M: Callable[[np.ndarray], np.ndarray]
    warped_resolvent: Callable[[np.ndarray], np.ndarray]
    lipschitz_L: float
    gamma: float
    metric: Metric
    correction: Optional[Callable[[np.ndarray], np.ndarray]] = None
    trivial: bool = False

    def corr(self, x):
        """Return ``(gamma M - S) x``."""
        if self.trivial:
            return np.zeros_like(x)
        if self.correction is not None:
            return self.correction(x)
        return self.gamma * self.eval_M(x) - self.metric.apply(x)

    def M_from_corr(self, x, cx):
        """``M x`` recovered from a cached ``(gamma M - S) x``."""
        if self.trivial:
            return self.metric.apply(x) / self.gamma
        return (cx + self.metric.apply(x)) / self.gamma


def kernel_classic(metric, gamma, A):
    """Kernel ``M = S / gamma``, for which ``L = 0`` and the momentum vanishes.

    Parameters
    ----------
    metric : Metric
    gamma : float
    A : Resolvent
        Operator whose warped resolvent ``(S / gamma + A)^{-1}`` is needed.

    Raises
    ------
    UnsupportedConfiguration
        For dense metrics combined with a non-zero ``A``.
    """
    if gamma <= 0:
        raise ValueError("gamma must be positive")
    if metric.is_identity:
        def warped(z):
            return A(gamma, gamma * z)
    elif metric.kind == "diagonal":
        d = metric.diag / gamma

        def warped(z):
            return A.solve_diag(z, d)
    elif isinstance(A, ZeroResolvent):
        def warped(z):
            return gamma * metric.apply_inv(z)
    else:
        raise UnsupportedConfiguration(
            "classic kernel with a dense metric needs a user warped resolvent")
    return Kernel(
        eval_M=lambda x: metric.apply(x) / gamma,
        warped_resolvent=warped,
        lipschitz_L=0.0,
        gamma=float(gamma),
        metric=metric,
        trivial=True,
    )


def kernel_lipschitz_split(A1, A2, gamma, metric=None):
    """Kernel ``M = Id / gamma - A2`` absorbing a Lipschitz part of ``A``.

    With ``A = A1 + A2`` one has ``(M + A)^{-1}(w) = J_{gamma A1}(gamma w)`` and
    ``gamma M - Id = -gamma A2``, which is ``gamma * A2.mu``-Lipschitz.

    Parameters
    ----------
    A1 : Resolvent
    A2 : SingleValuedOp
    gamma : float
    metric : Metric, optional
        Must be the identity; other metrics are rejected.
    """
    if gamma <= 0:
        raise ValueError("gamma must be positive")
    if metric is None:
        metric = Metric.identity()
    elif not metric.is_identity:
        raise UnsupportedConfiguration("the split kernel needs the identity metric")

    def eval_M(x):
        return x / gamma - A2(x)

    def corr(x):
        return -gamma * A2(x)

    def warped(w):
        return A1(gamma, gamma * w)

    return Kernel(
        eval_M=eval_M,
        warped_resolvent=warped,
        lipschitz_L=float(gamma * A2.mu),
        gamma=float(gamma),
        metric=metric,
        correction=corr,
    )


# ---------------------------------------------------------------------------
# problem containers
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class OperatorTriple:
    """Problem data of ``0 in Ax + Bx + Cx``.

    ``split`` optionally records the primal/dual boundary of a concatenated
    saddle-point vector.
    """

    A: Resolvent
    B: SingleValuedOp
    C: SingleValuedOp
    metric: Metric
    dim: int
    split: Optional[int] = None

    @property
    def mu(self):
        return self.B.mu

    @property
    def beta(self):
        return self.C.beta

    def with_A(self, A):
        return OperatorTriple(A, self.B, self.C, self.metric, self.dim, self.split)


@dataclass(frozen=True)
class FourOperatorSplit:
    """``0 in A1 x + A2 x + B x + C x`` with ``A2`` Lipschitz and single-valued."""

    A1: Resolvent
    A2: SingleValuedOp
    B: SingleValuedOp
    C: SingleValuedOp
    dim: int
    split: Optional[int] = None

    def as_triple(self):
        """Equivalent triple ``(A1, A2 + B, C)`` under the identity metric."""
        return OperatorTriple(self.A1, self.A2 + self.B, self.C,
                              Metric.identity(self.dim), self.dim, self.split)

    def kernel(self, gamma):
        return kernel_lipschitz_split(self.A1, self.A2, gamma)

    def reduced_triple(self):
        """Triple ``(A1 + A2, B, C)`` whose ``A`` is served by the split kernel.

        Its ``A`` only answers warped-resolvent calls made through
        :meth:`kernel`; plain resolvent calls are not available.
        """
        return OperatorTriple(_SplitA(self.A1, self.A2), self.B, self.C,
                              Metric.identity(self.dim), self.dim, self.split)


class _SplitA(Resolvent):
    """Placeholder for ``A1 + A2``, whose plain resolvent has no closed form."""

    def __init__(self, A1, A2):
        self.A1 = A1
        self.A2 = A2

    def solve_diag(self, z, d):
        raise UnsupportedConfiguration(
            "the resolvent of A1 + A2 is only available through the split kernel")
