"""Concrete test problems: random constrained QPs and mean-variance portfolios.

Both families are saddle-point problems of a Lagrangian with affine
constraints ``g(x) = D x + b <= 0``. The primal-dual iterate ``(x, u)`` is a
single vector of length ``n + q`` whose first ``n`` entries are primal.
"""

import logging
import os
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy import linalg

from .metric import Metric
from .operators import (
    BoxResolvent,
    CappedSimplexResolvent,
    FourOperatorSplit,
    NonnegResolvent,
    OperatorTriple,
    ProductResolvent,
    SingleValuedOp,
    operator_norm,
    project_capped_simplex,
    quad_grad_operator,
    saddle_operator,
)

__all__ = [
    "DataParseError",
    "DataError",
    "QpInstance",
    "PortfolioInstance",
    "DatasetFile",
    "build_qp",
    "split_half",
    "parse_or_library",
    "parse_csv_cov",
    "load_dataset",
    "build_portfolio",
    "objective_portfolio",
    "PORTFOLIO_FLOOR",
]

logger = logging.getLogger(__name__)

#: minimum weight of each asset group in the portfolio problem
PORTFOLIO_FLOOR = 0.3


class DataParseError(ValueError):
    """Malformed dataset file; ``lineno`` is 1-based."""

    def __init__(self, path, lineno, msg):
        super().__init__(f"{path}:{lineno}: {msg}")
        self.path = path
        self.lineno = lineno


class DataError(ValueError):
    """Dataset parsed but its content is unusable (e.g. indefinite covariance)."""


# ---------------------------------------------------------------------------
# random QP
# ---------------------------------------------------------------------------


@dataclass
class QpInstance:
    """``min ||G x - b||^2 / 2`` over ``x in [0, 1]^N`` subject to ``D x <= 0``.

    Attributes
    ----------
    G : ndarray, shape (m, N)
    D : ndarray, shape (q, N)
    b : ndarray, shape (m,)
    seed : int
    mu : float
        ``||D||``, the Lipschitz constant of the saddle operator.
    beta : float
        ``||G||^2``, the cocoercivity constant of the gradient.
    z0 : ndarray, shape (N + q,)
        Starting point, uniform primal part and zero dual part.
    """

    G: np.ndarray
    D: np.ndarray
    b: np.ndarray
    seed: Optional[int]
    mu: float
    beta: float
    z0: np.ndarray
    _B: SingleValuedOp = field(repr=False, default=None)
    _C: SingleValuedOp = field(repr=False, default=None)

    @property
    def N(self):
        return self.G.shape[1]

    @property
    def q(self):
        return self.D.shape[0]

    @property
    def dim(self):
        return self.N + self.q

    def A(self, rho=0.0):
        A = ProductResolvent([(self.N, BoxResolvent(0.0, 1.0)), (self.q, NonnegResolvent())])
        return A.shifted(rho) if rho > 0 else A

    def triple(self, rho=0.0):
        """Problem as ``A + B + C``; ``rho > 0`` adds ``rho Id`` to ``A``."""
        return OperatorTriple(self.A(rho), self._B, self._C, Metric.identity(self.dim),
                              self.dim, self.N)

    def split(self, rho=0.0):
        """Four-operator form ``A1 = A``, ``A2 = B / 2``, ``B = B / 2``, ``C``."""
        B1, B2 = split_half(self._B)
        return FourOperatorSplit(self.A(rho), B1, B2, self._C, self.dim, self.N)

    def objective(self, z):
        r = self.G @ z[:self.N] - self.b
        return 0.5 * float(r @ r)


def build_qp(m, q, seed=None, tol=1e-8, max_iter=10_000):
    """Random QP saddle-point instance with ``N = 2 m`` primal variables.

    Entries of ``G`` and ``D`` are i.i.d. ``N(0, 1) / sqrt(N)``, ``b`` is
    standard normal and the starting primal point is uniform on ``[0, 1]^N``
    with a zero dual part.

    Returns
    -------
    QpInstance, OperatorTriple
    """
    if m < 1 or q < 1:
        raise ValueError("m and q must be at least 1")
    N = 2 * m
    rng = np.random.default_rng(seed)
    G = rng.standard_normal((m, N)) / np.sqrt(N)
    D = rng.standard_normal((q, N)) / np.sqrt(N)
    b = rng.standard_normal(m)
    z0 = np.concatenate([rng.uniform(0.0, 1.0, N), np.zeros(q)])
    Dt = D.T.copy()
    mu = operator_norm(lambda v: D @ v, lambda v: Dt @ v, N, tol=tol, max_iter=max_iter)
    Gt = G.T.copy()
    g_norm = operator_norm(lambda v: G @ v, lambda v: Gt @ v, N, tol=tol, max_iter=max_iter)
    B = saddle_operator(D, None, norm=mu)
    C = quad_grad_operator(G, b, n_dual=q, norm=g_norm)
    inst = QpInstance(G, D, b, seed, mu, g_norm ** 2, z0, B, C)
    return inst, inst.triple()


def split_half(B):
    """Split ``B`` into two equal halves, each ``mu / 2``-Lipschitz."""
    f = B.fn

    def half(z):
        return 0.5 * f(z)

    h = SingleValuedOp(half, mu=0.5 * B.mu, beta=None if B.beta is None else 2.0 * B.beta,
                       rho=0.5 * B.rho)
    return h, h


# ---------------------------------------------------------------------------
# datasets
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DatasetFile:
    """Path to a dataset plus its layout tag ('or-library-port' or 'csv-cov')."""

    path: str
    format: str = "or-library-port"


def _assemble_check(H, path):
    H = 0.5 * (H + H.T)
    lam = linalg.eigvalsh(H)
    if lam[0] < -1e-10:
        raise DataError(f"{path}: covariance has eigenvalue {lam[0]:.3e} < 0")
    return H


def parse_or_library(file):
    """Read an OR-Library ``port`` file.

    Layout: asset count ``n``; then ``n`` lines ``mean std``; then lines
    ``i j corr`` with 1-based indices. Self-pairs may be omitted.

    Returns
    -------
    means : ndarray, shape (n,)
    H : ndarray, shape (n, n)
        ``H_ij = corr_ij * std_i * std_j``.
    """
    path = file.path if isinstance(file, DatasetFile) else str(file)
    with open(path) as fh:
        lines = [(i + 1, ln.split()) for i, ln in enumerate(fh)]
    lines = [(i, t) for i, t in lines if t]
    if not lines:
        raise DataParseError(path, 1, "empty file")
    lineno, tok = lines[0]
    try:
        n = int(tok[0])
    except (ValueError, IndexError):
        raise DataParseError(path, lineno, "expected the number of assets") from None
    if n < 1 or len(tok) != 1:
        raise DataParseError(path, lineno, "expected a single positive asset count")
    if len(lines) < n + 1:
        raise DataParseError(path, lines[-1][0], f"expected {n} mean/std lines")
    means = np.empty(n)
    std = np.empty(n)
    for idx in range(n):
        lineno, tok = lines[1 + idx]
        if len(tok) != 2:
            raise DataParseError(path, lineno, "expected 'mean std'")
        try:
            means[idx], std[idx] = float(tok[0]), float(tok[1])
        except ValueError:
            raise DataParseError(path, lineno, "non-numeric mean/std") from None
        if std[idx] < 0:
            raise DataParseError(path, lineno, "negative standard deviation")
    corr = np.full((n, n), np.nan)
    for lineno, tok in lines[n + 1:]:
        if len(tok) != 3:
            raise DataParseError(path, lineno, "expected 'i j corr'")
        try:
            i, j, c = int(tok[0]) - 1, int(tok[1]) - 1, float(tok[2])
        except ValueError:
            raise DataParseError(path, lineno, "non-numeric correlation entry") from None
        if not (0 <= i < n and 0 <= j < n):
            raise DataParseError(path, lineno, f"asset index out of range 1..{n}")
        corr[i, j] = c
        corr[j, i] = c
    np.fill_diagonal(corr, np.where(np.isnan(np.diag(corr)), 1.0, np.diag(corr)))
    if np.isnan(corr).any():
        i, j = np.argwhere(np.isnan(corr))[0]
        raise DataError(f"{path}: missing correlation for pair ({i + 1}, {j + 1})")
    H = corr * np.outer(std, std)
    return means, _assemble_check(H, path)


def parse_csv_cov(file):
    """CSV layout: first row means, next ``n`` rows the covariance matrix."""
    path = file.path if isinstance(file, DatasetFile) else str(file)
    rows = []
    with open(path) as fh:
        for lineno, ln in enumerate(fh, 1):
            if not ln.strip():
                continue
            try:
                rows.append((lineno, [float(v) for v in ln.replace(";", ",").split(",")]))
            except ValueError:
                raise DataParseError(path, lineno, "non-numeric entry") from None
    if not rows:
        raise DataParseError(path, 1, "empty file")
    means = np.array(rows[0][1])
    n = means.size
    if len(rows) != n + 1:
        raise DataParseError(path, rows[-1][0], f"expected {n} covariance rows")
    for lineno, r in rows[1:]:
        if len(r) != n:
            raise DataParseError(path, lineno, f"expected {n} entries")
    H = np.array([r for _, r in rows[1:]])
    return means, _assemble_check(H, path)


def load_dataset(file):
    """Dispatch on :attr:`DatasetFile.format`."""
    if file.format == "or-library-port":
        return parse_or_library(file)
    if file.format == "csv-cov":
        return parse_csv_cov(file)
    raise ValueError(f"unknown dataset format {file.format!r}")


# ---------------------------------------------------------------------------
# portfolio
# ---------------------------------------------------------------------------


@dataclass
class PortfolioInstance:
    """Mean-variance portfolio ``min x^T H x / 2`` with group floors.

    Constraints: ``m^T x >= r``, each group sum ``>= floor``, ``x`` in the
    capped simplex. Written as ``g(x) = D x + b <= 0`` with
    ``D = [-m^T; -1_{group}^T ...]`` and ``b = (r, floor, ...)``.
    """

    H: np.ndarray
    means: np.ndarray
    r: float
    groups: Sequence[int]
    D: np.ndarray
    b: np.ndarray
    mu: float
    beta: float
    _B: SingleValuedOp = field(repr=False, default=None)
    _C: SingleValuedOp = field(repr=False, default=None)

    @property
    def n(self):
        return self.H.shape[0]

    @property
    def q(self):
        return self.D.shape[0]

    @property
    def dim(self):
        return self.n + self.q

    def A(self, rho=0.0):
        A = ProductResolvent([(self.n, CappedSimplexResolvent()),
                              (self.q, NonnegResolvent())])
        return A.shifted(rho) if rho > 0 else A

    def triple(self):
        return OperatorTriple(self.A(), self._B, self._C, Metric.identity(self.dim),
                              self.dim, self.n)

    def split(self):
        B1, B2 = split_half(self._B)
        return FourOperatorSplit(self.A(), B1, B2, self._C, self.dim, self.n)

    def start(self):
        """Equal weights and zero multipliers."""
        return np.concatenate([np.full(self.n, 1.0 / self.n), np.zeros(self.q)])

    def objective(self, z):
        return objective_portfolio(self.H, z[:self.n])

    def constraints(self, x):
        return self.D @ x + self.b

    def kkt_residuals(self, z):
        """Computable saddle-point conditions at a primal-dual pair ``z``.

        Returns
        -------
        dict
            ``stationarity``: ``||x - P(x - (H x + D^T u))||`` with ``P`` the
            capped-simplex projection; ``complementarity``: ``max |u_i g_i(x)|``;
            ``primal``: worst violation of ``g(x) <= 0`` and of the capped
            simplex; ``dual``: most negative multiplier (as a positive number).
        """
        x, u = z[:self.n], z[self.n:]
        grad = self.H @ x + self.D.T @ u
        stat = float(np.linalg.norm(x - project_capped_simplex(x - grad)))
        g = self.constraints(x)
        primal = max(float(g.max(initial=0.0)), abs(float(x.sum()) - 1.0),
                     float(-x.min(initial=0.0)), float(x.max(initial=0.0) - 1.0))
        return {
            "stationarity": stat,
            "complementarity": float(np.abs(u * g).max(initial=0.0)),
            "primal": max(primal, 0.0),
            "dual": float(max(-u.min(initial=0.0), 0.0)),
        }


def _groups_matrix(n, groups):
    if sum(groups) != n:
        raise ValueError(f"group sizes {list(groups)} do not sum to {n}")
    rows = np.zeros((len(groups), n))
    start = 0
    for i, g in enumerate(groups):
        rows[i, start:start + g] = -1.0
        start += g
    return rows


def build_portfolio(means, H, r, groups=None, floor=PORTFOLIO_FLOOR, tol=1e-8):
    """Portfolio saddle-point problem.

    Parameters
    ----------
    means : array_like, shape (n,)
    H : array_like, shape (n, n)
        Covariance matrix.
    r : float
        Target expected return.
    groups : sequence of int, optional
        Consecutive group sizes; three blocks of 75 when ``n = 225``.
    floor : float
        Minimum total weight of each group.

    Returns
    -------
    PortfolioInstance, OperatorTriple
    """
    means = np.asarray(means, dtype=float)
    H = np.asarray(H, dtype=float)
    n = means.size
    if H.shape != (n, n):
        raise ValueError(f"covariance shape {H.shape} does not match {n} assets")
    if groups is None:
        if n != 225:
            raise ValueError("group structure required unless n = 225")
        groups = (75, 75, 75)
    D = np.vstack([-means[None, :], _groups_matrix(n, groups)])
    b = np.concatenate([[r], np.full(len(groups), floor)])
    Dt = D.T.copy()
    mu = operator_norm(lambda v: D @ v, lambda v: Dt @ v, n, tol=tol)
    beta = operator_norm(lambda v: H @ v, lambda v: H @ v, n, tol=tol)
    q = D.shape[0]
    B = saddle_operator(D, b, norm=mu)

    def c_fn(z):
        out = np.zeros(n + q)
        out[:n] = H @ z[:n]
        return out

    C = SingleValuedOp(c_fn, mu=beta, beta=beta)
    inst = PortfolioInstance(H, means, float(r), tuple(groups), D, b, mu, beta, B, C)
    return inst, inst.triple()


def objective_portfolio(H, x):
    """``x^T H x / 2``."""
    H = np.asarray(H)
    x = np.asarray(x, dtype=float)
    if H.shape != (x.size, x.size):
        raise ValueError(f"shape mismatch: H{H.shape}, x{x.shape}")
    return 0.5 * float(x @ (H @ x))


def default_port5_path():
    """Location of the OR-Library ``port5`` file, from ``MOMSPLIT_PORT5`` if set."""
    return os.environ.get("MOMSPLIT_PORT5", os.path.join("data", "port5.txt"))
