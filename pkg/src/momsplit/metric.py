"""Vector arithmetic under a strongly positive self-adjoint metric ``S``."""

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from scipy import linalg

__all__ = [
    "MetricError",
    "Metric",
    "s_inner",
    "s_norm",
    "s_inv_norm",
    "check_finite",
]


class MetricError(ValueError):
    """Raised when a supplied metric is not strongly positive."""


@dataclass(frozen=True)
class Metric:
    """Linear metric ``S`` given through its action and inverse action.

    Parameters
    ----------
    apply : callable
        ``v -> S v``.
    apply_inv : callable
        ``v -> S^{-1} v``.
    c : float
        Strong monotonicity constant, ``<Sv, v> >= c ||v||^2``.
    dim : int
        Dimension of the underlying space.
    diag : ndarray, optional
        Diagonal of ``S`` when ``S`` is diagonal. Resolvents of separable
        sets use it to evaluate metric-weighted projections in closed form.
    """

    apply: Callable[[np.ndarray], np.ndarray]
    apply_inv: Callable[[np.ndarray], np.ndarray]
    c: float
    dim: int
    diag: Optional[np.ndarray] = None
    kind: str = "custom"

    @property
    def is_identity(self):
        return self.kind == "identity"

    @classmethod
    def identity(cls, dim=None):
        """Identity metric; ``dim=None`` leaves the dimension unchecked."""
        ones = None if dim is None else np.ones(dim)
        return cls(lambda v: v, lambda v: v, 1.0, -1 if dim is None else int(dim),
                   ones, "identity")

    @classmethod
    def diagonal(cls, s):
        """Diagonal metric ``S = diag(s)`` with ``s > 0``."""
        s = np.asarray(s, dtype=float).copy()
        if s.ndim != 1 or s.size == 0:
            raise ValueError("diagonal metric needs a non-empty 1-d array")
        if not np.all(np.isfinite(s)) or np.any(s <= 0):
            raise MetricError("diagonal metric entries must be finite and positive")
        s.flags.writeable = False
        inv = 1.0 / s
        return cls(lambda v: s * v, lambda v: inv * v, float(s.min()), s.size, s,
                   "diagonal")

    @classmethod
    def from_matrix(cls, S, symmetry_tol=1e-10):
        """Dense SPD metric, factorized once by Cholesky.

        Raises
        ------
        MetricError
            If ``S`` is not symmetric positive definite.
        """
        S = np.array(S, dtype=float)
        if S.ndim != 2 or S.shape[0] != S.shape[1]:
            raise ValueError("metric matrix must be square")
        scale = max(1.0, np.abs(S).max())
        if np.abs(S - S.T).max() > symmetry_tol * scale:
            raise MetricError("metric matrix is not symmetric")
        S = 0.5 * (S + S.T)
        try:
            factor = linalg.cho_factor(S, lower=True)
        except linalg.LinAlgError as exc:
            raise MetricError("metric matrix is not positive definite") from exc
        c = float(linalg.eigvalsh(S, subset_by_index=[0, 0])[0])
        if c <= 0:
            raise MetricError("metric matrix is not positive definite")
        S.flags.writeable = False
        return cls(
            lambda v: S @ v,
            lambda v: linalg.cho_solve(factor, v),
            c,
            S.shape[0],
            None,
            "dense",
        )


def _check_dims(m, *vs):
    if m.dim < 0:
        return
    for v in vs:
        if v.shape != (m.dim,):
            raise ValueError(f"expected vector of length {m.dim}, got shape {v.shape}")


def check_finite(v, name="vector"):
    """Reject NaN or infinite entries at a module boundary."""
    v = np.asarray(v, dtype=float)
    if not np.all(np.isfinite(v)):
        raise ValueError(f"{name} contains non-finite entries")
    return v


def s_inner(m, u, v):
    """Return ``<S u, v>``."""
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    _check_dims(m, u, v)
    return float(np.dot(m.apply(u), v))


def _sqrt_form(q, v):
    if q < 0:
        # tolerate rounding on tiny vectors only
        if q < -1e-12 * max(1.0, float(np.dot(v, v))):
            raise MetricError("negative quadratic form; metric is not positive")
        q = 0.0
    return float(np.sqrt(q))


def s_norm(m, v):
    """Return ``||v||_S``."""
    v = np.asarray(v, dtype=float)
    _check_dims(m, v)
    return _sqrt_form(float(np.dot(m.apply(v), v)), v)


def s_inv_norm(m, v):
    """Return ``||v||_{S^{-1}}``."""
    v = np.asarray(v, dtype=float)
    _check_dims(m, v)
    return _sqrt_form(float(np.dot(m.apply_inv(v), v)), v)
