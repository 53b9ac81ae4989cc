"""Low-level numerical kernels with an optional numba backend.

The capped-simplex projection runs once per iteration inside the portfolio
solvers, so it is compiled with numba when available. Set the environment
variable ``MOMSPLIT_NUMBA=0`` before import to force the pure-numpy path.
Both implementations stay importable for benchmarking.
"""

import os

import numpy as np

try:
    import numba as nb
except ImportError:  # pragma: no cover - numba is a declared dependency
    nb = None

__all__ = [
    "BISECTION_STEPS",
    "NUMBA_ENABLED",
    "capped_simplex_numpy",
    "capped_simplex_numba",
    "capped_simplex",
]

BISECTION_STEPS = 100

_flag = os.environ.get("MOMSPLIT_NUMBA", "1").strip().lower()
NUMBA_ENABLED = nb is not None and _flag not in ("0", "false", "no", "off")


def capped_simplex_numpy(w, d, steps=BISECTION_STEPS):
    """Weighted projection onto ``{x : sum(x) = 1, 0 <= x <= 1}``.

    Solves ``min_x sum_i d_i (x_i - w_i)**2 / 2`` over the capped simplex by
    bisection on the multiplier ``tau`` of ``x_i = clip(w_i - tau / d_i, 0, 1)``,
    followed by an exact update of ``tau`` on the detected free set.

    Parameters
    ----------
    w : ndarray, shape (n,)
        Point to project.
    d : ndarray, shape (n,)
        Positive diagonal weights.
    steps : int
        Number of bisection steps.

    Returns
    -------
    ndarray, shape (n,)
    """
    w = np.asarray(w, dtype=float)
    d = np.asarray(d, dtype=float)
    if w.shape[0] == 1:
        return np.ones(1)
    lo = np.min(d * (w - 1.0))
    hi = np.max(d * w)
    for _ in range(steps):
        tau = 0.5 * (lo + hi)
        s = np.clip(w - tau / d, 0.0, 1.0).sum()
        if s > 1.0:
            lo = tau
        else:
            hi = tau
    tau = 0.5 * (lo + hi)
    t = w - tau / d
    free = (t > 0.0) & (t < 1.0)
    if free.any():
        n_up = np.count_nonzero(t >= 1.0)
        tau_exact = (w[free].sum() + n_up - 1.0) / (1.0 / d[free]).sum()
        t2 = w - tau_exact / d
        # accept the refinement only if it keeps the same active pattern
        if np.all((t2 > 0.0) == (t > 0.0)) and np.all((t2 < 1.0) == (t < 1.0)):
            t = t2
    return np.clip(t, 0.0, 1.0)


if nb is not None:

    @nb.njit(cache=True)
    def _clipped_sum(w, d, tau):
        s = 0.0
        for i in range(w.shape[0]):
            v = w[i] - tau / d[i]
            if v >= 1.0:
                s += 1.0
            elif v > 0.0:
                s += v
        return s

    @nb.njit(cache=True)
    def capped_simplex_numba(w, d, steps=BISECTION_STEPS):
        # ``sum clip(w - tau / d, 0, 1)`` is piecewise linear and nonincreasing
        # in tau with kinks at d (w - 1) and d w; binary search over the sorted
        # kinks isolates the segment crossing 1, where tau is solved exactly.
        # ``steps`` is accepted for signature parity with the numpy path.
        n = w.shape[0]
        out = np.empty(n)
        if n == 1:
            out[0] = 1.0
            return out
        kinks = np.empty(2 * n)
        for i in range(n):
            kinks[2 * i] = d[i] * (w[i] - 1.0)
            kinks[2 * i + 1] = d[i] * w[i]
        kinks.sort()
        lo, hi = 0, 2 * n - 1  # s(kinks[lo]) = n >= 1, s(kinks[hi]) = 0 < 1
        while hi - lo > 1:
            mid = (lo + hi) // 2
            if _clipped_sum(w, d, kinks[mid]) >= 1.0:
                lo = mid
            else:
                hi = mid
        t_mid = 0.5 * (kinks[lo] + kinks[hi])
        sw = 0.0
        sinv = 0.0
        n_up = 0
        for i in range(n):
            v = w[i] - t_mid / d[i]
            if v >= 1.0:
                n_up += 1
            elif v > 0.0:
                sw += w[i]
                sinv += 1.0 / d[i]
        tau = (sw + n_up - 1.0) / sinv if sinv > 0.0 else t_mid
        for i in range(n):
            v = w[i] - tau / d[i]
            out[i] = min(max(v, 0.0), 1.0)
        return out

else:  # pragma: no cover
    capped_simplex_numba = None


def capped_simplex(w, d):
    """Dispatch to the numba kernel when enabled, else to numpy."""
    if NUMBA_ENABLED:
        return capped_simplex_numba(
            np.ascontiguousarray(w, dtype=np.float64),
            np.ascontiguousarray(d, dtype=np.float64),
        )
    return capped_simplex_numpy(w, d)
