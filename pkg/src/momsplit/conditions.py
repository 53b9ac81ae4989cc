"""Step-size conditions and linear-rate constants for the momentum schemes.

Every checker returns signed margins (left side minus ``eps``), so a
nonnegative margin means the condition holds and its size is the slack.
Naming of the Lipschitz constants of ``gamma M_k - S``: ``L_cur`` is the one
of the current iteration, ``L_prev`` of the previous one and ``L_prev2`` of
the one before.
"""

import math
from collections import namedtuple
from dataclasses import dataclass, replace
from typing import Optional

__all__ = [
    "ConditionError",
    "PreconditionError",
    "InfeasibleError",
    "ConstantSet",
    "GammaWindow",
    "check_alg1",
    "check_alg2",
    "check_alg3",
    "alg3_feasible",
    "rate_t_alg1",
    "rate_t_alg2",
    "rate_t_alg3",
    "rate_terms_alg1",
    "rate_terms_alg2",
    "rate_terms_alg3",
    "k1_alg1",
    "k2_alg2",
    "alg3_constants",
    "alpha_floor_alg3",
    "max_gamma",
    "best_gamma_alg3",
    "fbhf_chi",
]

SQRT2P1 = math.sqrt(2.0) + 1.0


class ConditionError(ValueError):
    """A step-size condition required by a rate formula is violated."""


class PreconditionError(ValueError):
    """A standing hypothesis (not a tunable margin) is violated."""


class InfeasibleError(ValueError):
    """No positive step size satisfies the requested condition."""


@dataclass(frozen=True)
class ConstantSet:
    """Constants entering the step-size conditions and rates.

    Parameters
    ----------
    mu : float
        Lipschitz constant of ``B``.
    beta : float
        Cocoercivity constant of ``C``.
    gamma : float
        Current step size.
    L_prev, L_cur, L_prev2 : float
        Lipschitz constants of ``gamma M - S`` at iterations ``k-1``, ``k``
        and ``k-2``, each in ``[0, 1)``.
    gamma_next : float, optional
        Next step size; defaults to ``gamma``.
    rho : float
        Strong monotonicity modulus of ``A``.
    eps : float
        Required slack. Zero is accepted and denotes the limiting case.
    eps1, ..., eps8, alpha : float, optional
        Auxiliary constants of the individual convergence conditions.
    """

    mu: float
    beta: float
    gamma: float
    L_prev: float = 0.0
    L_cur: float = 0.0
    L_prev2: float = 0.0
    gamma_next: Optional[float] = None
    rho: float = 0.0
    eps: float = 1e-6
    eps1: Optional[float] = None
    eps2: Optional[float] = None
    eps3: Optional[float] = None
    eps4: Optional[float] = None
    eps5: Optional[float] = None
    eps6: Optional[float] = None
    eps7: Optional[float] = None
    eps8: Optional[float] = None
    alpha: Optional[float] = None

    def __post_init__(self):
        if self.gamma_next is None:
            object.__setattr__(self, "gamma_next", self.gamma)
        if self.mu < 0:
            raise ValueError("mu must be nonnegative")
        if self.beta < 0:
            raise ValueError("beta must be nonnegative")
        if self.gamma <= 0 or self.gamma_next <= 0:
            raise ValueError("step sizes must be positive")
        for name in ("L_prev", "L_cur", "L_prev2"):
            v = getattr(self, name)
            if not 0.0 <= v < 1.0:
                raise ValueError(f"{name} must lie in [0, 1), got {v}")
        if self.rho < 0:
            raise ValueError("rho must be nonnegative")
        if self.eps < 0:
            raise ValueError("eps must be nonnegative")
        for name in ("eps1", "eps2", "eps3", "eps4", "eps5", "eps6", "eps7",
                     "eps8", "alpha"):
            v = getattr(self, name)
            if v is not None and v <= 0:
                raise ValueError(f"{name} must be positive")

    def with_(self, **kw):
        return replace(self, **kw)

    @classmethod
    def constant(cls, mu, beta, gamma, L=0.0, **kw):
        """All ``L``'s equal and ``gamma_next = gamma``."""
        return cls(mu=mu, beta=beta, gamma=gamma, L_prev=L, L_cur=L, L_prev2=L, **kw)


GammaWindow = namedtuple("GammaWindow", ["lo", "hi"])
GammaWindow.contains = lambda w, g: w.lo <= g <= w.hi


def _need(c, *names):
    missing = [n for n in names if getattr(c, n) is None]
    if missing:
        raise ValueError(f"missing constants: {', '.join(missing)}")


def _ratio(num, den):
    """``num / den`` with a vanishing denominator read as an inactive bound."""
    if den == 0.0:
        return math.inf
    return num / den


# ---------------------------------------------------------------------------
# SFRBS-type scheme
# ---------------------------------------------------------------------------


def _kappa(c):
    return (1.0 - c.L_prev - c.L_cur - c.gamma * c.mu - c.gamma_next * c.mu
            - 0.5 * c.gamma * c.beta)


def check_alg1(c):
    """Margin of the step-size condition of the SFRBS-type scheme.

    Returns ``1 - L_prev - L_cur - gamma mu - gamma_next mu - gamma beta / 2 - eps``.
    """
    return _kappa(c) - c.eps


def k1_alg1(c):
    """Coercivity constant ``1 - L_cur - gamma_next mu`` of the certificate."""
    return 1.0 - c.L_cur - c.gamma_next * c.mu


def rate_terms_alg1(c):
    """The two arguments of the minimum defining the rate ``t``."""
    _need(c, "eps1")
    first = _ratio(2.0 * c.gamma * c.rho, 1.0 + c.L_cur / c.eps1 + c.gamma_next * c.mu)
    second = _ratio(_kappa(c), c.eps1 * c.L_cur + 2.0 * c.gamma_next * c.mu + c.L_cur)
    return first, second


def rate_t_alg1(c):
    """Linear rate ``t`` of the SFRBS-type scheme under strong monotonicity.

    Raises
    ------
    ConditionError
        If the step-size condition fails.
    """
    _need(c, "eps1")
    m = check_alg1(c)
    if m < 0:
        raise ConditionError(f"step-size condition violated (margin {m:.3e})")
    return min(rate_terms_alg1(c))


# ---------------------------------------------------------------------------
# SRFBS-type scheme
# ---------------------------------------------------------------------------


def _pq(c):
    e2 = c.eps2
    gm = c.gamma * c.mu * SQRT2P1
    p = (1.0 - 3.0 * c.L_cur - (2.0 + e2 + 2.0 * e2 * e2) * c.gamma * c.beta / (2.0 * e2)
         - c.L_prev - gm)
    q = 1.0 - c.L_prev - c.L_prev2 - gm
    return p, q


def check_alg2(c):
    """Both margins of the SRFBS-type scheme; requires ``eps2``."""
    _need(c, "eps2")
    p, q = _pq(c)
    return p - c.eps, q - c.eps


def k2_alg2(c):
    """Coercivity constant ``1 - L_cur - gamma mu`` of the certificate."""
    return 1.0 - c.L_cur - c.gamma * c.mu


def rate_terms_alg2(c):
    """The three arguments of the minimum defining ``t`` (displayed form)."""
    _need(c, "eps2", "eps3", "eps4")
    p, q = _pq(c)
    g, mu, e3, e4 = c.gamma, c.mu, c.eps3, c.eps4
    first = _ratio(2.0 * g * c.rho, 1.0 + c.L_cur / e3 + 2.0 * e4 * g * mu)
    second = _ratio(p, 1.0 + 5.0 * c.L_prev + (e3 + 5.0) * c.L_cur + g * c.beta
                    + g * mu * (1.0 / e4 + SQRT2P1))
    third = _ratio(q, g * mu * (2.0 * e4 + 1.0) + 4.0 * c.L_prev)
    return first, second, third


def rate_t_alg2(c):
    """Linear rate ``t`` of the SRFBS-type scheme under strong monotonicity."""
    _need(c, "eps2", "eps3", "eps4")
    m1, m2 = check_alg2(c)
    if m1 < 0 or m2 < 0:
        raise ConditionError(f"step-size conditions violated (margins {m1:.3e}, {m2:.3e})")
    return min(rate_terms_alg2(c))


# ---------------------------------------------------------------------------
# ORFBS-type scheme
# ---------------------------------------------------------------------------


def _denominator3(c):
    D = 1.0 - (1.0 + c.eps6) * c.gamma ** 2 * c.mu ** 2
    if D <= 0:
        raise PreconditionError(
            f"1 - (1 + eps6) gamma^2 mu^2 = {D:.3e} must be positive")
    return D


def alg3_constants(c):
    """Return ``(nu, K, a_rate)`` of the ORFBS-type certificate.

    ``nu`` is the decrease coefficient, ``K`` the weight of
    ``||x_k - x_{k-1}||_S^2`` in the certificate and ``a_rate = K - alpha`` the
    scalar that the rate formula calls ``A`` (renamed to avoid clashing with
    the operator).
    """
    _need(c, "eps5", "eps6", "alpha")
    D = _denominator3(c)
    g, mu = c.gamma, c.mu
    base = g * mu * (c.eps5 * mu + 1.0)
    K = (c.alpha + base) / D
    nu = (1.0 - c.L_prev - c.L_cur - g * c.L_cur ** 2 * mu - 0.5 * g * c.beta
          - g / c.eps5 - K * (1.0 + 1.0 / c.eps6))
    a_rate = (c.alpha * (1.0 + c.eps6) * g * g * mu * mu + base) / D
    return nu, K, a_rate


def check_alg3(c):
    """Margins and step window of the ORFBS-type scheme.

    Returns
    -------
    margin_i : float
        Decrease coefficient minus ``eps``.
    margin_ii : float
        ``1 - eps7 mu (eps5 mu + 1)``; must be strictly positive.
    window : GammaWindow
        Admissible interval for ``gamma``.

    Raises
    ------
    PreconditionError
        If ``1 - (1 + eps6) gamma^2 mu^2 <= 0``.
    """
    _need(c, "eps5", "eps6", "eps7", "alpha")
    nu, _, _ = alg3_constants(c)
    margin_ii = 1.0 - c.eps7 * c.mu * (c.eps5 * c.mu + 1.0)
    if c.mu == 0.0:
        window = GammaWindow(c.eps7, math.inf)
    else:
        scale = (1.0 + c.eps6) * c.mu ** 2
        lo = max(c.eps7, math.sqrt(max(margin_ii, 0.0) / scale))
        window = GammaWindow(lo, math.sqrt(1.0 / scale))
    return nu - c.eps, margin_ii, window


def alg3_feasible(c):
    """True when all three conditions of the ORFBS-type scheme hold."""
    try:
        mi, mii, w = check_alg3(c)
    except PreconditionError:
        return False
    return mi >= 0 and mii > 0 and w.contains(c.gamma)


def alpha_floor_alg3(c):
    """Lower bound that ``alpha`` must exceed for the linear rate."""
    _need(c, "eps6", "eps5", "eps7")
    g, mu = c.gamma, c.mu
    return max(2.0 * g * g * c.rho * mu * mu * (1.0 / c.eps7 - g),
               1.0 - (1.0 + c.eps6) * g * g * mu * mu - g * mu * (c.eps5 * mu + 1.0))


def rate_terms_alg3(c):
    """The four arguments of the minimum defining ``t``."""
    _need(c, "eps5", "eps6", "eps7", "eps8", "alpha")
    nu, K, a_rate = alg3_constants(c)
    g, mu, rho = c.gamma, c.mu, c.rho
    a = g * mu * (1.0 + g * mu)
    b = 1.0 + g * mu * (2.0 + g * mu) + c.L_cur
    cc = 2.0 * g * rho * (1.0 - g * c.eps7)
    # positive root of a t^2 + b t - cc = 0, stable also for a = 0
    disc = math.sqrt(b * b + 4.0 * a * cc)
    first = 2.0 * cc / (b + disc) if b + disc > 0 else 0.0
    second = _ratio(nu, 2.0 * c.L_cur)
    shift = 2.0 * g * g * rho * mu * mu * (1.0 / c.eps7 - g)
    third = _ratio(c.alpha - shift, a_rate + shift)
    fourth = (c.eps8 * (a_rate + c.alpha) - g) / g
    return first, second, third, fourth


def rate_t_alg3(c):
    """Linear rate ``t`` of the ORFBS-type scheme under strong monotonicity.

    Raises
    ------
    ConditionError
        If ``alpha`` does not exceed :func:`alpha_floor_alg3`, or ``eps7``,
        ``eps8`` leave their admissible ranges.
    PreconditionError
        If ``1 - (1 + eps6) gamma^2 mu^2 <= 0``.
    """
    _need(c, "eps5", "eps6", "eps7", "eps8", "alpha")
    _denominator3(c)
    floor = alpha_floor_alg3(c)
    if not c.alpha > floor:
        raise ConditionError(f"alpha = {c.alpha:.6g} must exceed {floor:.6g}")
    if not (c.eps7 < 1.0 and c.eps7 < 1.0 / c.gamma):
        raise ConditionError("eps7 must lie in (0, min(1, 1/gamma))")
    _, K, _ = alg3_constants(c)
    if not (c.gamma / K < c.eps8 < c.gamma):
        raise ConditionError(
            f"eps8 must lie in ({c.gamma / K:.6g}, {c.gamma:.6g})")
    return min(rate_terms_alg3(c))


# ---------------------------------------------------------------------------
# step-size search
# ---------------------------------------------------------------------------


def _margin_fn(tag, mu, beta, L, eps, aux):
    def L_of(g):
        return float(L(g)) if callable(L) else float(L)

    def margin(g):
        Lg = L_of(g)
        if not 0.0 <= Lg < 1.0:
            return -math.inf
        c = ConstantSet.constant(mu, beta, g, Lg, eps=eps, **aux)
        if tag == "alg1":
            return check_alg1(c)
        if tag == "alg2":
            return min(check_alg2(c))
        if tag == "alg3":
            try:
                return alg3_constants(c)[0] - c.eps
            except PreconditionError:
                return -math.inf
        if tag == "fbhf":
            return fbhf_chi(mu, beta) - g - eps
        raise ValueError(f"unknown algorithm tag {tag!r}")

    return margin


def max_gamma(tag, mu, beta, L=0.0, eps=1e-6, tol=1e-12, **aux):
    """Largest constant step size whose margin is nonnegative.

    Parameters
    ----------
    tag : {'alg1', 'alg2', 'alg3', 'fbhf'}
        Which condition to solve. For ``'alg3'`` only the decrease condition
        and the standing hypothesis are used; the step window is reported by
        :func:`check_alg3`.
    mu, beta : float
        Operator constants.
    L : float or callable
        Lipschitz constant of ``gamma M - S``, or a function of ``gamma`` when
        the kernel depends on the step (e.g. ``lambda g: g * L2``).
    eps : float
        Required slack; 0 gives the supremum of the open condition.
    tol : float
        Relative width of the final bisection bracket.
    **aux
        ``eps2`` for 'alg2'; ``eps5``, ``eps6``, ``alpha`` for 'alg3'.

    Returns
    -------
    float
        ``math.inf`` when every step size is admissible.

    Raises
    ------
    InfeasibleError
        If the condition fails for arbitrarily small steps.
    """
    margin = _margin_fn(tag, mu, beta, L, eps, aux)
    lo = 1e-15
    if margin(lo) < 0:
        raise InfeasibleError(f"{tag}: no feasible step size (margin {margin(lo):.3e} at 0+)")
    hi = 1.0
    while margin(hi) >= 0:
        lo = hi
        hi *= 2.0
        if hi > 1e15:
            return math.inf
    while hi - lo > tol * hi:
        mid = 0.5 * (lo + hi)
        if margin(mid) >= 0:
            lo = mid
        else:
            hi = mid
    return lo


def best_gamma_alg3(mu, beta, L=0.0, eps=1e-6, alpha=1e-6, grid=None):
    """Grid search over ``eps5, eps6`` for the largest admissible step.

    Only the decrease condition and the standing hypothesis are enforced.

    Returns
    -------
    gamma : float
    aux : dict
        The ``eps5``, ``eps6`` and ``alpha`` achieving it.
    """
    if grid is None:
        grid = [10.0 ** e for e in [x / 4.0 for x in range(-12, 13)]]
    best = (0.0, None)
    for e5 in grid:
        for e6 in grid:
            aux = {"eps5": e5, "eps6": e6, "alpha": alpha}
            try:
                g = max_gamma("alg3", mu, beta, L, eps, tol=1e-9, **aux)
            except InfeasibleError:
                continue
            if g > best[0]:
                best = (g, aux)
    if best[1] is None:
        raise InfeasibleError("alg3: no feasible step size on the grid")
    return best


def fbhf_chi(mu, beta):
    """Upper step bound ``4 / (beta + sqrt(beta^2 + 16 mu^2))`` of FBHF."""
    den = beta + math.sqrt(beta * beta + 16.0 * mu * mu)
    return math.inf if den == 0 else 4.0 / den
