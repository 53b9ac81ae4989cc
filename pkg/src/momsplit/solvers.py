"""Momentum splitting schemes, classical baselines and the run driver.

All iterates live in one flat vector; saddle-point problems store the primal
and dual parts back to back. Each step function takes a :class:`SolverState`
holding ``x_k`` and the cached history, and returns the next state. The
history conventions are ``x_{-1} = x_0``, ``y_{-1} = x_0`` and
``B x_{-1} = B x_0``, the latter taken from the fresh evaluation at ``x_0`` so
no extra operator call is spent on initialization.
"""

import csv
import json
import logging
import math
import time
import warnings
from dataclasses import dataclass, field, replace
from typing import Any, Callable, Dict, List, Optional, Union

import numpy as np

from . import conditions as cond
from .operators import FourOperatorSplit, Kernel, OperatorTriple, kernel_classic

__all__ = [
    "ALGORITHMS",
    "SolverError",
    "MarginWarning",
    "SolverState",
    "StopRule",
    "SolverConfig",
    "Trace",
    "init_state",
    "step_alg1",
    "step_alg2",
    "step_alg3",
    "step_sfrbs",
    "step_srfbs",
    "step_orfbs",
    "step_fbhf",
    "step_four_op_sfrbs",
    "step_new_orfbs",
    "run",
]

logger = logging.getLogger(__name__)

ALGORITHMS = ("alg1", "alg2", "alg3", "sfrbs", "srfbs", "orfbs", "fbhf",
              "four-op", "new-orfbs")

#: iterates whose norm exceeds this are declared divergent
DIVERGENCE_NORM = 1e12


class SolverError(RuntimeError):
    """A backward step failed; carries the iteration index."""

    def __init__(self, k, cause):
        super().__init__(f"iteration {k}: {cause}")
        self.k = k


class MarginWarning(UserWarning):
    """The step-size conditions do not hold for the configured run."""


@dataclass
class SolverState:
    """Iterate ``x_k`` plus the history the schemes and certificates need.

    Attributes
    ----------
    x, x_prev, x_prev2 : ndarray
        ``x_k``, ``x_{k-1}``, ``x_{k-2}``.
    u, u_prev : ndarray
        Momentum terms ``u_k`` and ``u_{k-1}``.
    y_prev : ndarray
        ``y_{k-1}`` (reflected point or inner backward-step output).
    k : int
    Bx_prev : ndarray or None
        Cached ``B x_{k-1}``; ``None`` before the first step.
    By_prev : ndarray or None
        Cached ``B y_{k-1}`` (reflected-point scheme).
    cx : ndarray or None
        Cached ``(gamma M - S) x_k`` for ``cx_kernel``.
    cache : dict
        Scheme-specific cached evaluations (e.g. ``A2`` values).
    """

    x: np.ndarray
    x_prev: np.ndarray
    x_prev2: np.ndarray
    u: np.ndarray
    u_prev: np.ndarray
    y_prev: np.ndarray
    k: int = 0
    Bx_prev: Optional[np.ndarray] = None
    By_prev: Optional[np.ndarray] = None
    cx: Optional[np.ndarray] = None
    cx_kernel: Optional[Kernel] = None
    cache: Dict[str, Any] = field(default_factory=dict)


def init_state(x0, u0=None):
    """State at ``k = 0`` with ``x_{-1} = y_{-1} = x_0`` and ``u_0`` (default 0)."""
    x0 = np.array(x0, dtype=float)
    if not np.all(np.isfinite(x0)):
        raise ValueError("x0 contains non-finite entries")
    u0 = np.zeros_like(x0) if u0 is None else np.array(u0, dtype=float)
    if u0.shape != x0.shape:
        raise ValueError("u0 and x0 shapes differ")
    if not np.all(np.isfinite(u0)):
        raise ValueError("u0 contains non-finite entries")
    return SolverState(x=x0, x_prev=x0, x_prev2=x0, u=u0, u_prev=u0, y_prev=x0)


def _gamma(kernel, gamma):
    if gamma is None:
        return kernel.gamma
    if not math.isclose(gamma, kernel.gamma, rel_tol=1e-14):
        raise ValueError(f"gamma {gamma} differs from the kernel step {kernel.gamma}")
    return gamma


def _backward(fn, z, k):
    try:
        out = fn(z)
    except (ValueError, ArithmeticError, np.linalg.LinAlgError) as exc:
        raise SolverError(k, exc) from exc
    return out


def _cx(state, kernel):
    if state.cx is not None and state.cx_kernel is kernel:
        return state.cx
    return kernel.corr(state.x)


def _advance(state, x_new, **kw):
    return SolverState(
        x=x_new,
        x_prev=state.x,
        x_prev2=state.x_prev,
        u=kw.pop("u", state.u),
        u_prev=state.u,
        y_prev=kw.pop("y_prev", state.x),
        k=state.k + 1,
        **kw,
    )


def _momentum(kernel, c_new, c_old):
    if kernel.trivial:
        return np.zeros_like(c_new)
    return c_new - c_old


# ---------------------------------------------------------------------------
# momentum schemes
# ---------------------------------------------------------------------------


def step_alg1(state, triple, kernel, gamma=None):
    """Semi-forward-reflected-backward step with nonlinear momentum.

    ``x_{k+1} = (M + A)^{-1}(M x_k - 2 B x_k + B x_{k-1} - C x_k + u_k / gamma)``
    followed by ``u_{k+1} = (gamma M - S) x_{k+1} - (gamma M - S) x_k``.
    The kernel may change from one call to the next (step-size schedules).
    """
    g = _gamma(kernel, gamma)
    x = state.x
    Bx = triple.B(x)
    Bx_prev = Bx if state.Bx_prev is None else state.Bx_prev
    Cx = triple.C(x)
    cx = _cx(state, kernel)
    z = kernel.M_from_corr(x, cx) - 2.0 * Bx + Bx_prev - Cx
    if not kernel.trivial:
        z = z + state.u / g
    x_new = _backward(kernel.warped_resolvent, z, state.k)
    c_new = kernel.corr(x_new)
    return _advance(state, x_new, u=_momentum(kernel, c_new, cx), Bx_prev=Bx,
                    cx=c_new, cx_kernel=kernel)


def step_alg2(state, triple, kernel, gamma=None):
    """Semi-reflected-forward-backward step with nonlinear momentum.

    ``y_k = 2 x_k - x_{k-1}`` and
    ``x_{k+1} = (M + A)^{-1}(M x_k - B y_k - C x_k + u_k / gamma)``.
    """
    g = _gamma(kernel, gamma)
    x = state.x
    y = 2.0 * x - state.x_prev
    By = triple.B(y)
    Cx = triple.C(x)
    cx = _cx(state, kernel)
    z = kernel.M_from_corr(x, cx) - By - Cx
    if not kernel.trivial:
        z = z + state.u / g
    x_new = _backward(kernel.warped_resolvent, z, state.k)
    c_new = kernel.corr(x_new)
    return _advance(state, x_new, u=_momentum(kernel, c_new, cx), y_prev=y,
                    By_prev=By, cx=c_new, cx_kernel=kernel)


def step_alg3(state, triple, kernel, gamma=None):
    """Outer-reflected forward-backward step with nonlinear momentum.

    ``y_k = (M + A)^{-1}(M x_k - (B + C) x_k + u_k / gamma)``,
    ``x_{k+1} = y_k - gamma S^{-1}(B x_k - B x_{k-1})`` and
    ``u_{k+1} = (gamma M - S) y_k - (gamma M - S) x_k``.
    """
    g = _gamma(kernel, gamma)
    x = state.x
    Bx = triple.B(x)
    Bx_prev = Bx if state.Bx_prev is None else state.Bx_prev
    Cx = triple.C(x)
    cx = _cx(state, kernel)
    z = kernel.M_from_corr(x, cx) - (Bx + Cx)
    if not kernel.trivial:
        z = z + state.u / g
    y = _backward(kernel.warped_resolvent, z, state.k)
    x_new = y - g * kernel.metric.apply_inv(Bx - Bx_prev)
    u_new = _momentum(kernel, kernel.corr(y), cx)
    return _advance(state, x_new, u=u_new, y_prev=y, Bx_prev=Bx)


# ---------------------------------------------------------------------------
# classical baselines (identity metric)
# ---------------------------------------------------------------------------


def _resolvent(triple, gamma, z, k):
    try:
        return triple.A(gamma, z)
    except (ValueError, ArithmeticError) as exc:
        raise SolverError(k, exc) from exc


def step_sfrbs(state, triple, gamma):
    """``x_{k+1} = J_{gamma A}(x_k - 2 gamma B x_k + gamma B x_{k-1} - gamma C x_k)``."""
    x = state.x
    Bx = triple.B(x)
    Bx_prev = Bx if state.Bx_prev is None else state.Bx_prev
    Cx = triple.C(x)
    x_new = _resolvent(triple, gamma, x - 2.0 * gamma * Bx + gamma * Bx_prev - gamma * Cx,
                       state.k)
    return _advance(state, x_new, Bx_prev=Bx)


def step_srfbs(state, triple, gamma):
    """``x_{k+1} = J_{gamma A}(x_k - gamma B(2 x_k - x_{k-1}) - gamma C x_k)``."""
    x = state.x
    y = 2.0 * x - state.x_prev
    By = triple.B(y)
    Cx = triple.C(x)
    x_new = _resolvent(triple, gamma, x - gamma * By - gamma * Cx, state.k)
    return _advance(state, x_new, y_prev=y, By_prev=By)


def step_orfbs(state, triple, gamma):
    """``x_{k+1} = J_{gamma A}(x_k - gamma (B + C) x_k) - gamma (B x_k - B x_{k-1})``."""
    x = state.x
    Bx = triple.B(x)
    Bx_prev = Bx if state.Bx_prev is None else state.Bx_prev
    Cx = triple.C(x)
    y = _resolvent(triple, gamma, x - gamma * Bx - gamma * Cx, state.k)
    x_new = y - gamma * (Bx - Bx_prev)
    return _advance(state, x_new, y_prev=y, Bx_prev=Bx)


def step_fbhf(state, triple, gamma):
    """Forward-backward-half-forward step; two ``B`` and one ``C`` evaluation.

    ``y_k = J_{gamma A}(x_k - gamma (B + C) x_k)`` and
    ``x_{k+1} = y_k + gamma (B x_k - B y_k)``.
    """
    x = state.x
    Bx = triple.B(x)
    Cx = triple.C(x)
    y = _resolvent(triple, gamma, x - gamma * (Bx + Cx), state.k)
    x_new = y + gamma * (Bx - triple.B(y))
    return _advance(state, x_new, y_prev=y)


def step_four_op_sfrbs(state, A1, A2, B, C, gamma):
    """Four-operator forward-reflected step for ``A1 + A2 + B + C``.

    ``x_{k+1} = J_{gamma A1}(x_k - 2 gamma A2 x_k - 2 gamma B x_k + gamma B x_{k-1}
    + gamma A2 x_{k-1} - gamma C x_k)``.
    """
    x = state.x
    Ax = A2(x)
    Ax_prev = state.cache.get("A2x_prev", Ax)
    Bx = B(x)
    Bx_prev = Bx if state.Bx_prev is None else state.Bx_prev
    Cx = C(x)
    z = (x - 2.0 * gamma * Ax - 2.0 * gamma * Bx + gamma * Bx_prev + gamma * Ax_prev
         - gamma * Cx)
    try:
        x_new = A1(gamma, z)
    except (ValueError, ArithmeticError) as exc:
        raise SolverError(state.k, exc) from exc
    return _advance(state, x_new, Bx_prev=Bx, cache={"A2x_prev": Ax})


def step_new_orfbs(state, A1, A2, B, C, gamma):
    """Outer-reflected step with ``A2`` moved into the kernel.

    ``y_k = J_{gamma A1}(x_k - gamma (A2 + B + C) x_k - gamma (A2 y_{k-1} - A2 x_{k-1}))``
    and ``x_{k+1} = y_k - gamma B x_k + gamma B x_{k-1}``.
    """
    x = state.x
    Ax = A2(x)
    Ay_prev = state.cache.get("A2y_prev")
    Ax_prev = state.cache.get("A2x_prev")
    Bx = B(x)
    Bx_prev = Bx if state.Bx_prev is None else state.Bx_prev
    Cx = C(x)
    z = x - gamma * (Ax + Bx + Cx)
    if Ay_prev is not None:
        z = z - gamma * (Ay_prev - Ax_prev)
    try:
        y = A1(gamma, z)
    except (ValueError, ArithmeticError) as exc:
        raise SolverError(state.k, exc) from exc
    x_new = y - gamma * Bx + gamma * Bx_prev
    return _advance(state, x_new, y_prev=y, Bx_prev=Bx,
                    cache={"A2y_prev": A2(y), "A2x_prev": Ax})


# ---------------------------------------------------------------------------
# run driver
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class StopRule:
    """Stopping rule on the relative change ``E_k`` of the full iterate.

    ``E_k = ||x_{k+1} - x_k|| / ||x_k||`` with the Euclidean norm.
    ``residual_tol`` optionally adds a fixed-point residual test, which costs
    one extra resolvent and forward evaluation per iteration.
    """

    rel_change_tol: float = 1e-6
    residual_tol: Optional[float] = None
    max_iter: int = 100_000

    def __post_init__(self):
        if self.rel_change_tol <= 0:
            raise ValueError("rel_change_tol must be positive")
        if self.residual_tol is not None and self.residual_tol <= 0:
            raise ValueError("residual_tol must be positive")
        if self.max_iter < 1:
            raise ValueError("max_iter must be at least 1")


@dataclass
class SolverConfig:
    """Configuration of a single run.

    Attributes
    ----------
    algorithm : str
        One of :data:`ALGORITHMS`.
    gamma : float, optional
        Constant step size; taken from ``kernel`` when omitted.
    kernel : Kernel or callable, optional
        Kernel, or ``k -> Kernel`` schedule (first scheme only). Defaults to
        the classical kernel for the momentum schemes, or to the split kernel
        when the problem is a :class:`FourOperatorSplit`.
    constants : ConstantSet, optional
        Used to check the step-size conditions before running.
    stop : StopRule
    record_certificates : bool
        Attach ``observer`` output to the trace.
    observer : callable, optional
        ``(state) -> float`` evaluated after each step.
    known_solution : ndarray, optional
        Reference point; its ``S``-distance is recorded every iteration.
    """

    algorithm: str
    gamma: Optional[float] = None
    kernel: Optional[Union[Kernel, Callable[[int], Kernel]]] = None
    constants: Optional[cond.ConstantSet] = None
    stop: StopRule = field(default_factory=StopRule)
    record_certificates: bool = False
    observer: Optional[Callable[[SolverState], float]] = None
    known_solution: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.algorithm not in ALGORITHMS:
            raise ValueError(f"unknown algorithm {self.algorithm!r}")
        if self.gamma is not None and self.gamma <= 0:
            raise ValueError("gamma must be positive")
        if callable(self.kernel) and not isinstance(self.kernel, Kernel):
            if self.algorithm != "alg1":
                raise ValueError("kernel schedules are only allowed for alg1")


@dataclass
class Trace:
    """Per-iteration records and the final outcome of a run.

    Row ``k`` (1-based) describes the step producing ``x_k``.
    """

    algorithm: str
    E: List[float] = field(default_factory=list)
    step_norm: List[float] = field(default_factory=list)
    cert: List[float] = field(default_factory=list)
    dist: List[float] = field(default_factory=list)
    time_ms: List[float] = field(default_factory=list)
    status: str = "max-iter"
    time_s: float = 0.0
    x: Optional[np.ndarray] = None
    state: Optional[SolverState] = None
    margins_ok: Optional[bool] = None
    objective: Optional[float] = None

    @property
    def iters(self):
        return len(self.E)

    @property
    def final_Ek(self):
        return self.E[-1] if self.E else math.nan

    def summary(self):
        out = {
            "algorithm": self.algorithm,
            "status": self.status,
            "iters": self.iters,
            "time_s": self.time_s,
        }
        if self.objective is not None:
            out["objective"] = self.objective
        out["final_Ek"] = self.final_Ek
        return out

    def to_json(self, path=None):
        text = json.dumps(self.summary(), indent=2, sort_keys=False)
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text + "\n")
        return text

    def to_csv(self, path, timing=False):
        """Write the ``k,E_k,step_norm,cert,dist,err_ms`` table.

        The time column is left empty unless ``timing`` is set, so that two
        runs of the same configuration produce identical files.
        """
        n = self.iters
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["k", "E_k", "step_norm", "cert", "dist", "err_ms"])
            for i in range(n):
                w.writerow([
                    i + 1,
                    repr(self.E[i]),
                    repr(self.step_norm[i]),
                    repr(self.cert[i]) if self.cert else "",
                    repr(self.dist[i]) if self.dist else "",
                    f"{self.time_ms[i]:.3f}" if timing and self.time_ms else "",
                ])


def _check_margins(cfg, problem):
    c = cfg.constants
    if c is None:
        return None
    alg = cfg.algorithm
    try:
        if alg in ("alg1", "sfrbs", "four-op"):
            ok = cond.check_alg1(c) >= 0
        elif alg in ("alg2", "srfbs"):
            ok = min(cond.check_alg2(c)) >= 0
        elif alg in ("alg3", "orfbs", "new-orfbs"):
            ok = cond.alg3_feasible(c)
        else:
            ok = c.gamma <= cond.fbhf_chi(c.mu, c.beta)
    except ValueError as exc:
        warnings.warn(f"{alg}: cannot evaluate conditions ({exc})", MarginWarning,
                      stacklevel=3)
        return False
    if not ok:
        warnings.warn(f"{alg}: step-size conditions do not hold; running anyway",
                      MarginWarning, stacklevel=3)
    return ok


def _make_stepper(cfg, problem):
    alg = cfg.algorithm
    if alg in ("four-op", "new-orfbs"):
        if not isinstance(problem, FourOperatorSplit):
            raise ValueError(f"{alg} needs a FourOperatorSplit problem")
        if cfg.gamma is None:
            raise ValueError(f"{alg} needs gamma")
        g = cfg.gamma
        fn = step_four_op_sfrbs if alg == "four-op" else step_new_orfbs
        p = problem
        return (lambda s: fn(s, p.A1, p.A2, p.B, p.C, g)), problem.as_triple()

    if alg in ("alg1", "alg2", "alg3"):
        if isinstance(problem, FourOperatorSplit):
            triple = problem.reduced_triple()
            default_kernel = (lambda: problem.kernel(cfg.gamma))
        else:
            triple = problem
            default_kernel = (lambda: kernel_classic(triple.metric, cfg.gamma, triple.A))
        kernel = cfg.kernel
        if kernel is None:
            if cfg.gamma is None:
                raise ValueError(f"{alg} needs gamma or a kernel")
            kernel = default_kernel()
        fn = {"alg1": step_alg1, "alg2": step_alg2, "alg3": step_alg3}[alg]
        if isinstance(kernel, Kernel):
            kk = kernel
            return (lambda s: fn(s, triple, kk)), triple
        sched = kernel
        return (lambda s: fn(s, triple, sched(s.k))), triple

    if isinstance(problem, FourOperatorSplit):
        problem = problem.as_triple()
    if cfg.gamma is None:
        raise ValueError(f"{alg} needs gamma")
    g = cfg.gamma
    fn = {"sfrbs": step_sfrbs, "srfbs": step_srfbs, "orfbs": step_orfbs,
          "fbhf": step_fbhf}[alg]
    return (lambda s: fn(s, problem, g)), problem


def _residual(triple, x, gamma):
    r = x - triple.A(gamma, x - gamma * (triple.B(x) + triple.C(x)))
    return float(np.linalg.norm(r))


def run(config, problem, x0, u0=None):
    """Iterate a scheme until the stopping rule fires.

    Parameters
    ----------
    config : SolverConfig
    problem : OperatorTriple or FourOperatorSplit
    x0 : array_like
        Starting point.
    u0 : array_like, optional
        Initial momentum; zero by default.

    Returns
    -------
    Trace
        ``status`` is ``'converged'`` when ``E_k`` (and the optional residual)
        drops below tolerance, ``'max-iter'`` when the cap is reached and
        ``'diverged'`` on non-finite or exploding iterates, in which case
        ``trace.x`` is the last finite iterate.
    """
    step, triple = _make_stepper(config, problem)
    trace = Trace(algorithm=config.algorithm)
    trace.margins_ok = _check_margins(config, problem)
    metric = triple.metric
    xs = config.known_solution
    observer = config.observer if config.record_certificates else None
    stop = config.stop
    ref_gamma = config.gamma if config.gamma is not None else (
        config.kernel.gamma if isinstance(config.kernel, Kernel) else None)

    state = init_state(x0, u0)
    if observer is not None and hasattr(observer, "start"):
        observer.start(state)
    t0 = time.perf_counter()
    status = "max-iter"
    for _ in range(stop.max_iter):
        new = step(state)
        x_new = new.x
        nx = float(np.linalg.norm(x_new))
        if not math.isfinite(nx) or nx > DIVERGENCE_NORM or not np.all(np.isfinite(new.u)):
            status = "diverged"
            logger.warning("%s diverged at iteration %d", config.algorithm, new.k)
            break
        diff = x_new - state.x
        nd = float(np.linalg.norm(diff))
        n0 = float(np.linalg.norm(state.x))
        E = nd / n0 if n0 > 0 else (0.0 if nd == 0 else math.inf)
        trace.E.append(E)
        trace.step_norm.append(math.sqrt(max(float(np.dot(metric.apply(diff), diff)), 0.0)))
        if observer is not None:
            trace.cert.append(float(observer(new)))
        if xs is not None:
            e = x_new - xs
            trace.dist.append(math.sqrt(max(float(np.dot(metric.apply(e), e)), 0.0)))
        trace.time_ms.append(1e3 * (time.perf_counter() - t0))
        state = new
        if E < stop.rel_change_tol:
            if stop.residual_tol is None or (
                    ref_gamma is not None
                    and _residual(triple, state.x, ref_gamma) < stop.residual_tol):
                status = "converged"
                break
    trace.time_s = time.perf_counter() - t0
    trace.status = status
    trace.state = state
    trace.x = state.x
    return trace
