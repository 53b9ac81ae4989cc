"""Acceptance gate: one test per criterion, each reported as a PASS/FAIL line."""

import math
import os
import time

import numpy as np
import pytest

from momsplit import conditions as cond
from momsplit.certificates import (
    CertContext,
    CertificateObserver,
    alg3_rate_functional,
    psi,
    reference_solution,
    verify_zero,
    xi,
)
from momsplit.operators import (
    CountingOp,
    OperatorTriple,
    SingleValuedOp,
    kernel_classic,
    kernel_lipschitz_split,
    project_capped_simplex,
    quad_grad,
    quad_grad_operator,
    saddle_operator,
)
from momsplit.problems import (
    DatasetFile,
    build_portfolio,
    build_qp,
    default_port5_path,
    load_dataset,
)
from momsplit.solvers import (
    SolverConfig,
    StopRule,
    init_state,
    run,
    step_alg1,
    step_alg2,
    step_alg3,
    step_fbhf,
    step_four_op_sfrbs,
    step_new_orfbs,
    step_orfbs,
    step_sfrbs,
    step_srfbs,
)

from oracles import capped_simplex_oracle
from test_solvers import CountingResolvent, iterate


def _max_dev(a, b):
    return float(np.abs(a - b).max())


# ---------------------------------------------------------------------------
# 1, 2: reductions
# ---------------------------------------------------------------------------


def test_reduction_equivalence(qp50, criterion):
    with criterion(1, "classic-kernel reductions to SFRBS/SRFBS/ORFBS") as c:
        inst, t = qp50
        assert t.dim == 50
        g = 0.9 * cond.max_gamma("alg1", t.mu, t.beta)
        K = kernel_classic(t.metric, g, t.A)
        t0 = time.perf_counter()
        devs = []
        for alg, base in ((step_alg1, step_sfrbs), (step_alg2, step_srfbs),
                          (step_alg3, step_orfbs)):
            a, _ = iterate(lambda s: alg(s, t, K), init_state(inst.z0), 100)
            b, _ = iterate(lambda s: base(s, t, g), init_state(inst.z0), 100)
            devs.append(_max_dev(a, b))
        elapsed = time.perf_counter() - t0
        c.note(f"max dev {max(devs):.1e}, {elapsed:.2f} s")
        assert max(devs) <= 1e-12
        assert elapsed < 1.0


def test_four_operator_equivalence(qp50, rng, criterion):
    with criterion(2, "four-operator scheme = SFRBS on A2+B; new-ORFBS = alg3 split") as c:
        inst, _ = qp50
        p = inst.split()
        g = 0.5 * cond.max_gamma("alg1", inst.mu, inst.beta)
        merged = p.as_triple()
        a, _ = iterate(lambda s: step_four_op_sfrbs(s, p.A1, p.A2, p.B, p.C, g),
                       init_state(inst.z0), 100)
        b, _ = iterate(lambda s: step_sfrbs(s, merged, g), init_state(inst.z0), 100)
        d1 = _max_dev(a, b)
        # new-ORFBS on the QP split and on a random instance with a generic skew A2
        d2 = []
        K = p.kernel(g)
        a, _ = iterate(lambda s: step_new_orfbs(s, p.A1, p.A2, p.B, p.C, g),
                       init_state(inst.z0), 100)
        b, _ = iterate(lambda s: step_alg3(s, p.reduced_triple(), K), init_state(inst.z0), 100)
        d2.append(_max_dev(a, b))
        n = 20
        M = rng.normal(size=(n, n)) / np.sqrt(n)
        Bm = rng.normal(size=(n, n)) / np.sqrt(n)
        G = rng.normal(size=(n, n)) / np.sqrt(n)
        from momsplit.operators import BoxResolvent, FourOperatorSplit
        A2 = SingleValuedOp(lambda x: (M - M.T) @ x, mu=np.linalg.norm(M - M.T, 2))
        B = SingleValuedOp(lambda x: (Bm - Bm.T) @ x, mu=np.linalg.norm(Bm - Bm.T, 2))
        C = SingleValuedOp(lambda x: G.T @ (G @ x - 1.0), mu=1.0,
                           beta=np.linalg.norm(G, 2) ** 2)
        q = FourOperatorSplit(BoxResolvent(0, 1), A2, B, C, n)
        Kq = kernel_lipschitz_split(q.A1, q.A2, 0.1)
        x0 = rng.uniform(size=n)
        a, _ = iterate(lambda s: step_new_orfbs(s, q.A1, q.A2, q.B, q.C, 0.1),
                       init_state(x0), 100)
        b, _ = iterate(lambda s: step_alg3(s, q.reduced_triple(), Kq), init_state(x0), 100)
        d2.append(_max_dev(a, b))
        c.note(f"four-op dev {d1:.1e}, new-ORFBS dev {max(d2):.1e}")
        assert d1 <= 1e-12 and max(d2) <= 1e-12


# ---------------------------------------------------------------------------
# 3: certificate decrease
# ---------------------------------------------------------------------------


def test_certificate_decrease(criterion):
    with criterion(3, "certificates nonincreasing over 1000 iterations, lower bounds hold") as c:
        worst = math.inf
        runs = 0
        for seed in (7, 8):
            inst, t = build_qp(20, 10, seed=seed)
            xs, _ = reference_solution(t, inst.z0)
            for split in (False, True):
                problem = inst.split() if split else t
                mu = inst.mu / 2 if split else inst.mu
                Lfn = (lambda g, mu=mu: g * mu) if split else 0.0
                for kind, tag in (("psi", "alg1"), ("xi", "alg2"), ("s", "alg3")):
                    if tag == "alg3":
                        g, aux = cond.best_gamma_alg3(mu, inst.beta, Lfn, eps=1e-3)
                    else:
                        aux = {"eps2": 1.0} if tag == "alg2" else {}
                        g = cond.max_gamma(tag, mu, inst.beta, Lfn, eps=1e-3, **aux)
                    L = Lfn(g) if callable(Lfn) else Lfn
                    ctx = CertContext.for_problem(problem, xs, g, L=L, verify_tol=1e-8, **aux)
                    obs = CertificateObserver(kind, ctx, slack=1e-9)
                    run(SolverConfig(tag, gamma=g, record_certificates=True, observer=obs,
                                     stop=StopRule(1e-300, max_iter=1000)), problem, inst.z0)
                    assert len(obs.slacks) >= 999
                    assert obs.ok, (seed, split, kind, obs.violations[:3])
                    assert not obs.lower_bound_violations(), (seed, split, kind)
                    rel = min(s / (1 + abs(v)) for s, v in zip(obs.slacks, obs.values))
                    worst = min(worst, rel)
                    runs += 1
        c.note(f"{runs} runs, worst relative slack {worst:.1e}")


# ---------------------------------------------------------------------------
# 4: R-linear bound
# ---------------------------------------------------------------------------


def _rlinear_ratio(problem, x0, xs, alg, gamma, functional, k_const, t, iters=5000):
    """Largest ``||x_k - x*||^2 / (bound_k + floor)`` over ``k <= iters``.

    Also returns the first ``k`` at which the bound drops below the
    rounding floor, or None.
    """
    first = {}

    def obs(state):
        if state.k == 1:
            first["V1"] = functional(state)
        return float(np.sum((state.x - xs) ** 2))

    tr = run(SolverConfig(alg, gamma=gamma, record_certificates=True, observer=obs,
                          stop=StopRule(1e-300, max_iter=iters)), problem, x0)
    err = np.asarray(tr.cert)
    if err.size < iters:
        # the iterate became an exact fixed point of the floating-point map,
        # so every later iterate repeats it
        assert tr.E[-1] == 0.0
        err = np.concatenate([err, np.full(iters - err.size, err[-1])])
    k = np.arange(1, iters + 1)
    bound = np.exp(math.log(first["V1"] / k_const) - (k - 1) * math.log1p(t))
    # double precision cannot resolve ||x_k - x*||^2 below about (1e-13 ||x*||)^2
    floor = (1e-12 * max(1.0, float(np.linalg.norm(xs)))) ** 2
    below = np.flatnonzero(bound < floor)
    k_floor = int(k[below[0]]) if below.size else None
    return float(np.max(err / (bound + floor))), k_floor


def test_rlinear_bound(criterion):
    with criterion(4, "R-linear bound on a rho = 0.1 strongly monotone QP") as c:
        rho = 0.1
        inst, _ = build_qp(20, 10, seed=7)
        t = inst.triple(rho)
        xs, _ = reference_solution(t, inst.z0, tol=1e-15, max_iter=10 ** 6)
        assert verify_zero(t, xs, 1e-12)
        mu, beta = inst.mu, inst.beta
        ratios = {}

        g1 = 0.5 * cond.max_gamma("alg1", mu, beta, eps=0.0)
        t1 = cond.rate_t_alg1(cond.ConstantSet.constant(mu, beta, g1, rho=rho, eps1=1.0))
        ctx1 = CertContext.for_problem(t, xs, g1)
        ratios["alg1"] = _rlinear_ratio(t, inst.z0, xs, "alg1", g1,
                                        lambda s: psi(ctx1, s), 1.0 - g1 * mu, t1)

        g2 = 0.5 * cond.max_gamma("alg2", mu, beta, eps=0.0, eps2=1.0)
        t2 = cond.rate_t_alg2(cond.ConstantSet.constant(mu, beta, g2, rho=rho, eps2=1.0,
                                                        eps3=1.0, eps4=1.0))
        ctx2 = CertContext.for_problem(t, xs, g2, eps2=1.0)
        ratios["alg2"] = _rlinear_ratio(t, inst.z0, xs, "alg2", g2,
                                        lambda s: xi(ctx2, s), 1.0 - g2 * mu, t2)

        gb, aux = cond.best_gamma_alg3(mu, beta, 0.0)
        g3 = 0.5 * gb
        c3 = cond.ConstantSet.constant(mu, beta, g3, rho=rho, eps5=aux["eps5"],
                                       eps6=aux["eps6"], eps7=0.5 * min(1.0, 1.0 / g3),
                                       alpha=1.0)
        c3 = c3.with_(alpha=cond.alpha_floor_alg3(c3) + 0.1)
        _, K, _ = cond.alg3_constants(c3)
        c3 = c3.with_(eps8=0.5 * (g3 / K + g3))
        t3 = cond.rate_t_alg3(c3)
        ctx3 = CertContext.for_problem(t, xs, g3, eps5=aux["eps5"], eps6=aux["eps6"],
                                       alpha=c3.alpha)
        k3 = 1.0 + t3 * g3 * mu * (1.0 + g3 * mu)
        ratios["alg3"] = _rlinear_ratio(t, inst.z0, xs, "alg3", g3,
                                        lambda s: alg3_rate_functional(ctx3, s, t3), k3, t3)

        c.note(", ".join(f"{a} t={tt:.3g} max ratio {r:.3f} floor from k={kf}"
                         for (a, (r, kf)), tt in zip(ratios.items(), (t1, t2, t3))))
        for a, (r, _) in ratios.items():
            assert r <= 1.0 + 1e-9, a


# ---------------------------------------------------------------------------
# 5: step-size anchors
# ---------------------------------------------------------------------------


def test_step_size_anchors(criterion):
    with criterion(5, "step-size anchors for alg1, alg2 and FBHF") as c:
        worst = 0.0
        for mu, beta in ((1.0, 1.0), (0.3, 2.0), (2.5, 0.1)):
            g = cond.max_gamma("alg1", mu, beta, eps=0.0)
            worst = max(worst, abs(g - 2 / (4 * mu + beta)) / (2 / (4 * mu + beta)))
            for e2 in (0.5, 1.0, 2.0):
                ref = 1.0 / (mu * (math.sqrt(2) + 1) + (2 + e2 + 2 * e2 * e2) * beta / (2 * e2))
                g2 = cond.max_gamma("alg2", mu, beta, eps=0.0, eps2=e2)
                worst = max(worst, abs(g2 - ref) / ref)
            chi = 4 / (beta + math.sqrt(beta ** 2 + 16 * mu ** 2))
            assert abs(cond.fbhf_chi(mu, beta) - chi) <= 1e-12
        c.note(f"worst relative error {worst:.1e}")
        assert worst <= 1e-9


# ---------------------------------------------------------------------------
# 6: portfolio
# ---------------------------------------------------------------------------

PORTFOLIO_OBJ = {0.001: 1.6386e-4, 0.002: 2.0097e-4, 0.003: 2.7686e-4}


@pytest.mark.slow
def test_portfolio_reproduction(criterion):
    with criterion(6, "portfolio objectives on OR-Library port5") as c:
        path = default_port5_path()
        if not os.path.exists(path):
            pytest.skip(f"port5 data not found at {path}; set MOMSPLIT_PORT5")
        means, H = load_dataset(DatasetFile(path))
        notes = []
        for r, target in PORTFOLIO_OBJ.items():
            inst, t = build_portfolio(means, H, r)
            assert abs(inst.beta - 0.2263) <= 1e-3
            half = 0.5 * inst.mu
            ga, aux_a = cond.best_gamma_alg3(inst.mu, inst.beta, 0.0)
            gb, aux_b = cond.best_gamma_alg3(half, inst.beta, lambda g: g * half)
            for alg, prob, g in (("orfbs", t, ga), ("new-orfbs", inst.split(), gb)):
                tr = run(SolverConfig(alg, gamma=g, stop=StopRule(1e-6, max_iter=2_000_000)),
                         prob, inst.start())
                obj = inst.objective(tr.x)
                notes.append(f"r={r} {alg} obj {obj:.5e} iters {len(tr.E)} "
                             f"{tr.time_s:.1f} s")
                assert tr.status == "converged", notes[-1]
                assert abs(obj - target) <= 2e-6, notes[-1]
                assert tr.time_s < 60.0, notes[-1]
        c.note("; ".join(notes))


# ---------------------------------------------------------------------------
# 7: large random QPs
# ---------------------------------------------------------------------------


@pytest.mark.slow
def test_large_qp_substitute(criterion):
    with criterion(7, "ORFBS and new-ORFBS on 10 seeded N=2000, q=100 QPs") as c:
        iters = {"orfbs": [], "new-orfbs": []}
        agree, maxabs = [], []
        for seed in range(10):
            inst, t = build_qp(1000, 100, seed=seed)
            half = 0.5 * inst.mu
            _, aux_a = cond.best_gamma_alg3(inst.mu, inst.beta, 0.0)
            ga = cond.max_gamma("alg3", inst.mu, inst.beta, 0.0, **aux_a)
            _, aux_b = cond.best_gamma_alg3(half, inst.beta, lambda g: g * half)
            gb = cond.max_gamma("alg3", half, inst.beta, lambda g: g * half, **aux_b)
            stop = StopRule(1e-6, max_iter=50_000)
            a = run(SolverConfig("orfbs", gamma=ga, stop=stop), t, inst.z0)
            b = run(SolverConfig("new-orfbs", gamma=gb, stop=stop), inst.split(), inst.z0)
            assert a.status == b.status == "converged", seed
            iters["orfbs"].append(len(a.E))
            iters["new-orfbs"].append(len(b.E))
            agree.append(np.linalg.norm(a.x - b.x) / np.linalg.norm(a.x))
            maxabs.append(np.abs(a.x - b.x).max())
        av = {k: float(np.mean(v)) for k, v in iters.items()}
        c.note(f"av.iter ORFBS {av['orfbs']:.0f}, new-ORFBS {av['new-orfbs']:.0f}; "
               f"rel. gap {max(agree):.1e}, max abs gap {max(maxabs):.1e}")
        assert max(agree) <= 1e-4
        for v in iters.values():
            assert all(1e3 / 3 <= k <= 3e4 for k in v), iters


# ---------------------------------------------------------------------------
# 8: oracle suites
# ---------------------------------------------------------------------------


def test_oracle_suites(rng, criterion):
    with criterion(8, "projection oracle, finite differences, operator-constant samplings") as c:
        worst = 0.0
        for _ in range(200):
            n = int(rng.integers(1, 7))
            z = rng.normal(0, 1.5, n)
            worst = max(worst, float(np.abs(project_capped_simplex(z)
                                            - capped_simplex_oracle(z)).max()))
        assert worst <= 1e-8

        G, b = rng.normal(size=(6, 8)), rng.normal(size=6)
        f = lambda v: 0.5 * np.sum((G @ v - b) ** 2)
        fd_err = 0.0
        for _ in range(20):
            x = rng.normal(size=8)
            h = 1e-6
            fd = np.array([(f(x + h * e) - f(x - h * e)) / (2 * h) for e in np.eye(8)])
            g = quad_grad(G, b, x)
            fd_err = max(fd_err, np.linalg.norm(fd - g) / np.linalg.norm(g))
        assert fd_err <= 1e-6

        D, bd = rng.normal(size=(4, 6)), rng.normal(size=4)
        B = saddle_operator(D, bd)
        C = quad_grad_operator(G, b, n_dual=2)
        M = rng.normal(size=(10, 10))
        A2 = SingleValuedOp(lambda x: (M - M.T) @ x, mu=np.linalg.norm(M - M.T, 2))
        from momsplit.operators import BoxResolvent
        K = kernel_lipschitz_split(BoxResolvent(0, 1), A2, 0.05)
        for _ in range(1000):
            z, w, v = rng.normal(size=(3, 10))
            dB = B(z) - B(w)
            assert abs(dB @ (z - w)) <= 1e-10 * (1 + np.sum((z - w) ** 2))
            assert np.linalg.norm(dB) <= B.mu * np.linalg.norm(z - w) * (1 + 1e-7)
            dC = C(z) - C(w)
            assert np.linalg.norm(dC) <= C.beta * np.linalg.norm(z - w) * (1 + 1e-7)
            assert dC @ (z - w) >= dC @ dC / C.beta - 1e-9 * (1 + dC @ dC)
            assert dC @ (v - w) >= -0.25 * C.beta * np.sum((v - z) ** 2) - 1e-9
            assert (np.linalg.norm(K.corr(z) - K.corr(w))
                    <= K.lipschitz_L * np.linalg.norm(z - w) * (1 + 1e-12))
        c.note(f"projection gap {worst:.1e}, fd rel. error {fd_err:.1e}")


# ---------------------------------------------------------------------------
# 9: operator budget
# ---------------------------------------------------------------------------


def test_operator_budget(qp50, criterion):
    with criterion(9, "fresh evaluations per iteration (B, C, resolvent)") as c:
        inst, t = qp50
        seen = {}
        for alg, budget in (("alg1", (1, 1, 1)), ("alg2", (1, 1, 1)), ("alg3", (1, 1, 1)),
                            ("fbhf", (2, 1, 1))):
            A, B, C = CountingResolvent(t.A), CountingOp(t.B), CountingOp(t.C)
            tc = OperatorTriple(A, B, C, t.metric, t.dim, t.split)
            K = kernel_classic(tc.metric, 0.1, A)
            step = {"alg1": lambda s: step_alg1(s, tc, K),
                    "alg2": lambda s: step_alg2(s, tc, K),
                    "alg3": lambda s: step_alg3(s, tc, K),
                    "fbhf": lambda s: step_fbhf(s, tc, 0.1)}[alg]
            s = init_state(inst.z0)
            for _ in range(100):
                before = (B.calls, C.calls, A.calls)
                s = step(s)
                got = (B.calls - before[0], C.calls - before[1], A.calls - before[2])
                assert got == budget, (alg, got)
            seen[alg] = budget
        c.note(", ".join(f"{a} {b}" for a, b in seen.items()))
