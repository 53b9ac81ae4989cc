"""Command-line harness: ``check``, ``run`` and ``certify``.

Configuration comes from an optional flat JSON file (``--config``); every
field can be overridden with ``--key value`` on the command line, including
keys without a dedicated flag.

Exit codes: 0 success, 1 infeasible parameters, 2 divergence under
``--strict``, 3 I/O or parse error, 4 certificate violation.
"""

import argparse
import json
import logging
import math
import os
import sys
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from . import conditions as cond
from .certificates import CertContext, CertificateObserver, reference_solution
from .operators import kernel_classic
from .problems import (
    DataError,
    DataParseError,
    DatasetFile,
    build_portfolio,
    build_qp,
    default_port5_path,
    load_dataset,
)
from .solvers import ALGORITHMS, SolverConfig, StopRule, run

__all__ = ["main", "build_parser", "load_config"]

logger = logging.getLogger("momsplit")

EXIT_OK, EXIT_INFEASIBLE, EXIT_DIVERGED, EXIT_IO, EXIT_CERT = 0, 1, 2, 3, 4

DEFAULTS = {
    "problem": "qp",
    "alg": ["alg1"],
    "gamma": None,
    "tol": 1e-6,
    "max_iter": 100_000,
    "seed": 0,
    "repeat": 1,
    "cert": False,
    "out": "out",
    "strict": False,
    "dataset": None,
    "format": "or-library-port",
    "r": 0.001,
    "m": 25,
    "q": 10,
    "kernel": "classic",
    "rho": 0.0,
    "eps": 1e-6,
    "eps1": 1.0,
    "eps2": 1.0,
    "eps3": 1.0,
    "eps4": 1.0,
    "eps5": None,
    "eps6": None,
    "eps7": None,
    "eps8": None,
    "alpha": 1e-6,
    "L": None,
    "mu": None,
    "beta": None,
    "timing": False,
    "workers": 1,
    "cert_iters": 1000,
}

PORT5_HELP = (
    "The portfolio problem needs the OR-Library file port5.txt "
    "(http://people.brunel.ac.uk/~mastjjb/jeb/orlib/portinfo.html). "
    "Download it and pass --dataset PATH or set MOMSPLIT_PORT5."
)

# scheme family of each algorithm tag
FAMILY = {
    "alg1": "alg1", "sfrbs": "alg1", "four-op": "alg1",
    "alg2": "alg2", "srfbs": "alg2",
    "alg3": "alg3", "orfbs": "alg3", "new-orfbs": "alg3",
    "fbhf": "fbhf",
}
CERT_KIND = {"alg1": "psi", "alg2": "xi", "alg3": "s"}


class CliError(Exception):
    def __init__(self, code, msg):
        super().__init__(msg)
        self.code = code


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------


def _coerce(text):
    try:
        return json.loads(text)
    except (json.JSONDecodeError, TypeError):
        return text


def build_parser():
    p = argparse.ArgumentParser(prog="momsplit", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True)
    for name, help_ in [("check", "report step-size margins and feasible steps"),
                        ("run", "run solvers and write traces"),
                        ("certify", "run with certificate monitoring")]:
        s = sub.add_parser(name, help=help_)
        s.add_argument("--config", help="flat JSON configuration file")
        s.add_argument("--problem", choices=["qp", "portfolio", "none"])
        s.add_argument("--alg", action="append", choices=ALGORITHMS)
        s.add_argument("--gamma", type=float)
        s.add_argument("--tol", type=float)
        s.add_argument("--max-iter", dest="max_iter", type=int)
        s.add_argument("--seed", type=int)
        s.add_argument("--repeat", type=int)
        s.add_argument("--cert", action="store_true", default=None)
        s.add_argument("--out")
        s.add_argument("--strict", action="store_true", default=None)
        s.add_argument("--dataset")
        s.add_argument("--r", type=float)
        s.add_argument("--m", type=int)
        s.add_argument("--q", type=int)
        s.add_argument("--kernel", choices=["classic", "split"])
        s.add_argument("--timing", action="store_true", default=None,
                       help="fill the time column of trace CSVs")
        s.add_argument("--workers", type=int)
    return p


def load_config(args, extra):
    cfg = dict(DEFAULTS)
    if args.config:
        try:
            with open(args.config) as fh:
                data = json.load(fh)
        except OSError as exc:
            raise CliError(EXIT_IO, f"cannot read config: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise CliError(EXIT_IO, f"invalid JSON in {args.config}: {exc}") from exc
        if not isinstance(data, dict):
            raise CliError(EXIT_IO, "config must be a flat JSON object")
        cfg.update({k.replace("-", "_"): v for k, v in data.items()})
    for k, v in vars(args).items():
        if k in ("command", "config", "verbose") or v is None:
            continue
        cfg[k] = v
    it = iter(extra)
    for tok in it:
        if not tok.startswith("--"):
            raise CliError(EXIT_IO, f"unexpected argument {tok!r}")
        key = tok[2:].replace("-", "_")
        if "=" in key:
            key, val = key.split("=", 1)
        else:
            val = next(it, None)
            if val is None:
                raise CliError(EXIT_IO, f"missing value for {tok}")
        cfg[key] = _coerce(val)
    if isinstance(cfg["alg"], str):
        cfg["alg"] = [cfg["alg"]]
    for a in cfg["alg"]:
        if a not in ALGORITHMS:
            raise CliError(EXIT_IO, f"unknown algorithm {a!r}")
    return cfg


# ---------------------------------------------------------------------------
# problem and parameter resolution
# ---------------------------------------------------------------------------


def _build(cfg, seed):
    kind = cfg["problem"]
    if kind == "qp":
        inst, _ = build_qp(int(cfg["m"]), int(cfg["q"]), seed)
        return inst, inst.z0
    if kind == "portfolio":
        path = cfg["dataset"] or default_port5_path()
        if not os.path.exists(path):
            raise CliError(EXIT_IO, f"dataset not found: {path}\n{PORT5_HELP}")
        try:
            means, H = load_dataset(DatasetFile(path, cfg["format"]))
        except (DataParseError, DataError, OSError) as exc:
            raise CliError(EXIT_IO, str(exc)) from exc
        try:
            inst, _ = build_portfolio(means, H, float(cfg["r"]), groups=cfg.get("groups"))
        except ValueError as exc:
            raise CliError(EXIT_IO, str(exc)) from exc
        return inst, inst.start()
    raise CliError(EXIT_IO, f"problem {kind!r} cannot be run")


def _uses_split(cfg, alg):
    return alg in ("four-op", "new-orfbs") or (
        alg in ("alg1", "alg2", "alg3") and cfg["kernel"] == "split")


def _constants(cfg, alg, inst):
    """``(mu_B, beta, L)`` where ``L`` may be a function of gamma."""
    if inst is None:
        mu, beta = cfg["mu"], cfg["beta"]
        if mu is None or beta is None:
            raise CliError(EXIT_IO, "--mu and --beta are required without a problem")
        L = cfg["L"] or 0.0
        return float(mu), float(beta), L
    if _uses_split(cfg, alg):
        half = 0.5 * inst.mu
        return half, inst.beta, (lambda g: g * half)
    return inst.mu, inst.beta, (cfg["L"] or 0.0)


def _alg3_aux(cfg, mu, beta, L):
    if cfg["eps5"] is not None and cfg["eps6"] is not None:
        return {"eps5": float(cfg["eps5"]), "eps6": float(cfg["eps6"]),
                "alpha": float(cfg["alpha"])}
    _, aux = cond.best_gamma_alg3(mu, beta, L, cfg["eps"], alpha=float(cfg["alpha"]))
    return aux


def _aux(cfg, fam, mu, beta, L):
    if fam == "alg2":
        return {"eps2": float(cfg["eps2"])}
    if fam == "alg3":
        return _alg3_aux(cfg, mu, beta, L)
    return {}


def _default_gamma(cfg, alg, mu, beta, L):
    fam = FAMILY[alg]
    aux = _aux(cfg, fam, mu, beta, L)
    return cond.max_gamma(fam, mu, beta, L, cfg["eps"], **aux), aux


def _constant_set(cfg, fam, mu, beta, L, gamma, aux):
    Lg = float(L(gamma)) if callable(L) else float(L)
    if not 0.0 <= Lg < 1.0:
        raise cond.InfeasibleError(f"L = {Lg:.4g} is outside [0, 1)")
    kw = dict(aux)
    if fam == "alg3":
        for k in ("eps7", "eps8"):
            if cfg[k] is not None:
                kw[k] = float(cfg[k])
    return cond.ConstantSet.constant(mu, beta, gamma, Lg, eps=cfg["eps"],
                                     rho=float(cfg["rho"]),
                                     eps1=float(cfg["eps1"]), eps3=float(cfg["eps3"]),
                                     eps4=float(cfg["eps4"]), **kw)


def _default_eps7(c):
    """Largest ``eps7`` allowed by the window and by ``margin_ii > 0``."""
    cap = min(c.gamma, 0.999)
    if c.gamma > 1.0:
        cap = min(cap, 0.999 / c.gamma)
    if c.mu > 0:
        cap = min(cap, 0.999 / (c.mu * (c.eps5 * c.mu + 1.0)))
    return cap


def _margins(fam, c, decrease_only=False):
    """``(passed, description)`` for one constant set.

    With ``decrease_only`` the ORFBS family is judged on the certificate
    decrease condition alone.
    """
    if fam == "alg1":
        m = cond.check_alg1(c)
        return m >= 0, f"margin={m:.6g}"
    if fam == "alg2":
        m1, m2 = cond.check_alg2(c)
        return min(m1, m2) >= 0, f"margin1={m1:.6g} margin2={m2:.6g}"
    if fam == "alg3":
        if c.eps7 is None:
            c = c.with_(eps7=_default_eps7(c))
        try:
            mi, mii, w = cond.check_alg3(c)
        except cond.PreconditionError as exc:
            return False, f"precondition failed: {exc}"
        ok = mi >= 0 if decrease_only else (mi >= 0 and mii > 0 and w.contains(c.gamma))
        return ok, (f"margin_i={mi:.6g} margin_ii={mii:.6g} "
                    f"window=[{w.lo:.6g}, {w.hi:.6g}] eps7={c.eps7:.6g}")
    chi = cond.fbhf_chi(c.mu, c.beta)
    return c.gamma < chi, f"chi={chi:.12g}"


def _rate(fam, c):
    try:
        if fam == "alg1":
            return cond.rate_t_alg1(c)
        if fam == "alg2":
            return cond.rate_t_alg2(c)
        if fam == "alg3":
            if c.eps7 is None or c.eps8 is None:
                return None
            return cond.rate_t_alg3(c)
    except (cond.ConditionError, cond.PreconditionError) as exc:
        return f"unavailable ({exc})"
    return None


def _resolve_gamma(cfg, alg, mu, beta, L):
    fam = FAMILY[alg]
    if cfg["gamma"] is not None:
        return float(cfg["gamma"]), _aux(cfg, fam, mu, beta, L)
    return _default_gamma(cfg, alg, mu, beta, L)


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_check(cfg, out=sys.stdout):
    """Print margins, largest feasible steps and rates; 0 iff all pass."""
    inst = None
    if cfg["problem"] != "none" and cfg["mu"] is None:
        inst, _ = _build(cfg, int(cfg["seed"]))
    code = EXIT_OK
    for alg in cfg["alg"]:
        fam = FAMILY[alg]
        mu, beta, L = _constants(cfg, alg, inst)
        print(f"[{alg}] mu={mu:.6g} beta={beta:.6g}", file=out)
        try:
            aux = _aux(cfg, fam, mu, beta, L)
            sup = cond.max_gamma(fam, mu, beta, L, 0.0, **aux)
            gmax = cond.max_gamma(fam, mu, beta, L, cfg["eps"], **aux)
        except cond.InfeasibleError as exc:
            print(f"  infeasible: {exc}", file=out)
            code = EXIT_INFEASIBLE
            continue
        print(f"  sup_gamma={sup:.12g} max_gamma(eps={cfg['eps']:g})={gmax:.12g}", file=out)
        if fam == "alg3":
            print(f"  eps5={aux['eps5']:.6g} eps6={aux['eps6']:.6g} alpha={aux['alpha']:.3g}",
                  file=out)
        gamma = float(cfg["gamma"]) if cfg["gamma"] is not None else gmax
        try:
            c = _constant_set(cfg, fam, mu, beta, L, gamma, aux)
        except cond.InfeasibleError as exc:
            print(f"  infeasible: {exc}", file=out)
            code = EXIT_INFEASIBLE
            continue
        ok, desc = _margins(fam, c)
        print(f"  gamma={gamma:.12g} L={c.L_cur:.6g} {desc} -> {'pass' if ok else 'FAIL'}",
              file=out)
        if c.rho > 0:
            t = _rate(fam, c)
            if t is not None:
                print(f"  rate t={t if isinstance(t, str) else format(t, '.6g')}", file=out)
        if not ok:
            code = EXIT_INFEASIBLE
    return code


def _run_one(cfg, alg, seed, observer_kind=None):
    inst, z0 = _build(cfg, seed)
    mu, beta, L = _constants(cfg, alg, inst)
    gamma, aux = _resolve_gamma(cfg, alg, mu, beta, L)
    fam = FAMILY[alg]
    c = _constant_set(cfg, fam, mu, beta, L, gamma, aux)
    problem = inst.split() if _uses_split(cfg, alg) else inst.triple()
    stop = StopRule(rel_change_tol=float(cfg["tol"]), max_iter=int(cfg["max_iter"]))
    observer = None
    if observer_kind is not None:
        xs, _ = reference_solution(inst.triple(), z0)
        ctx = CertContext.for_problem(problem, xs, gamma, L=c.L_cur, eps2=aux.get("eps2"),
                                      eps5=aux.get("eps5"), eps6=aux.get("eps6"),
                                      alpha=aux.get("alpha"))
        observer = CertificateObserver(observer_kind, ctx)
    algo = {"sfrbs": "alg1", "srfbs": "alg2", "orfbs": "alg3"}.get(alg, alg) \
        if observer_kind else alg
    scfg = SolverConfig(algorithm=algo, gamma=gamma, stop=stop,
                        record_certificates=observer is not None, observer=observer)
    tr = run(scfg, problem, z0)
    tr.algorithm = alg
    tr.objective = inst.objective(tr.x)
    ok, _ = _margins(fam, c, decrease_only=True)
    return {"alg": alg, "seed": seed, "gamma": gamma, "trace": tr, "observer": observer,
            "conditions_ok": ok}


def _write_outputs(cfg, results):
    out = cfg["out"]
    try:
        os.makedirs(out, exist_ok=True)
        for res in results:
            name = f"{cfg['problem']}_seed{res['seed']}_{res['alg']}.csv"
            res["trace"].to_csv(os.path.join(out, name), timing=bool(cfg["timing"]))
        summary = {"runs": [dict(res["trace"].summary(), seed=res["seed"], gamma=res["gamma"])
                            for res in results]}
        if int(cfg["repeat"]) > 1:
            avg = {}
            for alg in cfg["alg"]:
                rs = [r["trace"] for r in results if r["alg"] == alg]
                avg[alg] = {"av_iter": float(np.mean([t.iters for t in rs])),
                            "av_time_s": float(np.mean([t.time_s for t in rs])),
                            "converged": sum(t.status == "converged" for t in rs)}
            summary["average"] = avg
        with open(os.path.join(out, "summary.json"), "w") as fh:
            json.dump(summary, fh, indent=2)
            fh.write("\n")
    except OSError as exc:
        raise CliError(EXIT_IO, f"cannot write outputs: {exc}") from exc
    return summary


def cmd_run(cfg, out=sys.stdout):
    """Run every selected algorithm on every instance and write traces."""
    seeds = [int(cfg["seed"]) + i for i in range(int(cfg["repeat"]))]
    jobs = [(alg, s) for s in seeds for alg in cfg["alg"]]
    workers = max(1, int(cfg["workers"]))
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as ex:
            results = list(ex.map(lambda j: _run_one(cfg, *j), jobs))
    else:
        results = [_run_one(cfg, *j) for j in jobs]
    summary = _write_outputs(cfg, results)
    for r in summary["runs"]:
        obj = f" objective={r['objective']:.6e}" if "objective" in r else ""
        print(f"{r['algorithm']} seed={r['seed']} status={r['status']} iters={r['iters']} "
              f"gamma={r['gamma']:.6g}{obj} final_Ek={r['final_Ek']:.3e}", file=out)
    for alg, a in summary.get("average", {}).items():
        print(f"{alg} av_iter={a['av_iter']:.1f} av_time_s={a['av_time_s']:.3f} "
              f"converged={a['converged']}/{len(seeds)}", file=out)
    if cfg["strict"] and any(r["status"] == "diverged" for r in summary["runs"]):
        return EXIT_DIVERGED
    return EXIT_OK


def cmd_certify(cfg, out=sys.stdout):
    """Run with a certificate observer and report any increase beyond slack."""
    code = EXIT_OK
    cfg = dict(cfg, max_iter=int(cfg["cert_iters"]), tol=min(float(cfg["tol"]), 1e-300))
    for alg in cfg["alg"]:
        fam = FAMILY[alg]
        if fam == "fbhf":
            print(f"[{alg}] no certificate for this scheme", file=out)
            continue
        if alg in ("four-op", "new-orfbs"):
            alg_eff = {"four-op": "alg1", "new-orfbs": "alg3"}[alg]
            cfg_eff = dict(cfg, kernel="split")
        else:
            alg_eff, cfg_eff = alg, cfg
        res = _run_one(cfg_eff, alg_eff, int(cfg["seed"]), observer_kind=CERT_KIND[fam])
        obs = res["observer"]
        tr = res["trace"]
        lb = obs.lower_bound_violations()
        print(f"[{alg}] gamma={res['gamma']:.12g} decrease_condition={'pass' if res['conditions_ok'] else 'FAIL'} "
              f"steps={tr.iters} certificate={obs.kind}", file=out)
        print(f"  first={obs.values[0]:.12e} last={obs.values[-1]:.12e} "
              f"min_slack={min(obs.slacks):.6e}", file=out)
        for v in obs.violations[:20]:
            print(f"  violation k={v.k} slack={v.slack:.6e}", file=out)
        if lb:
            print(f"  lower bound violated at k={lb[:20]}", file=out)
        if not res["conditions_ok"]:
            print("  conditions do not hold; result is informational only", file=out)
            if cfg["strict"]:
                code = max(code, EXIT_INFEASIBLE)
            continue
        if obs.violations or lb:
            code = max(code, EXIT_CERT)
    return code


def main(argv=None):
    parser = build_parser()
    args, extra = parser.parse_known_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args, extra)
        cmd = {"check": cmd_check, "run": cmd_run, "certify": cmd_certify}[args.command]
        return cmd(cfg, sys.stdout)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except cond.InfeasibleError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
