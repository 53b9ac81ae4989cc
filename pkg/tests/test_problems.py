import numpy as np
import pytest

from momsplit.certificates import reference_solution, verify_zero
from momsplit.problems import (
    DataError,
    DataParseError,
    DatasetFile,
    build_portfolio,
    build_qp,
    load_dataset,
    objective_portfolio,
    parse_csv_cov,
    parse_or_library,
    split_half,
)
from momsplit.solvers import SolverConfig, StopRule, run

from oracles import box_qp_oracle, qp_oracle


def _write(tmp_path, name, text):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


# ---------------------------------------------------------------------------
# random QP
# ---------------------------------------------------------------------------


def test_build_qp_is_deterministic():
    a, _ = build_qp(5, 3, seed=11)
    b, _ = build_qp(5, 3, seed=11)
    c, _ = build_qp(5, 3, seed=12)
    for f in ("G", "D", "b", "z0"):
        np.testing.assert_array_equal(getattr(a, f), getattr(b, f))
    assert not np.array_equal(a.G, c.G)
    assert a.N == 10 and a.q == 3 and a.dim == 13
    assert np.all(a.z0[a.N:] == 0) and np.all((a.z0[:a.N] >= 0) & (a.z0[:a.N] <= 1))


def test_build_qp_rejects_empty():
    with pytest.raises(ValueError):
        build_qp(0, 3)


def test_qp_saddle_operator_is_skew(qp50, rng):
    inst, t = qp50
    for _ in range(20):
        x, y = rng.normal(size=(2, t.dim))
        assert abs((t.B(x) - t.B(y)) @ (x - y)) <= 1e-12 * (1 + np.linalg.norm(x - y) ** 2)


def test_qp_constants_match_dense_norms(qp50):
    inst, _ = qp50
    assert inst.mu == pytest.approx(np.linalg.norm(inst.D, 2), rel=1e-6)
    assert inst.beta == pytest.approx(np.linalg.norm(inst.G, 2) ** 2, rel=1e-6)


def test_split_half_reconstructs(qp50, rng):
    inst, t = qp50
    B1, B2 = split_half(t.B)
    assert B1.mu == pytest.approx(t.B.mu / 2)
    for _ in range(10):
        z = rng.normal(size=t.dim)
        np.testing.assert_allclose(B1(z) + B2(z), t.B(z), atol=1e-14)
    ratios = []
    for _ in range(200):
        x, y = rng.normal(size=(2, t.dim))
        ratios.append(np.linalg.norm(B1(x) - B1(y)) / np.linalg.norm(x - y))
    assert max(ratios) <= B1.mu * (1 + 1e-9)


def test_qp_solution_matches_active_set_oracle():
    inst, t = build_qp(2, 2, seed=3)
    xs, tr = reference_solution(t, inst.z0, tol=1e-15, max_iter=400_000)
    assert verify_zero(t, xs, 1e-7)
    x_ref, val = box_qp_oracle(inst.G, inst.b, inst.D)
    # the oracle drops the constant ||b||^2 / 2
    assert inst.objective(xs) == pytest.approx(val + 0.5 * inst.b @ inst.b, abs=1e-8)
    # primal feasibility and nonnegative multipliers
    x, u = xs[:inst.N], xs[inst.N:]
    assert x.min() >= -1e-12 and x.max() <= 1 + 1e-12
    assert (inst.D @ x).max() <= 1e-7 and u.min() >= -1e-12


def test_orfbs_and_new_orfbs_share_limit():
    inst, t = build_qp(10, 5, seed=4)
    g = 0.2 / (inst.mu + inst.beta)
    stop = StopRule(1e-12, max_iter=200_000)
    a = run(SolverConfig("orfbs", gamma=g, stop=stop), t, inst.z0)
    b = run(SolverConfig("new-orfbs", gamma=g, stop=stop), inst.split(), inst.z0)
    assert a.status == b.status == "converged"
    assert verify_zero(t, a.x, 1e-6) and verify_zero(t, b.x, 1e-6)
    assert inst.objective(a.x) == pytest.approx(inst.objective(b.x), abs=1e-8)


# ---------------------------------------------------------------------------
# datasets
# ---------------------------------------------------------------------------

TWO_ASSETS = "2\n0.01 1.0\n0.02 2.0\n1 1 1.0\n1 2 0.5\n2 2 1.0\n"


def test_or_library_two_assets(tmp_path):
    p = _write(tmp_path, "port.txt", TWO_ASSETS)
    means, H = parse_or_library(p)
    np.testing.assert_allclose(means, [0.01, 0.02])
    np.testing.assert_allclose(H, [[1.0, 1.0], [1.0, 4.0]])
    m2, H2 = load_dataset(DatasetFile(p))
    np.testing.assert_array_equal(H, H2)


def test_or_library_self_pairs_optional(tmp_path):
    p = _write(tmp_path, "port.txt", "2\n0.01 1.0\n0.02 2.0\n1 2 0.5\n")
    _, H = parse_or_library(p)
    np.testing.assert_allclose(H, [[1.0, 1.0], [1.0, 4.0]])


@pytest.mark.parametrize("text, lineno", [
    ("x\n", 1),
    ("2 3\n", 1),
    ("2\n0.01 1.0\n0.02\n1 2 0.5\n", 3),
    ("2\n0.01 1.0\n0.02 abc\n1 2 0.5\n", 3),
    ("2\n0.01 -1.0\n0.02 2.0\n1 2 0.5\n", 2),
    ("2\n0.01 1.0\n0.02 2.0\n1 2\n", 4),
    ("2\n0.01 1.0\n0.02 2.0\n1 3 0.5\n", 4),
    ("2\n0.01 1.0\n\n0.02 2.0\n1 q 0.5\n", 5),
])
def test_or_library_malformed(tmp_path, text, lineno):
    p = _write(tmp_path, "bad.txt", text)
    with pytest.raises(DataParseError) as exc:
        parse_or_library(p)
    assert exc.value.lineno == lineno
    assert f":{lineno}:" in str(exc.value)


def test_or_library_missing_pair(tmp_path):
    p = _write(tmp_path, "p.txt", "3\n0 1\n0 1\n0 1\n1 2 0.1\n2 3 0.1\n")
    with pytest.raises(DataError, match=r"\(1, 3\)"):
        parse_or_library(p)


def test_or_library_indefinite(tmp_path):
    p = _write(tmp_path, "p.txt", "3\n0 1\n0 1\n0 1\n1 2 0.9\n2 3 0.9\n1 3 -0.9\n")
    with pytest.raises(DataError, match="eigenvalue"):
        parse_or_library(p)


def test_csv_cov(tmp_path):
    p = _write(tmp_path, "c.csv", "0.1,0.2\n2,1\n1,3\n")
    means, H = parse_csv_cov(p)
    np.testing.assert_allclose(means, [0.1, 0.2])
    np.testing.assert_allclose(H, [[2, 1], [1, 3]])
    m2, _ = load_dataset(DatasetFile(p, "csv-cov"))
    np.testing.assert_array_equal(means, m2)
    with pytest.raises(ValueError):
        load_dataset(DatasetFile(p, "xlsx"))


@pytest.mark.parametrize("text, lineno", [
    ("0.1,0.2\n2,1\n", 2),
    ("0.1,0.2\n2,1\n1\n", 3),
    ("0.1,0.2\n2,x\n1,3\n", 2),
])
def test_csv_cov_malformed(tmp_path, text, lineno):
    p = _write(tmp_path, "c.csv", text)
    with pytest.raises(DataParseError) as exc:
        parse_csv_cov(p)
    assert exc.value.lineno == lineno


# ---------------------------------------------------------------------------
# portfolio
# ---------------------------------------------------------------------------


def test_objective_portfolio_examples():
    H = np.eye(3)
    assert objective_portfolio(H, np.zeros(3)) == 0.0
    assert objective_portfolio(H, [1.0, 0.0, 0.0]) == 0.5
    with pytest.raises(ValueError):
        objective_portfolio(H, np.zeros(2))


def test_build_portfolio_group_errors():
    with pytest.raises(ValueError, match="sum"):
        build_portfolio(np.zeros(4), np.eye(4), 0.0, groups=(2, 1))
    with pytest.raises(ValueError, match="group structure"):
        build_portfolio(np.zeros(4), np.eye(4), 0.0)
    with pytest.raises(ValueError, match="shape"):
        build_portfolio(np.zeros(4), np.eye(3), 0.0, groups=(2, 2))


def test_build_portfolio_default_groups():
    inst, t = build_portfolio(np.zeros(225), np.eye(225), 0.0)
    assert inst.groups == (75, 75, 75) and inst.q == 4
    assert t.dim == 229 and t.split == 225


@pytest.fixture(scope="module")
def small_portfolio():
    rng = np.random.default_rng(21)
    n = 6
    F = rng.normal(size=(n, n)) * 0.05
    H = F @ F.T + 1e-3 * np.eye(n)
    means = rng.uniform(0.0, 0.01, n)
    r = float(np.quantile(means, 0.6))
    return build_portfolio(means, H, r, groups=(3, 3))


def test_portfolio_matches_active_set_oracle(small_portfolio):
    inst, t = small_portfolio
    n = inst.n
    xs, tr = reference_solution(t, inst.start(), tol=1e-15, max_iter=400_000)
    # inequalities: x >= 0, D x + b <= 0 (x <= 1 is implied by the simplex)
    A_in = np.vstack([-np.eye(n), inst.D])
    b_in = np.concatenate([np.zeros(n), -inst.b])
    x_ref, val = qp_oracle(inst.H, np.zeros(n), A_in, b_in, np.ones((1, n)), [1.0])
    assert x_ref is not None
    np.testing.assert_allclose(xs[:n], x_ref, atol=1e-6)
    assert inst.objective(xs) == pytest.approx(val, abs=1e-9)
    res = inst.kkt_residuals(xs)
    assert res["stationarity"] <= 1e-8
    assert res["complementarity"] <= 1e-8
    assert res["primal"] <= 1e-8
    assert res["dual"] <= 1e-12


def test_portfolio_runs_with_default_schemes(small_portfolio):
    inst, t = small_portfolio
    g = 0.2 / (inst.mu + inst.beta)
    for alg, prob in (("alg1", t), ("alg3", t), ("new-orfbs", inst.split())):
        tr = run(SolverConfig(alg, gamma=g, stop=StopRule(1e-10, max_iter=200_000)),
                 prob, inst.start())
        assert tr.status == "converged", alg
        assert inst.kkt_residuals(tr.x)["stationarity"] <= 1e-6
