import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from aircomp_fl.channels import draw_round_channels
from aircomp_fl.config import SystemConfig
from aircomp_fl.optimizer import (
    GapProblem, OptimizerError, RelaxationNotTight, brute_force_oracle, build_problem,
    downlink_factor, dump_problem, homogenize, load_problem, rank_one_residual, recover_solution,
    select_devices, solve,
)


def instance(seed, K, mode, d=500, p_dl=None):
    rng = np.random.default_rng(seed)
    cfg = SystemConfig(K=K, d=d, constraint_mode=mode, p_dl_max=p_dl)
    ch = draw_round_channels(rng, K)
    w2 = d * 0.01 * rng.uniform(0.5, 2)
    return build_problem(ch.gain_dl, ch.gain_up, w2 * rng.uniform(0.5, 2, size=K), cfg, cfg.eta0, w2)


def test_theta_unit_example():
    cfg = SystemConfig(K=1, d=1, sigma_d2=1.0, sigma_u2=0.0, L=1.0, p_dl_max=1.0, E=5)
    gp = build_problem([1.0], [1.0], [1.0], cfg, eta=0.0, w_norm2=1.0)
    assert gp.theta[0] == 1.0
    assert gp.c == 0.0


def test_downlink_factor_operating_point():
    # (1 + 0.01 + 0.01) / (1 - 0.01)
    assert downlink_factor(0.001, 5, 10.0) == pytest.approx(1.02 / 0.99, rel=1e-15)
    assert downlink_factor(0.001, 5, 10.0) == pytest.approx(1.0303, abs=1e-4)
    with pytest.raises(OptimizerError):
        downlink_factor(1.0 / (2 * 5 * 10), 5, 10.0)


def test_build_problem_fields():
    cfg = SystemConfig(K=2, d=10)
    gp = build_problem([0.5, 2.0], [1.0, 4.0], [3.0, 8.0], cfg, 0.001, 2.0)
    pbar = cfg.p_dl_max / 2.0
    fac = downlink_factor(0.001, 5, 10.0)
    assert np.allclose(gp.theta, 10 * 0.01 * 10 * fac / (pbar * np.array([0.5, 2.0])), rtol=1e-15)
    assert gp.c == pytest.approx(2 * 10 * 0.01 * 10)
    assert np.array_equal(gp.q_diag, [3.0, 2.0])
    assert np.array_equal(gp.budgets, [50.0, 50.0])
    with pytest.raises(OptimizerError):
        build_problem([1.0], [1.0], [1.0], SystemConfig(K=1, d=1), 0.001, 0.0)


def test_homogenize_structure():
    gp = GapProblem(np.array([1.0, 2.0, 3.0]), 5.0, np.array([1.0, 2.0, 3.0]), np.array([4.0, 5.0, 6.0]), "individual")
    prob = homogenize(gp)
    assert prob.n == 4
    assert np.array_equal(prob.obj, np.diag([1.0, 2.0, 3.0, 5.0]))
    C, rhs = prob.eq[0]
    assert rhs == 1.0 and C[:3, :3].sum() == 9 and C[3].sum() == 0 and C[:, 3].sum() == 0
    assert len(prob.ineq) == 3
    for k, (Q, h) in enumerate(prob.ineq):
        assert h == 0.0 and np.count_nonzero(Q) == 2
        assert Q[k, k] == gp.q_diag[k] and Q[3, 3] == -gp.budgets[k]
    gp_sum = GapProblem(gp.theta, gp.c, gp.q_diag, np.array([10.0]), "sum")
    assert len(homogenize(gp_sum).ineq) == 1


def test_recover_rank_one_example():
    v = np.array([1.0, 2.0, 0.5])
    assert np.allclose(recover_solution(np.outer(v, v), 2), [2.0, 4.0], rtol=1e-14)
    assert np.allclose(recover_solution(np.outer(-v, -v), 2), [2.0, 4.0], rtol=1e-14)


def test_recover_errors():
    Z = np.diag([1.0, 1.0, 1.0])
    with pytest.raises(RelaxationNotTight):
        recover_solution(Z, 2)
    v = np.array([1.0, 2.0, 0.0])
    with pytest.raises(OptimizerError):
        recover_solution(np.outer(v, v), 2)


def test_select_devices_examples():
    assert list(select_devices([0.5, 0.0, 1.2])) == [1, 0, 1]
    assert list(select_devices([1e-20, 3.0])) == [0, 1]
    assert list(select_devices([2.0])) == [1]
    # strict threshold: exactly at 1e-8 * max is excluded
    assert list(select_devices([1e-8, 1.0])) == [0, 1]
    with pytest.raises(OptimizerError):
        select_devices([0.0, 0.0])


def test_solve_k1_analytic():
    gp = GapProblem(np.array([1.0]), 10.0, np.array([4.0]), np.array([16.0]), "individual")
    sol = solve(gp)
    assert sol.p[0] == pytest.approx(2.0, rel=1e-9)
    assert sol.objective == pytest.approx(3.5, rel=1e-9)
    p, obj = brute_force_oracle(gp)
    assert obj == pytest.approx(3.5, rel=1e-9) and p[0] == pytest.approx(2.0, rel=1e-9)


def test_solve_k2_sum_symmetric():
    gp = GapProblem(np.ones(2), 0.0, np.ones(2), np.array([2.0]), "sum")
    sol = solve(gp)
    assert sol.objective == pytest.approx(0.5, rel=1e-9)
    assert sol.p[0] == pytest.approx(sol.p[1], rel=1e-6)
    _, obj = brute_force_oracle(gp)
    assert obj == pytest.approx(0.5, rel=1e-9)


def test_weak_downlink_device_deselected():
    gp = GapProblem(np.array([1e12, 1.0]), 1.0, np.ones(2), np.array([1.0, 1.0]), "individual")
    sol = solve(gp)
    assert list(sol.a) == [0, 1]
    p, obj = brute_force_oracle(gp)
    assert p[0] == 0.0 and sol.objective <= obj * (1 + 1e-9)


def test_c_zero_scale_invariance():
    gp = instance(3, 6, "individual")
    gp0 = GapProblem(gp.theta, 0.0, gp.q_diag, gp.budgets, gp.mode)
    sol = solve(gp0)
    assert gp0.objective(sol.p) == pytest.approx(gp0.objective(0.3 * sol.p), rel=1e-12)
    on_boundary = sol.p * gp0.boundary_scale(sol.p)
    assert sol.objective == pytest.approx(gp0.objective(on_boundary), rel=1e-9)


def test_oracle_errors():
    gp = instance(1, 4, "individual")
    with pytest.raises(OptimizerError):
        brute_force_oracle(gp)
    bad = GapProblem(np.ones(2), 1.0, np.ones(2), np.array([0.0, 1.0]), "individual")
    with pytest.raises(OptimizerError):
        brute_force_oracle(bad)


def test_problem_json_round_trip(tmp_path):
    gp = instance(2, 5, "sum")
    dump_problem(tmp_path / "gp.json", gp)
    back = load_problem(tmp_path / "gp.json")
    assert np.array_equal(back.theta, gp.theta) and back.c == gp.c and back.mode == "sum"
    assert np.array_equal(back.budgets, gp.budgets)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10**6), st.sampled_from(["individual", "sum"]), st.integers(2, 8))
def test_sandwich_and_feasibility(seed, mode, K):
    gp = instance(seed, K, mode)
    sol = solve(gp)
    assert np.all(sol.p >= 0)
    assert np.all(gp.constraint_residuals(sol.p) <= 1e-8 * gp.budgets)
    assert sol.sdp_lower_bound <= sol.objective
    assert sol.objective - sol.sdp_value <= 1e-6 * sol.objective
    assert sol.rank_one_residual <= 1e-6


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 10**6), st.sampled_from(["individual", "sum"]))
def test_monotone_in_downlink_budget(seed, mode):
    lo = solve(instance(seed, 5, mode, p_dl=1000.0)).objective
    hi = solve(instance(seed, 5, mode, p_dl=4000.0)).objective
    assert hi <= lo * (1 + 1e-8)


def test_rank_one_residual_helper():
    v = np.array([1.0, 2.0, 3.0])
    assert rank_one_residual(np.outer(v, v)) <= 1e-15
