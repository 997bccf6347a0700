import cmath

import numpy as np
import pytest

from pevcoord.builder import PenaltyConfig, build_snapshot_problem
from pevcoord.conic import solve
from pevcoord.conic.hermitian import rank_residual
from pevcoord.errors import NonConvergenceError
from pevcoord.rank1 import (RankError, constraint_residuals, extract_voltage,
                            generation_from_voltage, relative_rank_residual, solve_rank1)

from conftest import state_at


def test_extract_known_vector():
    v = np.array([1.0, 0.9 * cmath.exp(-0.1j)])
    V = extract_voltage(np.outer(v, v.conj()))
    assert np.allclose(V, v, atol=1e-12)


def test_extract_fixes_global_phase():
    v = np.array([1.0, 0.9 * cmath.exp(-0.1j)]) * cmath.exp(0.7j)
    V = extract_voltage(np.outer(v, v.conj()))
    assert V[0].imag == 0 and V[0].real > 0
    assert np.allclose(np.outer(V, V.conj()), np.outer(v, v.conj()), atol=1e-12)


def test_extract_refuses_identity():
    assert relative_rank_residual(np.eye(2)) == pytest.approx(0.5)
    with pytest.raises(RankError):
        extract_voltage(np.eye(2))


def test_extract_random_rank_one():
    rng = np.random.default_rng(5)
    for _ in range(20):
        v = rng.normal(size=6) + 1j * rng.normal(size=6)
        v = v * (abs(v[0]) / v[0])
        V = extract_voltage(np.outer(v, v.conj()))
        assert np.linalg.norm(V - v) <= 1e-9 * np.linalg.norm(v)


def test_extract_error_bound():
    rng = np.random.default_rng(6)
    v = rng.normal(size=4) + 1j * rng.normal(size=4)
    u = rng.normal(size=4) + 1j * rng.normal(size=4)
    W = np.outer(v, v.conj()) + 1e-5 * np.outer(u, u.conj())
    V = extract_voltage(W, eps=1e-3)
    err = np.linalg.norm(np.outer(V, V.conj()) - W)
    assert err <= np.sqrt(2 * np.trace(W).real * rank_residual(W)) + 1e-12


def test_penalty_value_diag():
    assert rank_residual(np.diag([2.0, 1.0])) == pytest.approx(1.0)


def test_residuals_at_power_flow(case3):
    case, prof, pevs = case3
    state = state_at(pevs, prof, 1)
    V = np.array([1.0, 0.99 * cmath.exp(-0.01j), 0.98 * cmath.exp(-0.02j)])
    pg, qg = generation_from_voltage(case, prof, state, 1, {"ev0": 1}, V)
    res = constraint_residuals(case, prof, state, 1, {"ev0": 1}, V, pg, qg)
    # generator buses absorb their mismatch; only the load bus 3 can be off
    S3 = case.injections(V)[2]
    pl, ql = 0.5 * 1.2 * 4 / 4.0, 0.1 * 1.2 * 4 / 4.0
    assert res["balance"] == pytest.approx(max(abs(S3.real + pl), abs(S3.imag + ql)), rel=1e-12)
    assert res["voltage"] == 0 and res["angle"] == 0


def test_residuals_flag_voltage(case3):
    case, prof, pevs = case3
    state = state_at(pevs, prof, 1)
    V = np.array([1.0, 1.0, 1.1])
    pg, qg = generation_from_voltage(case, prof, state, 1, {}, V)
    assert constraint_residuals(case, prof, state, 1, {}, V, pg, qg)["voltage"] == pytest.approx(0.05)


def test_rank_one_start_needs_no_iterations(case4):
    case, prof, pevs = case4
    state = state_at(pevs, prof, 6)
    bp = build_snapshot_problem(case, prof, state, {})
    sol = solve(bp.problem)
    W = bp.W(sol, 6)
    res = solve_rank1(case, prof, state, {}, W)
    assert res.iterations == 0
    assert np.linalg.norm(np.outer(res.V, res.V.conj()) - W) <= 1e-4 * np.trace(W).real
    assert max(res.residuals.values()) <= 1e-5


@pytest.fixture(scope="module")
def case3_slot4(case3):
    case, prof, pevs = case3
    state = state_at(pevs, prof, 4)
    bp = build_snapshot_problem(case, prof, state, {})
    sol = solve(bp.problem)
    return state, bp.W(sol, 4), sol.objective


def test_relaxation_not_rank_one(case3_slot4):
    _, W, _ = case3_slot4
    assert relative_rank_residual(W) > 1e-4


def test_recovery_case3(case3, case3_slot4):
    case, prof, _ = case3
    state, W, bound = case3_slot4
    res = solve_rank1(case, prof, state, {}, W)
    assert 1 <= res.iterations <= 20
    assert relative_rank_residual(res.W) <= 1e-4
    assert max(res.residuals.values()) <= 1e-5
    assert abs(res.objective - bound) <= 2e-3 * abs(bound)
    for bus in case.buses:
        mag = abs(res.V[case.bus_index(bus.id)])
        assert bus.v_min - 1e-6 <= mag <= bus.v_max + 1e-6


def test_penalized_descent(case3, case3_slot4):
    case, prof, _ = case3
    state, W, bound = case3_slot4
    res = solve_rank1(case, prof, state, {}, W, PenaltyConfig(lam=0.01), f_init=bound)
    assert res.iterates
    for it in res.iterates:
        assert it.rank_residual >= -1e-9
        assert it.penalized <= it.penalized_before + 1e-7 * max(1.0, abs(it.penalized_before))


def test_first_step_without_start_value(case3, case3_slot4):
    case, prof, _ = case3
    state, W, _ = case3_slot4
    res = solve_rank1(case, prof, state, {}, W)
    assert res.iterates[0].penalized_before == float("inf")


def test_diagnostics(case3, case3_slot4):
    case, prof, _ = case3
    state, W, _ = case3_slot4
    res = solve_rank1(case, prof, state, {}, W)
    lines = res.diagnostics_jsonl().splitlines()
    assert len(lines) == res.iterations
    assert set(res.diagnostics()[0]) == {"kappa", "rank_residual", "objective", "lambda_used"}


def test_nonconvergence_carries_best(case3, case3_slot4):
    case, prof, _ = case3
    state, W, _ = case3_slot4
    with pytest.raises(NonConvergenceError) as info:
        solve_rank1(case, prof, state, {}, W, PenaltyConfig(lam=1e-6), max_iters=1)
    assert info.value.best is not None
