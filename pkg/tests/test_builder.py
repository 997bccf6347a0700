import cmath
import dataclasses
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from pevcoord.builder import (DemandInfeasibleError, PenaltyConfig, balance_expressions,
                              build_init_problem, build_penalized_subproblem,
                              build_snapshot_problem, build_tau_rows, declare_slot,
                              static_expressions, surrogate_coefficients, tau_vector)
from pevcoord.conic import Model, solve
from pevcoord.conic.cones import svec
from pevcoord.conic.hermitian import expand
from pevcoord.fleet import FleetState, PevRecord
from pevcoord.grid import parse_case
from pevcoord.micp import g_value

from conftest import state_at


def two_bus(r=None, x=None, theta=0.5, loads=()):
    z = 1 / (1 - 10j)
    doc = {
        "name": "two_bus", "base_mva": 1.0,
        "buses": [{"id": 1, "v_min": 0.9, "v_max": 1.1}, {"id": 2, "v_min": 0.9, "v_max": 1.1}],
        "lines": [{"from": 1, "to": 2, "r": z.real if r is None else r, "x": z.imag if x is None else x,
                   "theta_max": theta}],
        "generators": [
            {"bus": 1, "p_min": -5, "p_max": 5, "q_min": -5, "q_max": 5, "cost": [0, 1, 0], "is_station": True},
            {"bus": 2, "p_min": -5, "p_max": 5, "q_min": -5, "q_max": 5, "cost": [0, 1, 0]}],
        "profiles": {"slot_hours": 0.5, "load_shape": [1.0], "prices": [0.2],
                     "base_loads": [{"bus": b, "p": p, "q": q} for b, p, q in loads]},
    }
    return parse_case(doc)


def point(model, h, V, pg=None, qg=None):
    """Variable vector placing W = V V^H and the given dispatch."""
    x = np.zeros(model._n)
    x[h.W.block.index] = svec(expand(np.outer(V, np.conj(V))))
    for bus, v in (pg or {}).items():
        x[list(h.pg[bus].terms)[0]] = v
    for bus, v in (qg or {}).items():
        x[list(h.qg[bus].terms)[0]] = v
    return x


def test_balance_rows_vanish_at_power_flow():
    case, prof = two_bus()
    V = np.array([1.0, 0.98 * cmath.exp(-0.02j)])
    S = case.injections(V)
    m = Model()
    h = declare_slot(m, case, 1)
    x = point(m, h, V, {1: S[0].real, 2: S[1].real}, {1: S[0].imag, 2: S[1].imag})
    rows = balance_expressions(case, prof, h)
    assert len(rows) == 4
    assert max(abs(r.evaluate(x)) for r in rows) < 1e-12


def test_injections_match_direct_formula():
    case, _ = two_bus()
    V = np.array([1.0, 0.98 * cmath.exp(-0.02j)])
    y = 1 - 10j
    s1 = V[0] * np.conj(y * (V[0] - V[1]))
    assert abs(case.injections(V)[0] - s1) < 1e-12


def test_zero_injection_flat_start():
    case, prof = two_bus()
    m = Model()
    h = declare_slot(m, case, 1)
    x = point(m, h, np.ones(2))
    assert all(abs(r.evaluate(x)) < 1e-15 for r in balance_expressions(case, prof, h))


def test_pev_load_coefficient():
    case, prof = two_bus()
    m = Model()
    h = declare_slot(m, case, 1)
    rows = balance_expressions(case, prof, h, {1: 0.05})
    x = point(m, h, np.ones(2))
    assert rows[0].evaluate(x) == pytest.approx(0.05)
    assert rows[2].evaluate(x) == pytest.approx(0.0, abs=1e-15)


def test_static_voltage_box():
    case, _ = two_bus()
    m = Model()
    h = declare_slot(m, case, 1)
    rows = static_expressions(case, h)
    x = point(m, h, np.array([0.9, 1.1]))
    # W_11 = 0.81 sits on the lower bound, W_22 = 1.21 on the upper bound
    assert rows[0].evaluate(x) == pytest.approx(0.0, abs=1e-14)
    assert rows[3].evaluate(x) == pytest.approx(0.0, abs=1e-14)
    assert rows[0].const == pytest.approx(-0.81)


def test_static_voltage_box_values():
    case, prof = two_bus()
    case = dataclasses.replace(case, buses=tuple(dataclasses.replace(b, v_min=0.95, v_max=1.05)
                                                 for b in case.buses))
    m = Model()
    h = declare_slot(m, case, 1)
    rows = static_expressions(case, h)
    assert rows[0].const == pytest.approx(-0.9025)
    assert rows[1].const == pytest.approx(1.1025)


def test_angle_rows_pi_over_four():
    case, _ = two_bus(theta=math.pi / 4)
    m = Model()
    h = declare_slot(m, case, 1)
    angle = static_expressions(case, h)[4:6]
    ok = point(m, h, np.array([1.0, cmath.exp(-0.7j)]))
    bad = point(m, h, np.array([1.0, cmath.exp(-0.9j)]))
    bad_other = point(m, h, np.array([1.0, cmath.exp(0.9j)]))
    assert min(r.evaluate(ok) for r in angle) >= 0
    assert min(r.evaluate(bad) for r in angle) < 0
    assert min(r.evaluate(bad_other) for r in angle) < 0


def pev(pid, arrival, departure, capacity, station=1, rate=20.0, soc=0.0, eff=1.0):
    return PevRecord(pid, station, arrival, departure, capacity, soc, rate, eff)


def test_tau_rows_forced():
    state = FleetState.initial([pev("a", 1, 1, 10.0)], 0.5)
    m = Model()
    tau, keys, bar = build_tau_rows(m, state)
    assert keys == [("a", 1)] and bar == {"a": 1}
    m.minimize(tau[("a", 1)])
    sol = solve(m.build())
    assert tau[("a", 1)].evaluate(sol.x) == pytest.approx(1.0, abs=1e-7)


def test_tau_rows_structure():
    state = FleetState.initial([pev("a", 1, 3, 20.0)], 0.5)
    m = Model()
    tau, keys, bar = build_tau_rows(m, state)
    assert bar == {"a": 2} and len(keys) == 3
    row = m._rows[-1]
    assert sorted(row.terms.values()) == [1.0, 1.0, 1.0]
    assert m._rhs[-1] == 2.0


def test_tau_rows_zero_demand_inactive():
    state = FleetState.initial([pev("a", 1, 3, 20.0, soc=0.0)], 0.5)
    state = dataclasses.replace(state, remaining_demand={"a": 0.0})
    tau, keys, bar = build_tau_rows(Model(), state)
    assert keys == [] and bar == {}


def test_demand_infeasible():
    state = FleetState.initial([pev("a", 1, 3, 60.0)], 0.5)
    with pytest.raises(DemandInfeasibleError):
        build_tau_rows(Model(), state)


def test_snapshot_charging_term():
    case, prof = two_bus()
    state = FleetState.initial([pev("a", 1, 1, 10.0)], 0.5)
    bp = build_snapshot_problem(case, prof, state, {"a": 1})
    assert bp.charging_cost.evaluate(np.zeros(bp.problem.n)) == pytest.approx(2.0)


def test_objective_consistency(case4):
    case, prof, pevs = case4
    state = state_at(pevs, prof, 3)
    bp = build_init_problem(case, prof, state)
    sol = solve(bp.problem)
    assert sol.optimal
    direct = 0.0
    for s in bp.index.slots:
        pg, _ = bp.generation(sol, s)
        direct += prof.slot_hours * sum(g.cost(pg[g.bus] * case.base_power) for g in case.generators)
    for (pid, s), v in bp.tau(sol).items():
        direct += prof.price(s) * state.pev(pid).max_rate_kw * prof.slot_hours * v
    assert sol.objective == pytest.approx(direct, rel=1e-9)


def test_init_problem_no_pevs(case4):
    case, prof, _ = case4
    bp = build_init_problem(case, prof, FleetState.initial([], prof.slot_hours))
    sol = solve(bp.problem)
    assert sol.optimal
    assert bp.index.slots == [1] and bp.index.tau_keys == []
    assert bp.charging_value(sol) == 0.0


def test_init_problem_fixture(case4):
    case, prof, pevs = case4
    bp = build_init_problem(case, prof, state_at(pevs, prof, 1))
    sol = solve(bp.problem)
    assert sol.optimal
    assert bp.index.slots == [1, 2, 3, 4, 5]


def test_init_problem_overload_infeasible(case4):
    case, prof, _ = case4
    # 3 MW of charging at a bus whose generator tops out far below
    big = [pev("big", 1, 1, 1500.0, station=1, rate=3000.0)]
    bp = build_init_problem(case, prof, FleetState.initial(big, prof.slot_hours))
    sol = solve(bp.problem)
    assert sol.status.value == "infeasible"


def test_surrogate_touches():
    rng = np.random.default_rng(3)
    tp = rng.uniform(0.01, 1, 7)
    const, grad = surrogate_coefficients(tp, 1.5)
    assert const + grad @ tp == pytest.approx(g_value(tp, 1.5), rel=1e-12)


@settings(max_examples=200, deadline=None)
@given(st.lists(st.floats(0, 1), min_size=1, max_size=8), st.data(), st.floats(1.05, 3.0))
def test_surrogate_minorant(tau, data, L):
    tau = np.array(tau)
    tp = np.array(data.draw(st.lists(st.floats(0.001, 1), min_size=len(tau), max_size=len(tau))))
    const, grad = surrogate_coefficients(tp, L)
    assert const + grad @ tau <= g_value(tau, L) + 1e-12


def test_penalized_binary_previous(case4):
    case, prof, pevs = case4
    state = state_at(pevs, prof, 1)
    init = build_init_problem(case, prof, state)
    prev = {k: 0.0 for k in init.index.tau_keys}
    # ev0 needs 3 slots (48 kWh at 22.5 kWh per slot); choose slots 3 to 5
    prev[("ev0", 3)] = prev[("ev0", 4)] = prev[("ev0", 5)] = 1.0
    assert init.index.tau_bar == {"ev0": 3}
    bp = build_penalized_subproblem(case, prof, state, prev, PenaltyConfig(mu=1000.0))
    sol = solve(bp.problem)
    assert sol.optimal
    assert bp.penalty.evaluate(sol.x) == pytest.approx(0.0, abs=1e-6)
    tau = tau_vector(bp.index, bp.tau(sol))
    assert np.allclose(np.sort(tau), [0, 0, 1, 1, 1], atol=1e-5)


def test_penalized_skipped_without_demand(case4):
    case, prof, _ = case4
    state = FleetState.initial([], prof.slot_hours)
    bp = build_penalized_subproblem(case, prof, state, {}, PenaltyConfig())
    assert bp.penalty is None


def test_snapshot_penalty_zero_at_rank_one(case3):
    case, prof, pevs = case3
    state = state_at(pevs, prof, 1)
    V = np.array([1.0, 0.99 * cmath.exp(-0.05j), 0.97 * cmath.exp(-0.1j)])
    W = np.outer(V, V.conj())
    bp = build_snapshot_problem(case, prof, state, {"ev0": 0}, W, lam=1.0, slot=1)
    h = bp.index.per_slot[1]
    x = np.zeros(bp.problem.n)
    x[h.W.block.index] = svec(expand(W))
    assert abs(bp.penalty.evaluate(x)) < 1e-12


def test_snapshot_penalty_scaled_identity(case3):
    case, prof, pevs = case3
    state = state_at(pevs, prof, 1)
    W = 1.1 * np.eye(3)
    bp = build_snapshot_problem(case, prof, state, {"ev0": 0}, W, lam=1.0, slot=1)
    h = bp.index.per_slot[1]
    x = np.zeros(bp.problem.n)
    x[h.W.block.index] = svec(expand(W))
    # Trace - lambda_max = 3.3 - 1.1 = 2.2 = sum of the non-maximal eigenvalues
    assert bp.penalty.evaluate(x) == pytest.approx(2.2)
    bp2 = build_snapshot_problem(case, prof, state, {"ev0": 0}, np.diag([2.0, 1.0, 1.0]),
                                 lam=1.0, slot=1)
    x[h.W.block.index] = svec(expand(np.diag([2.0, 1.0, 1.0])))
    assert bp2.penalty.evaluate(x) == pytest.approx(2.0)


def test_snapshot_without_penalty_is_relaxed_opf(case3):
    case, prof, pevs = case3
    state = state_at(pevs, prof, 1)
    bp = build_snapshot_problem(case, prof, state, {"ev0": 1})
    sol = solve(bp.problem)
    assert sol.optimal and bp.penalty is None
    assert sol.objective == pytest.approx(bp.generation_value(sol), rel=1e-12)
