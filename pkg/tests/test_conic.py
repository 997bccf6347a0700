import math

import numpy as np
import pytest
import scipy.sparse as sp

from conic_battery import BATTERY
from pevcoord.conic import ConicProblem, LinExpr, Model, Status, Tolerances, solve
from pevcoord.conic.cones import (Dims, NTScaling, congruence_matrix, identity, jordan,
                                  jordan_solve, max_step, smat, svec, svec_dim)
from pevcoord.conic.problem import Block


def rel_err(value, expected):
    return abs(value - expected) / max(1.0, abs(expected))


@pytest.mark.parametrize("make", BATTERY, ids=[f.__name__ for f in BATTERY])
def test_battery(make):
    model, expected = make()
    sol = solve(model.build())
    assert sol.status is Status.OPTIMAL
    assert sol.duality_gap <= 1e-8
    assert sol.primal_residual <= 1e-8 and sol.dual_residual <= 1e-8
    assert rel_err(sol.objective, expected) <= 1e-7


def test_scalar_psd_solution():
    model, _ = BATTERY[16]()
    sol = solve(model.build())
    assert sol.x[0] == pytest.approx(1.0, abs=1e-8)


def test_trace_bound_solution():
    m = Model()
    X = m.psd(2)
    m.add_eq(X.entry(0, 0), 1.0)
    m.minimize(X.trace())
    sol = solve(m.build())
    W = sol.value(X)
    assert np.allclose(W, np.diag([1.0, 0.0]), atol=1e-6)


def test_hyperbolic_value():
    m = Model()
    s = m.nonneg(1)
    m.add_rotated_soc(s[0], 4.0, [math.sqrt(2.0)])
    m.minimize(s[0])
    sol = solve(m.build())
    assert sol.value(s)[0] == pytest.approx(0.25, abs=1e-8)


def test_infeasible():
    m = Model()
    x = m.nonneg(1)[0]
    m.add_eq(x, -1.0)
    m.minimize(x)
    assert solve(m.build()).status is Status.INFEASIBLE


def test_infeasible_inconsistent_rows():
    m = Model()
    x = m.free(1)[0]
    m.add_eq(x, 1.0)
    m.add_eq(x, 2.0)
    m.minimize(x)
    assert solve(m.build()).status is Status.INFEASIBLE


def test_infeasible_cone():
    # ||(1, 1)|| <= t with t <= 1
    m = Model()
    t = m.free(1)[0]
    m.add_soc([t, LinExpr.lift(1.0), LinExpr.lift(1.0)])
    m.add_le(t, 1.0)
    m.minimize(t)
    assert solve(m.build()).status is Status.INFEASIBLE


def test_unbounded():
    m = Model()
    x = m.nonneg(1)[0]
    m.minimize(-x)
    assert solve(m.build()).status is Status.UNBOUNDED


def test_max_iters_reported():
    model, _ = BATTERY[19]()
    sol = solve(model.build(), Tolerances(max_iters=2))
    assert sol.status is Status.MAX_ITERS
    assert sol.iterations == 2


def test_repeat_solve_identical():
    model, _ = BATTERY[-1]()
    p = model.build()
    a, b = solve(p), solve(p)
    assert abs(a.objective - b.objective) <= 1e-9


def test_row_permutation_invariance():
    model, expected = BATTERY[-1]()
    p = model.build()
    perm = np.random.default_rng(3).permutation(p.A.shape[0])
    q = ConicProblem(p.blocks, p.c, p.A[perm], p.b[perm], p.offset)
    assert abs(solve(q).objective - solve(p).objective) <= 1e-6


def test_block_reordering_invariance():
    def build(order):
        m = Model()
        made = {}
        for kind in order:
            if kind == "psd":
                made[kind] = m.psd(2)
            elif kind == "nonneg":
                made[kind] = m.nonneg(2)
            else:
                made[kind] = m.free(1)
        X, x, t = made["psd"], made["nonneg"], made["free"][0]
        m.add_eq(X.entry(0, 0) - x[0], 0.0)
        m.add_eq(X.entry(1, 1) - x[1], 0.0)
        m.add_eq(X.entry(1, 0), 1.0)
        m.add_soc([t, x[0], x[1]])
        m.minimize(t)
        return solve(m.build()).objective

    assert abs(build(["psd", "nonneg", "free"]) - build(["free", "nonneg", "psd"])) <= 1e-6


def test_weak_duality_at_solution():
    for make in BATTERY:
        model, _ = make()
        sol = solve(model.build())
        assert sol.objective >= sol.dual_objective - 1e-8 * max(1.0, abs(sol.objective))


def test_history_recorded():
    model, _ = BATTERY[0]()
    sol = solve(model.build())
    assert len(sol.history) == sol.iterations + 1
    assert {"pobj", "dobj", "gap", "pres", "dres"} <= set(sol.history[0])


def test_dump_deterministic():
    model, _ = BATTERY[-1]()
    p = model.build()
    assert p.dump() == p.dump()
    assert p.dump().count("\n") >= p.A.shape[0]


def test_problem_invariants():
    with pytest.raises(ValueError):
        Block("soc", 1)
    with pytest.raises(ValueError):
        Block("psd", 0)
    with pytest.raises(ValueError):
        ConicProblem([Block("free", 1)], np.zeros(1), sp.csr_matrix((1, 2)), np.zeros(1))


def test_linexpr_arithmetic():
    m = Model()
    x = m.free(2)
    e = (x[0] * 2 + 3 - x[1]) / 2
    assert e.evaluate(np.array([1.0, 4.0])) == pytest.approx(0.5)
    assert (1 - x[0]).evaluate(np.array([2.0, 0.0])) == pytest.approx(-1.0)


# ---- cone utilities ---------------------------------------------------------

def test_svec_roundtrip():
    rng = np.random.default_rng(0)
    A = rng.normal(size=(4, 4))
    S = A + A.T
    v = svec(S)
    assert v.shape == (svec_dim(4),)
    assert np.allclose(smat(v), S)
    B = rng.normal(size=(4, 4))
    B = B + B.T
    assert svec(S) @ svec(B) == pytest.approx(np.trace(S @ B))


def test_congruence_matrix():
    rng = np.random.default_rng(1)
    R = rng.normal(size=(3, 3))
    S = rng.normal(size=(3, 3))
    S = S + S.T
    assert np.allclose(congruence_matrix(R) @ svec(S), svec(R.T @ S @ R))


def _random_interior(dims, rng):
    parts = [rng.uniform(0.5, 2.0, dims.nonneg)]
    for q in dims.soc:
        tail = rng.normal(size=q - 1)
        parts.append(np.concatenate([[np.linalg.norm(tail) + rng.uniform(0.1, 1.0)], tail]))
    for n in dims.psd:
        A = rng.normal(size=(n, n))
        parts.append(svec(A @ A.T + 0.5 * np.eye(n)))
    return np.concatenate(parts)


def test_nt_scaling_identities():
    rng = np.random.default_rng(2)
    dims = Dims(0, 3, (3, 4), (2, 3))
    x, z = _random_interior(dims, rng), _random_interior(dims, rng)
    W = NTScaling(dims, x, z)
    assert np.allclose(W.apply(z, "W"), W.lam, atol=1e-12)
    assert np.allclose(W.apply(x, "Winvt"), W.lam, atol=1e-12)
    u, v = rng.normal(size=x.size), rng.normal(size=x.size)
    assert W.apply(u, "W") @ v == pytest.approx(u @ W.apply(v, "Wt"))


def test_jordan_solve_inverts_product():
    rng = np.random.default_rng(4)
    dims = Dims(0, 2, (3,), (3,))
    # the scaled point is diagonal on PSD blocks
    lam = np.concatenate([[1.5, 0.7], [2.0, 0.3, -0.5], svec(np.diag([0.4, 1.0, 2.5]))])
    r = rng.normal(size=lam.size)
    s = jordan_solve(dims, lam, r)
    assert np.allclose(jordan(dims, lam, s), r, atol=1e-10)


def test_identity_and_max_step():
    dims = Dims(0, 2, (3,), (2,))
    e = identity(dims)
    assert dims.degree == 2 + 1 + 2
    d = -e
    assert max_step(dims, e, d) == pytest.approx(1.0)
    assert max_step(dims, e, e) == math.inf
