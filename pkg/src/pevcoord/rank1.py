"""Rank-one recovery for a single slot.

With the charging decisions of the slot fixed, the snapshot relaxation is
re-solved with the penalty ``lam * (Trace(W) - w^H W w)`` where ``w`` is the
top eigenvector of the previous iterate.  Since ``w^H W w <= lambda_max(W)``
for unit ``w``, each subproblem majorizes ``F + lam * (Trace - lambda_max)``
and the iteration is a majorize-minimize descent.  Once the iterate is
numerically rank one the voltage vector is read off its top eigenpair.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .builder import PenaltyConfig, build_snapshot_problem, pev_loads
from .conic.hermitian import max_eigpair, rank_residual
from .conic.ipm import solve
from .conic.problem import Tolerances
from .errors import InfeasibleError, NonConvergenceError
from .fleet import FleetState
from .grid import GridCase, ScenarioProfiles, scaled_load

log = logging.getLogger(__name__)

FEASIBILITY_TOL = 1e-5
MAX_DOUBLINGS = 6
# a rank residual shrinking by less than this factor counts as a stall
STALL_RATIO = 0.9


class RankError(ValueError):
    """The matrix is too far from rank one to factor."""


def relative_rank_residual(W: np.ndarray) -> float:
    return rank_residual(W) / max(1.0, float(np.trace(W).real))


def extract_voltage(W: np.ndarray, eps: float = 1e-4) -> np.ndarray:
    """Voltage vector V with V V^H ~ W, first nonzero entry real positive."""
    rel = relative_rank_residual(W)
    if rel > eps:
        raise RankError(f"relative rank residual {rel:.3e} exceeds {eps:g}")
    lam, w = max_eigpair(W)
    V = math.sqrt(max(lam, 0.0)) * w
    scale = np.abs(V).max(initial=0.0)
    nz = np.flatnonzero(np.abs(V) > 1e-12 * max(scale, 1e-300))
    if nz.size:
        V = V * (abs(V[nz[0]]) / V[nz[0]])
        V[nz[0]] = abs(V[nz[0]])
    return V


def generation_from_voltage(case: GridCase, profiles: ScenarioProfiles, state: FleetState,
                            slot: int, tau_fixed: dict, V: np.ndarray) -> tuple[dict, dict]:
    """Generator (P, Q) in per-unit that balances each generator bus for V."""
    S = case.injections(V)
    loads = _pev_values(case, state, slot, tau_fixed)
    pg, qg = {}, {}
    for g in case.generators:
        k = case.bus_index(g.bus)
        pl, ql = scaled_load(g.bus, slot, profiles)
        pg[g.bus] = float(S[k].real + pl + loads.get(g.bus, 0.0))
        qg[g.bus] = float(S[k].imag + ql)
    return pg, qg


def _pev_values(case, state, slot, tau_fixed) -> dict:
    consts = {(pid, slot): float(v) for pid, v in tau_fixed.items()}
    return {b: e.evaluate(np.zeros(0)) for b, e in pev_loads(case, state, slot, consts).items()}


def constraint_residuals(case: GridCase, profiles: ScenarioProfiles, state: FleetState,
                         slot: int, tau_fixed: dict, V: np.ndarray, pg: dict, qg: dict) -> dict:
    """Largest violation (per-unit) of each slot constraint family for a
    voltage vector and generator dispatch."""
    V = np.asarray(V, dtype=complex)
    S = case.injections(V)
    loads = _pev_values(case, state, slot, tau_fixed)
    bal = 0.0
    for bus in case.buses:
        k = case.bus_index(bus.id)
        pl, ql = scaled_load(bus.id, slot, profiles)
        p_net = pg.get(bus.id, 0.0) - pl - loads.get(bus.id, 0.0)
        q_net = qg.get(bus.id, 0.0) - ql
        bal = max(bal, abs(S[k].real - p_net), abs(S[k].imag - q_net))
    volt = 0.0
    for bus in case.buses:
        mag = abs(V[case.bus_index(bus.id)])
        volt = max(volt, bus.v_min - mag, mag - bus.v_max)
    angle = 0.0
    for ln in case.lines:
        k, m = case.bus_index(ln.from_bus), case.bus_index(ln.to_bus)
        wkm = V[k] * np.conj(V[m])
        t = math.tan(ln.theta_max)
        angle = max(angle, abs(wkm.imag) - t * wkm.real)
    gen = 0.0
    for g in case.generators:
        p, q = pg[g.bus], qg[g.bus]
        gen = max(gen, g.p_limits[0] - p, p - g.p_limits[1], g.q_limits[0] - q, q - g.q_limits[1])
    return {"balance": bal, "voltage": max(volt, 0.0), "angle": max(angle, 0.0),
            "generation": max(gen, 0.0)}


def generation_cost(case: GridCase, profiles: ScenarioProfiles, pg: dict) -> float:
    """Slot generation cost: slot_hours * f(P in MW) summed over generators."""
    return profiles.slot_hours * math.fsum(g.cost(pg[g.bus] * case.base_power) for g in case.generators)


@dataclass
class Rank1Iterate:
    kappa: int
    W: np.ndarray
    R: tuple  # (P_g, Q_g) dicts from the subproblem
    rank_residual: float
    objective: float  # generation cost F at the iterate
    lam: float
    penalized: float  # F + lam * rank_residual at the iterate
    penalized_before: float  # same functional at the previous iterate
    solver_iterations: int = 0

    def record(self) -> dict:
        return {"kappa": self.kappa, "rank_residual": self.rank_residual,
                "objective": self.objective, "lambda_used": self.lam}


@dataclass
class Rank1Result:
    V: np.ndarray
    R: tuple  # (P_g, Q_g) recomputed from V
    objective: float
    W: np.ndarray
    residuals: dict
    iterates: list[Rank1Iterate] = field(default_factory=list)

    @property
    def iterations(self) -> int:
        return len(self.iterates)

    def diagnostics(self) -> list[dict]:
        return [it.record() for it in self.iterates]

    def diagnostics_jsonl(self) -> str:
        return "".join(json.dumps(r, sort_keys=True) + "\n" for r in self.diagnostics())


def _accept(case, profiles, state, slot, tau_fixed, W, eps):
    """Voltage, dispatch, residuals and cost if W passes both tests, else None."""
    if relative_rank_residual(W) > eps:
        return None
    V = extract_voltage(W, eps)
    pg, qg = generation_from_voltage(case, profiles, state, slot, tau_fixed, V)
    res = constraint_residuals(case, profiles, state, slot, tau_fixed, V, pg, qg)
    if max(res.values()) > FEASIBILITY_TOL:
        return None
    return V, (pg, qg), res, generation_cost(case, profiles, pg)


def solve_rank1(case: GridCase, profiles: ScenarioProfiles, state: FleetState, tau_fixed: dict,
                w_init: np.ndarray, config: PenaltyConfig | None = None,
                tolerances: Tolerances | None = None, max_iters: int = 50,
                slot: int | None = None, f_init: float | None = None) -> Rank1Result:
    """Iterate the eigenvector-penalized snapshot problem from ``w_init``.

    Stops when the relative rank residual is at most ``config.eps`` and the
    extracted voltage meets every slot constraint to 1e-5 per-unit.
    ``f_init`` is the generation cost belonging to ``w_init`` when the caller
    knows it; the first iterate then reports a finite ``penalized_before``.
    """
    config = config or PenaltyConfig()
    tol = tolerances or Tolerances()
    s = state.clock if slot is None else slot
    W = np.asarray(w_init, dtype=complex)
    done = _accept(case, profiles, state, s, tau_fixed, W, config.eps)
    if done is not None:
        V, R, res, cost = done
        return Rank1Result(V, R, cost, W, res, [])

    lam = config.lam
    iterates: list[Rank1Iterate] = []
    prev_W, prev_F = W, f_init
    best = None
    doublings = 0
    for kappa in range(max_iters):
        bp = build_snapshot_problem(case, profiles, state, tau_fixed, prev_W, lam, s)
        sol = solve(bp.problem, tol)
        if not sol.optimal:
            raise InfeasibleError(f"eigenvector-penalized snapshot failed ({sol.status.value})", s,
                                  [i.record() for i in iterates])
        W = bp.W(sol, s)
        F = bp.generation_value(sol)
        rr = rank_residual(W)
        before = (prev_F + lam * rank_residual(prev_W)) if prev_F is not None else math.inf
        it = Rank1Iterate(kappa, W, bp.generation(sol, s), rr, F, lam, F + lam * rr, before,
                          sol.iterations)
        iterates.append(it)
        log.info("slot %d rank1 kappa %d residual %.3e objective %.9g lambda %g",
                 s, kappa, rr, F, lam)
        if best is None or rr < best.rank_residual:
            best = it
        done = _accept(case, profiles, state, s, tau_fixed, W, config.eps)
        if done is not None:
            V, R, res, cost = done
            return Rank1Result(V, R, cost, W, res, iterates)
        prev_rr = rank_residual(prev_W)
        if kappa > 0 and rr > STALL_RATIO * prev_rr and doublings < MAX_DOUBLINGS:
            lam *= 2.0
            doublings += 1
            log.info("slot %d rank1 stall, lambda -> %g", s, lam)
        prev_W, prev_F = W, F
    raise NonConvergenceError(
        f"rank-one recovery did not converge in {max_iters} iterations "
        f"(best relative residual {relative_rank_residual(best.W):.3e})",
        s, [i.record() for i in iterates], best)
