"""Path-following solver for the horizon mixed-integer convex program.

Binary charging decisions are replaced by the box [0, 1] plus the concave
penalty ``mu * (1 / g(tau) - 1 / tau_bar)`` with ``g(tau) = sum tau^L``.
Each outer iteration linearizes ``g`` at the current point (a global
minorant, since ``g`` is convex), which turns the penalty into an upper
bound, and solves the resulting convex problem exactly.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .builder import (BuiltProblem, PenaltyConfig, build_fixed_problem, build_init_problem,
                      build_penalized_subproblem, tau_vector)
from .conic.ipm import solve
from .conic.problem import Tolerances
from .errors import InfeasibleError, NonConvergenceError
from .fleet import FleetState
from .grid import GridCase, ScenarioProfiles

log = logging.getLogger(__name__)

DESCENT_TOL = 1e-9
STALL_TOL = 1e-9


def g_value(tau, L: float) -> float:
    tau = np.asarray(tau, dtype=float)
    return float(np.sum(tau ** L))


def g1_value(tau, L: float, tau_bar: float) -> float:
    """1 / g(tau) - 1 / tau_bar: nonnegative on the feasible box, zero
    exactly at binary points."""
    if tau_bar <= 0:
        raise ValueError("tau_bar must be positive")
    g = g_value(tau, L)
    if g <= 0:
        raise ZeroDivisionError("g(tau) = 0, penalty undefined")
    return 1.0 / g - 1.0 / tau_bar


def binary_gap(tau, L: float) -> float:
    tau = np.asarray(tau, dtype=float)
    return float(np.sum(tau - tau ** L))


@dataclass
class MicpIterate:
    kappa: int
    phi: float  # optimal value of the kappa-th convex surrogate
    phi_true: float  # penalized objective at the new point
    binary_gap: float
    mu: float
    solver_status: str
    solver_iterations: int

    def record(self) -> dict:
        return {"kappa": self.kappa, "phi": self.phi, "binary_gap": self.binary_gap,
                "solver_status": self.solver_status, "mu": self.mu}


@dataclass
class MicpResult:
    tau: dict  # (pev id, slot) -> 0/1
    relaxed_tau: dict  # last iterate before rounding
    final_gap: float
    objective: float  # cost of the rounded schedule over the horizon
    fixed: BuiltProblem  # horizon problem with tau fixed to the rounded point
    solution: object  # ConicSolution of ``fixed``
    iterates: list[MicpIterate] = field(default_factory=list)
    mu_final: float = 0.0

    def slot_tau(self, slot: int) -> dict:
        return {pid: v for (pid, s), v in self.tau.items() if s == slot}

    def W(self, slot: int) -> np.ndarray:
        return self.fixed.W(self.solution, slot)

    def generation(self, slot: int):
        return self.fixed.generation(self.solution, slot)

    def diagnostics(self) -> list[dict]:
        return [it.record() for it in self.iterates]


def penalized_value(bp: BuiltProblem, sol, tau: np.ndarray, L: float, mu: float, tau_bar: int) -> float:
    f = bp.generation_value(sol) + bp.charging_value(sol)
    if tau_bar == 0:
        return f
    return f + mu * g1_value(tau, L, tau_bar)


def solve_micp(case: GridCase, profiles: ScenarioProfiles, state: FleetState,
               config: PenaltyConfig | None = None, tolerances: Tolerances | None = None,
               max_outer: int = 100, escalation: float = 5.0, max_escalations: int = 4) -> MicpResult:
    config = config or PenaltyConfig()
    tol = tolerances or Tolerances()
    init = build_init_problem(case, profiles, state)
    sol = solve(init.problem, tol)
    if not sol.optimal:
        raise InfeasibleError(f"relaxed horizon problem not solved ({sol.status.value})",
                              state.clock)
    index = init.index
    total = index.total_required
    tau = np.clip(tau_vector(index, init.tau(sol)), 0.0, 1.0)
    mu = config.mu
    iterates: list[MicpIterate] = []
    gap = binary_gap(tau, config.L)
    prev_phi = penalized_value(init, sol, tau, config.L, mu, total) if total else None
    escalations = 0
    kappa = 0
    while gap > config.eps:
        if kappa >= max_outer:
            raise NonConvergenceError(
                f"path-following did not reach binary gap {config.eps} in {max_outer} iterations "
                f"(gap {gap:.3e}); consider a larger mu", state.clock, [i.record() for i in iterates])
        cfg = PenaltyConfig(mu=mu, L=config.L, lam=config.lam, eps=config.eps,
                            trust_floor=config.trust_floor)
        sub = build_penalized_subproblem(case, profiles, state, dict(zip(index.tau_keys, tau)), cfg)
        sol = solve(sub.problem, tol)
        if not sol.optimal:
            raise NonConvergenceError(f"penalized subproblem failed ({sol.status.value})",
                                      state.clock, [i.record() for i in iterates])
        new_tau = np.clip(tau_vector(sub.index, sub.tau(sol)), 0.0, 1.0)
        phi = sol.objective
        phi_true = penalized_value(sub, sol, new_tau, config.L, mu, total)
        gap = binary_gap(new_tau, config.L)
        it = MicpIterate(kappa, phi, phi_true, gap, mu, sol.status.value, sol.iterations)
        iterates.append(it)
        log.info("slot %d micp kappa %d phi %.9g gap %.3e mu %g", state.clock, kappa, phi, gap, mu)
        stalled = prev_phi is not None and prev_phi - phi_true < STALL_TOL * max(1.0, abs(phi_true))
        tau = new_tau
        prev_phi = phi_true
        kappa += 1
        if stalled and gap > config.eps:
            if escalations >= max_escalations:
                raise NonConvergenceError(
                    f"path-following stalled at binary gap {gap:.3e}; increase mu beyond {mu:g}",
                    state.clock, [i.record() for i in iterates])
            mu *= escalation
            escalations += 1
            log.info("slot %d micp stall, mu -> %g", state.clock, mu)

    relaxed = dict(zip(index.tau_keys, tau))
    rounded = {k: int(v >= 0.5) for k, v in relaxed.items()}
    for pid, need in index.tau_bar.items():
        got = sum(v for (p, _), v in rounded.items() if p == pid)
        if got != need:
            raise NonConvergenceError(
                f"rounded schedule gives PEV {pid} {got} slots instead of {need}", state.clock,
                [i.record() for i in iterates])
    fixed = build_fixed_problem(case, profiles, state, rounded)
    fsol = solve(fixed.problem, tol)
    if not fsol.optimal:
        raise InfeasibleError(f"rounded schedule not realizable ({fsol.status.value})", state.clock)
    return MicpResult(rounded, relaxed, gap, fsol.objective, fixed, fsol, iterates, mu)
