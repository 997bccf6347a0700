"""Assembly of the convex subproblems solved at each MPC slot.

Three problem families share the same row builders:

* the horizon relaxation with box-relaxed charging decisions (used to
  initialize the path-following loop),
* the penalized horizon subproblem around a previous charging iterate,
* the single-slot snapshot problem with fixed charging decisions and an
  optional eigenvector penalty.

Voltage products enter only through a Hermitian PSD variable per slot, so no
reference angle is fixed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .conic.hermitian import HermitianEmbedding, embed_hermitian, quadratic_epigraph
from .conic.problem import ConicProblem, ConicSolution, LinExpr, Model, lsum
from .fleet import FleetState
from .grid import GridCase, ScenarioProfiles, scaled_load, to_per_unit


class DemandInfeasibleError(ValueError):
    """A PEV needs more charging slots than remain before it departs."""


@dataclass(frozen=True)
class PenaltyConfig:
    mu: float = 10.0
    L: float = 1.5
    lam: float = 1.0
    eps: float = 1e-4
    trust_floor: float = 1e-6

    def __post_init__(self):
        if self.mu <= 0 or self.lam <= 0 or self.eps <= 0 or self.trust_floor <= 0:
            raise ValueError("mu, lambda, eps and trust_floor must be positive")
        if self.L <= 1:
            raise ValueError("L must exceed 1")


@dataclass
class SlotHandles:
    slot: int
    W: HermitianEmbedding
    pg: dict  # generator bus -> LinExpr (per-unit)
    qg: dict


@dataclass
class HorizonIndex:
    t: int
    slots: list[int]
    per_slot: dict  # slot -> SlotHandles
    tau: dict = field(default_factory=dict)  # (pev id, slot) -> LinExpr
    tau_keys: list = field(default_factory=list)  # keys of the free tau entries
    tau_bar: dict = field(default_factory=dict)  # pev id -> required slots

    @property
    def total_required(self) -> int:
        return sum(self.tau_bar.values())


@dataclass
class BuiltProblem:
    problem: ConicProblem
    index: HorizonIndex
    generation_cost: LinExpr
    charging_cost: LinExpr
    penalty: LinExpr | None = None

    def generation_value(self, sol: ConicSolution) -> float:
        return self.generation_cost.evaluate(sol.x)

    def charging_value(self, sol: ConicSolution) -> float:
        return self.charging_cost.evaluate(sol.x)

    def W(self, sol: ConicSolution, slot: int) -> np.ndarray:
        h = self.index.per_slot[slot]
        return h.W.value(sol.value(h.W.block))

    def generation(self, sol: ConicSolution, slot: int) -> tuple[dict, dict]:
        h = self.index.per_slot[slot]
        return ({b: e.evaluate(sol.x) for b, e in h.pg.items()},
                {b: e.evaluate(sol.x) for b, e in h.qg.items()})

    def tau(self, sol: ConicSolution) -> dict:
        return {k: self.index.tau[k].evaluate(sol.x) for k in self.index.tau_keys}


def declare_slot(model: Model, case: GridCase, slot: int) -> SlotHandles:
    W = embed_hermitian(model, case.bus_count, f"W[{slot}]")
    pg, qg = {}, {}
    for g in case.generators:
        pg[g.bus] = model.free(1, f"Pg[{slot},{g.bus}]")[0]
        qg[g.bus] = model.free(1, f"Qg[{slot},{g.bus}]")[0]
    return SlotHandles(slot, W, pg, qg)


def balance_expressions(case: GridCase, profiles: ScenarioProfiles, h: SlotHandles,
                        pev_load: dict | None = None) -> list[LinExpr]:
    """Real and reactive balance residuals per bus (each must equal zero).

    ``sum_m (W_kk - W_km) conj(y_km)`` equals the net injection
    ``P_g - P_l - sum of charging loads + j (Q_g - Q_l)``.
    """
    pev_load = pev_load or {}
    idx = case._index
    rows = []
    for bus in case.buses:
        k = idx[bus.id]
        p_flow, q_flow = LinExpr(), LinExpr()
        for nb, y in case.neighbors(bus.id):
            m = idx[nb]
            g, bsus = y.real, y.imag
            d_re = h.W.re(k, k) - h.W.re(k, m)
            w_im = h.W.im(k, m)
            p_flow = p_flow + d_re * g - w_im * bsus
            q_flow = q_flow - d_re * bsus - w_im * g
        pl, ql = scaled_load(bus.id, h.slot, profiles)
        p_inj = LinExpr.lift(-pl) - pev_load.get(bus.id, 0.0)
        q_inj = LinExpr.lift(-ql)
        if bus.id in h.pg:
            p_inj = p_inj + h.pg[bus.id]
            q_inj = q_inj + h.qg[bus.id]
        rows.append(p_flow - p_inj)
        rows.append(q_flow - q_inj)
    return rows


def build_balance_rows(model: Model, case: GridCase, profiles: ScenarioProfiles,
                       h: SlotHandles, pev_load: dict | None = None) -> list[LinExpr]:
    rows = balance_expressions(case, profiles, h, pev_load)
    for r in rows:
        model.add_eq(r, 0.0)
    return rows


def static_expressions(case: GridCase, h: SlotHandles) -> list[LinExpr]:
    """Inequality residuals (each must be >= 0): voltage boxes, two-sided
    angle limits, generator limits."""
    idx = case._index
    out = []
    for bus in case.buses:
        k = idx[bus.id]
        out.append(h.W.re(k, k) - bus.v_min ** 2)
        out.append(bus.v_max ** 2 - h.W.re(k, k))
    for ln in case.lines:
        k, m = idx[ln.from_bus], idx[ln.to_bus]
        t = math.tan(ln.theta_max)
        out.append(h.W.re(k, m) * t - h.W.im(k, m))
        out.append(h.W.re(k, m) * t + h.W.im(k, m))
    for g in case.generators:
        out.append(h.pg[g.bus] - g.p_limits[0])
        out.append(g.p_limits[1] - h.pg[g.bus])
        out.append(h.qg[g.bus] - g.q_limits[0])
        out.append(g.q_limits[1] - h.qg[g.bus])
    return out


def build_static_rows(model: Model, case: GridCase, h: SlotHandles) -> list[LinExpr]:
    rows = static_expressions(case, h)
    for r in rows:
        model.add_ge(r, 0.0)
    return rows


def build_tau_rows(model: Model, state: FleetState, fixed: dict | None = None) -> tuple[dict, list, dict]:
    """Charging variables in [0, 1] on each active window, with the
    remaining-demand equality per PEV.  With ``fixed`` the decisions enter
    as constants instead and no rows are added."""
    tau, keys, tau_bar = {}, [], {}
    for p in state.active_set:
        window = list(state.window(p.id))
        need = state.required(p.id)
        if need > len(window):
            raise DemandInfeasibleError(
                f"PEV {p.id} needs {need} slots but only {len(window)} remain")
        tau_bar[p.id] = need
        for s in window:
            keys.append((p.id, s))
            if fixed is not None:
                tau[(p.id, s)] = LinExpr.lift(float(fixed[(p.id, s)]))
                continue
            v = model.nonneg(1, f"tau[{p.id},{s}]")[0]
            model.add_le(v, 1.0)
            tau[(p.id, s)] = v
        if fixed is None:
            model.add_eq(lsum(tau[(p.id, s)] for s in window), float(need))
    return tau, keys, tau_bar


def pev_loads(case: GridCase, state: FleetState, slot: int, tau: dict) -> dict:
    """Per-unit charging load per station bus for a slot."""
    loads: dict = {}
    for p in state.pevs:
        key = (p.id, slot)
        if key in tau:
            kw = to_per_unit(p.max_rate_kw, case.base_power)
            loads[p.station] = LinExpr.lift(loads.get(p.station, 0.0)) + LinExpr.lift(tau[key]) * kw
    return loads


def build_objective(model: Model, case: GridCase, profiles: ScenarioProfiles,
                    index: HorizonIndex, state: FleetState) -> tuple[LinExpr, LinExpr]:
    """Generation cost (slot_hours * f(P in MW)) and charging cost
    (price * kWh drawn) over the indexed slots."""
    hours = profiles.slot_hours
    gen = LinExpr()
    for s in index.slots:
        h = index.per_slot[s]
        for g in case.generators:
            c2, c1, c0 = g.cost_coeffs
            base = case.base_power
            coeffs = (c2 * base * base * hours, c1 * base * hours, c0 * hours)
            gen = gen + quadratic_epigraph(model, coeffs, h.pg[g.bus], f"cost[{s},{g.bus}]")
    charge = LinExpr()
    for (pid, s), v in index.tau.items():
        p = state.pev(pid)
        charge = charge + LinExpr.lift(v) * (profiles.price(s) * p.max_rate_kw * hours)
    return gen, charge


def _horizon_model(case, profiles, state, fixed_tau=None):
    model = Model()
    t = state.clock
    last = max([p.departure_slot for p in state.active_set], default=t)
    slots = list(range(t, last + 1))
    tau, keys, tau_bar = build_tau_rows(model, state, fixed_tau)
    index = HorizonIndex(t, slots, {}, tau, keys, tau_bar)
    for s in slots:
        h = declare_slot(model, case, s)
        index.per_slot[s] = h
        build_balance_rows(model, case, profiles, h, pev_loads(case, state, s, tau))
        build_static_rows(model, case, h)
    gen, charge = build_objective(model, case, profiles, index, state)
    return model, index, gen, charge


def build_init_problem(case: GridCase, profiles: ScenarioProfiles, state: FleetState) -> BuiltProblem:
    """Horizon relaxation with charging decisions relaxed to [0, 1]."""
    model, index, gen, charge = _horizon_model(case, profiles, state)
    model.minimize(gen + charge)
    return BuiltProblem(model.build(), index, gen, charge)


def build_fixed_problem(case: GridCase, profiles: ScenarioProfiles, state: FleetState,
                        tau: dict) -> BuiltProblem:
    """Horizon relaxation with every charging decision set to ``tau``
    ((pev id, slot) -> value)."""
    model, index, gen, charge = _horizon_model(case, profiles, state, fixed_tau=tau)
    model.minimize(gen + charge)
    return BuiltProblem(model.build(), index, gen, charge)


def surrogate_coefficients(tau_prev: np.ndarray, L: float) -> tuple[float, np.ndarray]:
    """Affine minorant of g(tau) = sum tau^L at tau_prev: const + grad . tau."""
    tp = np.clip(np.asarray(tau_prev, dtype=float), 0.0, 1.0)
    const = -(L - 1.0) * np.sum(tp ** L)
    grad = L * tp ** (L - 1.0)
    return float(const), grad


def build_penalized_subproblem(case: GridCase, profiles: ScenarioProfiles, state: FleetState,
                               tau_prev: dict, config: PenaltyConfig) -> BuiltProblem:
    """Convex subproblem around ``tau_prev``: objective plus mu times an
    exact hyperbolic epigraph of 1 / g_kappa(tau), minus mu / tau_bar."""
    model, index, gen, charge = _horizon_model(case, profiles, state)
    total = index.total_required
    if total == 0 or not index.tau_keys:
        model.minimize(gen + charge)
        return BuiltProblem(model.build(), index, gen, charge, None)
    prev = np.array([tau_prev[k] for k in index.tau_keys])
    const, grad = surrogate_coefficients(prev, config.L)
    g_lin = LinExpr.lift(const) + lsum(index.tau[k] * gk for k, gk in zip(index.tau_keys, grad))
    s = model.nonneg(1, "inv_g")[0]
    model.add_rotated_soc(s, g_lin, [math.sqrt(2.0)], "s*g>=1")
    model.add_ge(g_lin, config.trust_floor, "trust")
    penalty = s * config.mu - config.mu / total
    model.minimize(gen + charge + penalty)
    return BuiltProblem(model.build(), index, gen, charge, penalty)


def build_snapshot_problem(case: GridCase, profiles: ScenarioProfiles, state: FleetState,
                           tau_fixed: dict, w_prev: np.ndarray | None = None,
                           lam: float = 1.0, slot: int | None = None) -> BuiltProblem:
    """Single-slot problem with charging decisions fixed to ``tau_fixed``
    (pev id -> 0/1).  With ``w_prev`` the objective carries
    lam * (Trace(W) - w^H W w) for the top eigenvector w of ``w_prev``."""
    from .conic.hermitian import max_eigpair

    s = state.clock if slot is None else slot
    model = Model()
    h = declare_slot(model, case, s)
    consts = {(pid, s): float(v) for pid, v in tau_fixed.items()}
    build_balance_rows(model, case, profiles, h, pev_loads(case, state, s, consts))
    build_static_rows(model, case, h)
    index = HorizonIndex(s, [s], {s: h}, consts, [], {})
    gen, charge = build_objective(model, case, profiles, index, state)
    penalty = None
    if w_prev is not None:
        _, w = max_eigpair(w_prev)
        penalty = (h.W.trace() - h.W.quad(w)) * lam
        model.minimize(gen + penalty)
    else:
        model.minimize(gen)
    return BuiltProblem(model.build(), index, gen, charge, penalty)


def tau_vector(index: HorizonIndex, tau: dict) -> np.ndarray:
    return np.array([tau[k] for k in index.tau_keys], dtype=float)
