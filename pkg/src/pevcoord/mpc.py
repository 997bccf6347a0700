"""Online receding-horizon coordination and its offline reference.

At each slot the horizon problem is solved by path-following (stage 1), the
slot's voltage matrix is made rank one if needed (stage 2), and only the
slot's decisions are applied before the fleet advances.
"""

from __future__ import annotations

import csv
import io
import itertools
import json
import logging
import math
import time
from dataclasses import dataclass, field, replace

import numpy as np

from .builder import DemandInfeasibleError, PenaltyConfig, build_snapshot_problem
from .conic.hermitian import rank_residual
from .conic.ipm import solve
from .conic.problem import Tolerances
from .errors import InfeasibleError
from .fleet import FleetState, advance
from .grid import GridCase, ScenarioProfiles
from .micp import solve_micp
from .rank1 import generation_cost, solve_rank1

log = logging.getLogger(__name__)

ORACLE_MAX_BINARIES = 20


@dataclass(frozen=True)
class MpcConfig:
    penalty: PenaltyConfig = field(default_factory=PenaltyConfig)
    tolerances: Tolerances = field(default_factory=Tolerances)
    max_outer: int = 100
    rank1_max_iters: int = 50


def rank_check(W_blocks: dict, eps: float = 1e-4) -> dict:
    """slot -> True when (Trace - lambda_max) / max(1, Trace) <= eps."""
    out = {}
    for s, W in W_blocks.items():
        tr = float(np.trace(W).real)
        out[s] = rank_residual(W) / max(1.0, tr) <= eps
    return out


def charging_cost(profiles: ScenarioProfiles, pevs, slot: int, tau: dict) -> float:
    """Energy bought for charging in a slot: price * rate * slot_hours per
    charging PEV."""
    by_id = {p.id: p for p in pevs}
    return math.fsum(profiles.price(slot) * by_id[pid].max_rate_kw * profiles.slot_hours * v
                     for pid, v in sorted(tau.items()))


@dataclass
class SlotRecord:
    t: int
    applied_tau: dict  # pev id -> 0/1 for the active set
    V: np.ndarray
    Pg: dict
    Qg: dict
    slot_generation_cost: float  # at the recovered voltage
    slot_charging_cost: float
    stage1_generation_cost: float  # relaxation value for the slot
    stage1_iterations: int
    stage2_iterations: int
    rank_check: dict  # horizon slot -> bool
    soc: dict  # state of charge after the slot
    runtime_s: float
    stage1_diagnostics: list = field(default_factory=list)
    stage2_diagnostics: list = field(default_factory=list)

    @property
    def stage2_triggered(self) -> bool:
        return self.stage2_iterations > 0

    @property
    def slot_cost(self) -> float:
        return self.slot_generation_cost + self.slot_charging_cost


@dataclass
class MpcTrace:
    pev_ids: list
    initial_soc: dict
    records: list[SlotRecord]
    unmet: list  # PEV ids that left with demand outstanding
    config: MpcConfig
    binary_variables: int

    @property
    def objective(self) -> float:
        return math.fsum(r.slot_cost for r in self.records)

    @property
    def objective_stage1(self) -> float:
        return math.fsum(r.stage1_generation_cost + r.slot_charging_cost for r in self.records)

    @property
    def runtime_per_slot(self) -> float:
        return float(np.mean([r.runtime_s for r in self.records])) if self.records else 0.0

    def summary(self) -> dict:
        return {"binary_variables": self.binary_variables,
                "mu": self.config.penalty.mu,
                "lambda": self.config.penalty.lam,
                "obj_stage1": self.objective_stage1,
                "obj_stage2": self.objective,
                "avg_slot_time_s": self.runtime_per_slot}

    # ---- serialization -------------------------------------------------

    CSV_FIELDS = ("t", "applied_tau", "Pg", "Qg", "V", "slot_generation_cost",
                  "slot_charging_cost", "stage1_generation_cost", "stage1_iterations",
                  "stage2_iterations", "rank_check")

    def to_csv(self) -> str:
        """One row per slot; runtime fields are left out so identical runs
        give identical bytes."""
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.CSV_FIELDS)
        for r in self.records:
            w.writerow([
                r.t,
                ";".join(f"{pid}={v}" for pid, v in sorted(r.applied_tau.items())),
                ";".join(f"{b}={_fmt(v)}" for b, v in sorted(r.Pg.items())),
                ";".join(f"{b}={_fmt(v)}" for b, v in sorted(r.Qg.items())),
                ";".join(f"{_fmt(v.real)}{_fmt(v.imag, True)}j" for v in r.V),
                _fmt(r.slot_generation_cost), _fmt(r.slot_charging_cost),
                _fmt(r.stage1_generation_cost), r.stage1_iterations, r.stage2_iterations,
                ";".join(f"{s}={int(ok)}" for s, ok in sorted(r.rank_check.items())),
            ])
        return buf.getvalue()

    def soc_csv(self) -> str:
        """State of charge per PEV (one column each) at the end of every slot,
        with the initial values as slot 0."""
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["t"] + list(self.pev_ids))
        w.writerow([0] + [_fmt(self.initial_soc[p]) for p in self.pev_ids])
        for r in self.records:
            w.writerow([r.t] + [_fmt(r.soc[p]) for p in self.pev_ids])
        return buf.getvalue()

    def to_json(self) -> dict:
        return {
            "summary": self.summary(),
            "objective": self.objective,
            "runtime_per_slot": self.runtime_per_slot,
            "unmet": list(self.unmet),
            "records": [{
                "t": r.t, "applied_tau": dict(sorted(r.applied_tau.items())),
                "V": [[float(v.real), float(v.imag)] for v in r.V],
                "Pg": {str(b): v for b, v in sorted(r.Pg.items())},
                "Qg": {str(b): v for b, v in sorted(r.Qg.items())},
                "slot_generation_cost": r.slot_generation_cost,
                "slot_charging_cost": r.slot_charging_cost,
                "stage1_generation_cost": r.stage1_generation_cost,
                "stage1_iterations": r.stage1_iterations,
                "stage2_iterations": r.stage2_iterations,
                "rank_check": {str(s): ok for s, ok in sorted(r.rank_check.items())},
                "soc": dict(sorted(r.soc.items())),
                "runtime_s": r.runtime_s,
                "stage1_diagnostics": r.stage1_diagnostics,
                "stage2_diagnostics": r.stage2_diagnostics,
            } for r in self.records],
        }


def _fmt(v: float, signed: bool = False) -> str:
    v = float(v)
    if v == 0.0:
        v = 0.0  # drop the sign of negative zero
    return f"{v:+.12e}" if signed else f"{v:.12e}"


def binary_count(pevs) -> int:
    """Charging decisions of the offline problem: one per PEV per parked slot."""
    return sum(p.departure_slot - p.arrival_slot + 1 for p in pevs)


def _relaxed_snapshot(case, profiles, state, slot, tau_slot, tol):
    bp = build_snapshot_problem(case, profiles, state, tau_slot, slot=slot)
    sol = solve(bp.problem, tol)
    if not sol.optimal:
        raise InfeasibleError(f"snapshot relaxation not solved ({sol.status.value})", slot)
    return bp, sol


def run_mpc(case: GridCase, profiles: ScenarioProfiles, pevs, config: MpcConfig | None = None,
            last_slot: int | None = None) -> MpcTrace:
    """Run the online loop over every slot of the profiles (or up to and
    including ``last_slot``)."""
    config = config or MpcConfig()
    pen, tol = config.penalty, config.tolerances
    pevs = tuple(pevs)
    for p in pevs:
        p.validate(profiles.slot_count, profiles.slot_hours)
    state = FleetState.initial(pevs, profiles.slot_hours)
    records = []
    unmet: list = []
    last = profiles.slot_count if last_slot is None else last_slot
    if not 1 <= last <= profiles.slot_count:
        raise ValueError(f"slot {last} outside 1..{profiles.slot_count}")
    for t in range(1, last + 1):
        start = time.perf_counter()
        state = replace(state, clock=t)
        active = state.active_set
        s1_diag: list = []
        if active:
            try:
                res = solve_micp(case, profiles, state, pen, tol, max_outer=config.max_outer)
            except DemandInfeasibleError as exc:
                raise InfeasibleError(str(exc), t) from exc
            tau_t = {pid: int(v) for pid, v in res.slot_tau(t).items()}
            blocks = {s: res.W(s) for s in res.fixed.index.slots}
            checks = rank_check(blocks, pen.eps)
            W_t = blocks[t]
            pg1, _ = res.generation(t)
            s1_iters = len(res.iterates)
            s1_diag = res.diagnostics()
        else:
            tau_t = {}
            bp, sol = _relaxed_snapshot(case, profiles, state, t, tau_t, tol)
            W_t = bp.W(sol, t)
            pg1, _ = bp.generation(sol, t)
            checks = rank_check({t: W_t}, pen.eps)
            s1_iters = 0
        stage1_gen = generation_cost(case, profiles, pg1)
        rk = solve_rank1(case, profiles, state, tau_t, W_t, pen, tol, config.rank1_max_iters, t,
                         f_init=stage1_gen)
        pg, qg = rk.R
        state = advance(state, tau_t)
        elapsed = time.perf_counter() - start
        rec = SlotRecord(t, tau_t, rk.V, pg, qg, rk.objective,
                         charging_cost(profiles, pevs, t, tau_t), stage1_gen, s1_iters,
                         rk.iterations, checks, dict(state.soc), elapsed, s1_diag, rk.diagnostics())
        records.append(rec)
        log.info("slot %d tau %s cost %.6f (stage1 %.6f) rank %s %.2fs", t, tau_t, rec.slot_cost,
                 stage1_gen + rec.slot_charging_cost, checks, elapsed)
        for pid in state.unmet():
            if pid not in unmet:
                log.warning("PEV %s departed with %.3f kWh undelivered", pid, state.remaining_demand[pid])
                unmet.append(pid)
    return MpcTrace([p.id for p in pevs], {p.id: p.initial_soc for p in pevs}, records, unmet,
                    config, binary_count(pevs))


@dataclass
class OracleResult:
    objective: float  # after rank-one recovery
    relaxed_objective: float  # relaxation value of the returned schedule
    schedule: dict  # (pev id, slot) -> 0/1 over every parked slot
    candidates: int


def enumerate_schedules(pevs, slot_hours: float):
    """Every schedule giving each PEV exactly its required slots within its
    parking window."""
    per_pev = []
    for p in pevs:
        window = range(p.arrival_slot, p.departure_slot + 1)
        need = p.required_slots(slot_hours)
        per_pev.append([(p.id, frozenset(c)) for c in itertools.combinations(window, need)])
    for combo in itertools.product(*per_pev):
        yield {pid: chosen for pid, chosen in combo}


def brute_force_oracle(case: GridCase, profiles: ScenarioProfiles, pevs,
                       config: MpcConfig | None = None, recover: int = 3) -> OracleResult:
    """Clairvoyant offline optimum over all feasible charging schedules.

    Each schedule is scored with the rank-relaxed OPF of every slot (slots
    are independent once the schedule is fixed, so slot values are cached by
    charging pattern); the ``recover`` best schedules then get rank-one
    recovery slot by slot and the cheapest recovered cost is returned.
    """
    config = config or MpcConfig()
    tol, pen = config.tolerances, config.penalty
    pevs = tuple(pevs)
    nbin = binary_count(pevs)
    if nbin > ORACLE_MAX_BINARIES:
        raise ValueError(f"oracle refused: {nbin} binary variables exceed {ORACLE_MAX_BINARIES}")
    state = FleetState.initial(pevs, profiles.slot_hours)
    T = profiles.slot_count
    cache: dict = {}

    def slot_tau(sched, t):
        return {pid: int(t in chosen) for pid, chosen in sched.items()
                if state.pev(pid).arrival_slot <= t <= state.pev(pid).departure_slot}

    def relaxed(t, tau):
        key = (t, tuple(sorted(tau.items())))
        if key not in cache:
            bp, sol = _relaxed_snapshot(case, profiles, state, t, tau, tol)
            cache[key] = (generation_cost(case, profiles, bp.generation(sol, t)[0]), bp.W(sol, t))
        return cache[key]

    scored = []
    for sched in enumerate_schedules(pevs, profiles.slot_hours):
        total = 0.0
        for t in range(1, T + 1):
            tau = slot_tau(sched, t)
            total += relaxed(t, tau)[0] + charging_cost(profiles, pevs, t, tau)
        scored.append((total, sorted((pid, sorted(c)) for pid, c in sched.items()), sched))
    if not scored:
        raise InfeasibleError("no charging schedule meets every PEV's demand")
    scored.sort(key=lambda item: (item[0], item[1]))

    best = None
    for total, _, sched in scored[:max(1, recover)]:
        cost = 0.0
        for t in range(1, T + 1):
            tau = slot_tau(sched, t)
            _, W = relaxed(t, tau)
            rk = solve_rank1(case, profiles, state, tau, W, pen, tol, config.rank1_max_iters, t)
            cost += rk.objective + charging_cost(profiles, pevs, t, tau)
        if best is None or cost < best[0]:
            best = (cost, total, sched)
    cost, total, sched = best
    schedule = {(p.id, t): int(t in sched[p.id])
                for p in pevs for t in range(p.arrival_slot, p.departure_slot + 1)}
    return OracleResult(cost, total, schedule, len(scored))


def trace_json(trace: MpcTrace) -> str:
    return json.dumps(trace.to_json(), indent=2, sort_keys=True) + "\n"
