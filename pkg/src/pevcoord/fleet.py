"""PEV population: generation, bookkeeping of remaining demand, active set.

Slots are 1-based.  A vehicle charging in a slot draws ``max_rate_kw`` from
the grid for the whole slot and stores ``efficiency * energy_per_slot`` kWh.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy.stats import truncnorm

# demands within this many kWh of a slot boundary are not rounded up
_ENERGY_EPS = 1e-9


class FleetError(ValueError):
    pass


def required_slots(capacity: float, s0: float, u_h: float, energy_per_slot: float) -> int:
    """Slots of full-rate charging needed to fill a battery from ``s0``."""
    return remaining_slots(capacity * (1.0 - s0), u_h, energy_per_slot)


def remaining_slots(demand: float, u_h: float, energy_per_slot: float) -> int:
    if energy_per_slot <= 0:
        raise FleetError("energy per slot must be positive")
    if demand <= _ENERGY_EPS:
        return 0
    return int(math.ceil(demand / (u_h * energy_per_slot) - _ENERGY_EPS))


@dataclass(frozen=True)
class PevRecord:
    id: str
    station: int
    arrival_slot: int
    departure_slot: int
    capacity_kwh: float
    initial_soc: float
    max_rate_kw: float
    efficiency: float = 0.9

    def energy_per_slot(self, slot_hours: float) -> float:
        return self.max_rate_kw * slot_hours

    def required_slots(self, slot_hours: float) -> int:
        return required_slots(self.capacity_kwh, self.initial_soc, self.efficiency,
                              self.energy_per_slot(slot_hours))

    def validate(self, slot_count: int, slot_hours: float) -> None:
        if not 1 <= self.arrival_slot <= self.departure_slot <= slot_count:
            raise FleetError(f"PEV {self.id}: need 1 <= arrival <= departure <= {slot_count}")
        if not 0 <= self.initial_soc < 1:
            raise FleetError(f"PEV {self.id}: initial SoC must lie in [0, 1)")
        if not 0 < self.efficiency <= 1:
            raise FleetError(f"PEV {self.id}: efficiency must lie in (0, 1]")
        if self.capacity_kwh <= 0 or self.max_rate_kw <= 0:
            raise FleetError(f"PEV {self.id}: capacity and rate must be positive")
        window = self.departure_slot - self.arrival_slot + 1
        need = self.required_slots(slot_hours)
        if need > window:
            raise FleetError(f"PEV {self.id}: needs {need} slots but is parked for {window}")


@dataclass(frozen=True)
class ArrivalModel:
    """Truncated-normal arrival clock time, in hours of the day."""

    mean_hour: float = 20.0
    sd_hour: float = 1.5
    window: tuple[float, float] = (18.0, 24.0)
    start_hour: float = 18.0

    def distribution(self):
        lo, hi = self.window
        if not hi > lo:
            raise FleetError("arrival window is empty")
        a = (lo - self.mean_hour) / self.sd_hour
        b = (hi - self.mean_hour) / self.sd_hour
        return truncnorm(a, b, loc=self.mean_hour, scale=self.sd_hour)

    def slot_of(self, hour: float, slot_hours: float) -> int:
        """1-based slot containing a clock time (hours past ``start_hour``)."""
        slot = int(math.floor((hour - self.start_hour) / slot_hours)) + 1
        last = int(math.ceil((self.window[1] - self.start_hour) / slot_hours - 1e-9))
        return min(max(slot, 1), last)


def sample_arrival_hours(count: int, rng: np.random.Generator, model: ArrivalModel) -> np.ndarray:
    dist = model.distribution()
    if count == 0:
        return np.empty(0)
    return dist.rvs(size=count, random_state=rng)


def sample_arrivals(count: int, seed: int, model: ArrivalModel | None = None,
                    slot_hours: float = 0.5) -> list[int]:
    if count < 0:
        raise FleetError("count must be nonnegative")
    model = model or ArrivalModel()
    hours = sample_arrival_hours(count, np.random.default_rng(seed), model)
    return [model.slot_of(h, slot_hours) for h in hours]


@dataclass(frozen=True)
class FleetConfig:
    count: int = 10
    arrival: ArrivalModel = field(default_factory=ArrivalModel)
    capacity_kwh: float = 100.0
    initial_soc: float = 0.2
    max_rate_kw: float = 20.0
    efficiency: float = 0.9
    departure_slack: tuple[int, int] = (0, 4)
    seed: int = 0

    @classmethod
    def from_dict(cls, doc: dict) -> "FleetConfig":
        arr = doc.get("arrival", {})
        arrival = ArrivalModel(
            mean_hour=float(arr.get("mean_hour", 20.0)),
            sd_hour=float(arr.get("sd_hour", 1.5)),
            window=tuple(float(v) for v in arr.get("window", (18.0, 24.0))),
            start_hour=float(arr.get("start_hour", 18.0)),
        )
        return cls(
            count=int(doc.get("count", 10)),
            arrival=arrival,
            capacity_kwh=float(doc.get("capacity_kwh", 100.0)),
            initial_soc=float(doc.get("initial_soc", 0.2)),
            max_rate_kw=float(doc.get("max_rate_kw", 20.0)),
            efficiency=float(doc.get("efficiency", 0.9)),
            departure_slack=tuple(int(v) for v in doc.get("departure_slack", (0, 4))),
            seed=int(doc.get("seed", 0)),
        )


def generate_fleet(config: FleetConfig, stations: list[int], slot_count: int,
                   slot_hours: float) -> list[PevRecord]:
    """Seeded synthetic fleet; stations drawn uniformly from ``stations``."""
    if config.count and not stations:
        raise FleetError("fleet needs at least one charging station")
    rng = np.random.default_rng(config.seed)
    hours = sample_arrival_hours(config.count, rng, config.arrival)
    lo, hi = config.departure_slack
    out = []
    for i, h in enumerate(hours):
        arrival = config.arrival.slot_of(h, slot_hours)
        station = stations[int(rng.integers(len(stations)))]
        need = required_slots(config.capacity_kwh, config.initial_soc, config.efficiency,
                              config.max_rate_kw * slot_hours)
        slack = int(rng.integers(lo, hi + 1))
        departure = min(slot_count, arrival + need - 1 + slack)
        rec = PevRecord(f"ev{i}", station, arrival, departure, config.capacity_kwh,
                        config.initial_soc, config.max_rate_kw, config.efficiency)
        rec.validate(slot_count, slot_hours)
        out.append(rec)
    return out


def pev_to_dict(p: PevRecord) -> dict:
    return {"id": p.id, "station": p.station, "arrival_slot": p.arrival_slot,
            "departure_slot": p.departure_slot, "capacity_kwh": p.capacity_kwh,
            "initial_soc": p.initial_soc, "max_rate_kw": p.max_rate_kw,
            "efficiency": p.efficiency}


def load_fleet(path, stations: list[int], slot_count: int, slot_hours: float) -> list[PevRecord]:
    """Read either a fleet config object or a verbatim list of PEV records."""
    doc = json.loads(Path(path).read_text())
    if isinstance(doc, dict) and "pevs" in doc:
        doc = doc["pevs"]
    if isinstance(doc, list):
        recs = []
        for k, d in enumerate(doc):
            try:
                rec = PevRecord(str(d["id"]), int(d["station"]), int(d["arrival_slot"]),
                                int(d["departure_slot"]), float(d["capacity_kwh"]),
                                float(d["initial_soc"]), float(d["max_rate_kw"]),
                                float(d.get("efficiency", 0.9)))
            except (KeyError, TypeError, ValueError) as exc:
                raise FleetError(f"pevs[{k}]: {exc}") from exc
            if rec.station not in stations:
                raise FleetError(f"pevs[{k}]: bus {rec.station} is not a charging station")
            rec.validate(slot_count, slot_hours)
            recs.append(rec)
        return recs
    return generate_fleet(FleetConfig.from_dict(doc), stations, slot_count, slot_hours)


@dataclass(frozen=True)
class FleetState:
    """Fleet bookkeeping at the start of slot ``clock``."""

    clock: int
    pevs: tuple[PevRecord, ...]
    slot_hours: float
    remaining_demand: dict  # id -> kWh still to be stored
    soc: dict  # id -> state of charge
    history: dict = field(default_factory=dict)  # id -> tuple of applied taus

    @classmethod
    def initial(cls, pevs, slot_hours: float, clock: int = 1) -> "FleetState":
        pevs = tuple(pevs)
        ids = [p.id for p in pevs]
        if len(set(ids)) != len(ids):
            raise FleetError("duplicate PEV id")
        return cls(clock, pevs, slot_hours,
                   {p.id: p.capacity_kwh * (1.0 - p.initial_soc) for p in pevs},
                   {p.id: p.initial_soc for p in pevs},
                   {p.id: () for p in pevs})

    def pev(self, pid: str) -> PevRecord:
        for p in self.pevs:
            if p.id == pid:
                return p
        raise KeyError(pid)

    @property
    def active_set(self) -> list[PevRecord]:
        t = self.clock
        return [p for p in self.pevs
                if p.arrival_slot <= t <= p.departure_slot and self.remaining_demand[p.id] > _ENERGY_EPS]

    def required(self, pid: str) -> int:
        p = self.pev(pid)
        return remaining_slots(self.remaining_demand[pid], p.efficiency, p.energy_per_slot(self.slot_hours))

    def window(self, pid: str) -> range:
        """Slots still available to an active PEV, [clock, departure]."""
        return range(self.clock, self.pev(pid).departure_slot + 1)

    def unmet(self) -> list[str]:
        """PEVs whose departure has passed with demand left."""
        return [p.id for p in self.pevs
                if p.departure_slot < self.clock and self.remaining_demand[p.id] > _ENERGY_EPS]


def horizon(state: FleetState) -> int | None:
    """Last slot of the prediction horizon, or None when nobody is charging."""
    active = state.active_set
    if not active:
        return None
    return max(p.departure_slot for p in active)


def advance(state: FleetState, applied_tau: dict) -> FleetState:
    """Apply the slot-``clock`` charging decisions and move to the next slot."""
    active = {p.id for p in state.active_set}
    for pid, tau in applied_tau.items():
        if tau not in (0, 1):
            raise FleetError(f"PEV {pid}: charging decision must be 0 or 1, got {tau}")
        if tau == 1 and pid not in active:
            raise FleetError(f"PEV {pid} is not in the active set at slot {state.clock}")
    demand = dict(state.remaining_demand)
    soc = dict(state.soc)
    hist = dict(state.history)
    for p in state.pevs:
        tau = int(applied_tau.get(p.id, 0)) if p.id in active else 0
        if p.arrival_slot <= state.clock <= p.departure_slot:
            hist[p.id] = hist.get(p.id, ()) + (tau,)
        if tau:
            stored = p.efficiency * p.energy_per_slot(state.slot_hours)
            demand[p.id] = max(0.0, demand[p.id] - stored)
            soc[p.id] = min(1.0, soc[p.id] + stored / p.capacity_kwh)
            if demand[p.id] <= _ENERGY_EPS:
                demand[p.id] = 0.0
                soc[p.id] = 1.0
    return replace(state, clock=state.clock + 1, remaining_demand=demand, soc=soc, history=hist)
