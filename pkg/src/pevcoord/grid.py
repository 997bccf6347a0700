"""Static network description, exogenous profiles, and JSON case I/O.

All electrical quantities are per-unit on ``base_mva``; generator cost
polynomials take MW.  Buses, lines and generators keep the ids used in the
case file, and every array indexed by bus follows the order of ``buses``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np


class CaseError(ValueError):
    """Invalid case data; ``path`` names the offending field."""

    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}")
        self.path = path


def line_admittance(impedance: complex) -> complex:
    if impedance == 0:
        raise ValueError("line impedance must be nonzero")
    return 1.0 / complex(impedance)


def to_per_unit(value_kw: float, base_power_mva: float) -> float:
    if base_power_mva <= 0:
        raise ValueError("base power must be positive")
    return value_kw / (base_power_mva * 1000.0)


@dataclass(frozen=True)
class Bus:
    id: int
    v_min: float
    v_max: float


@dataclass(frozen=True)
class Line:
    from_bus: int
    to_bus: int
    impedance: complex
    theta_max: float

    @property
    def admittance(self) -> complex:
        return line_admittance(self.impedance)


@dataclass(frozen=True)
class GeneratorSpec:
    bus: int
    p_limits: tuple[float, float]
    q_limits: tuple[float, float]
    cost_coeffs: tuple[float, float, float]
    is_station: bool = False

    def cost(self, p_mw: float) -> float:
        c2, c1, c0 = self.cost_coeffs
        return c2 * p_mw * p_mw + c1 * p_mw + c0


@dataclass(frozen=True)
class GridCase:
    buses: tuple[Bus, ...]
    lines: tuple[Line, ...]
    generators: tuple[GeneratorSpec, ...]
    base_power: float = 100.0
    name: str = ""

    @property
    def bus_count(self) -> int:
        return len(self.buses)

    @property
    def bus_ids(self) -> list[int]:
        return [b.id for b in self.buses]

    def bus_index(self, bus_id: int) -> int:
        return self._index[bus_id]

    @cached_property
    def _index(self) -> dict[int, int]:
        return {b.id: k for k, b in enumerate(self.buses)}

    @property
    def charging_stations(self) -> list[int]:
        return [g.bus for g in self.generators if g.is_station]

    def generator_at(self, bus_id: int) -> GeneratorSpec | None:
        for g in self.generators:
            if g.bus == bus_id:
                return g
        return None

    def neighbors(self, bus_id: int) -> list[tuple[int, complex]]:
        """(neighbor id, line admittance) pairs for a bus."""
        out = []
        for ln in self.lines:
            if ln.from_bus == bus_id:
                out.append((ln.to_bus, ln.admittance))
            elif ln.to_bus == bus_id:
                out.append((ln.from_bus, ln.admittance))
        return out

    def admittance_matrix(self) -> np.ndarray:
        """Bus admittance matrix built from series admittances only."""
        n = self.bus_count
        Y = np.zeros((n, n), dtype=complex)
        idx = self._index
        for ln in self.lines:
            k, m = idx[ln.from_bus], idx[ln.to_bus]
            y = ln.admittance
            Y[k, k] += y
            Y[m, m] += y
            Y[k, m] -= y
            Y[m, k] -= y
        return Y

    def injections(self, V: np.ndarray) -> np.ndarray:
        """Complex power injected into the network at each bus, V (Y V)^*."""
        V = np.asarray(V, dtype=complex)
        return V * np.conj(self.admittance_matrix() @ V)


@dataclass(frozen=True)
class ScenarioProfiles:
    slot_hours: float
    load_shape: tuple[float, ...]
    prices: tuple[float, ...]
    base_loads: dict = field(default_factory=dict)  # bus id -> (p, q) per-unit

    @property
    def slot_count(self) -> int:
        return len(self.load_shape)

    def load_factor(self, slot: int) -> float:
        """l(t) T / sum(l) for a 1-based slot."""
        if not 1 <= slot <= self.slot_count:
            raise IndexError(f"slot {slot} outside 1..{self.slot_count}")
        shape = self.load_shape
        return shape[slot - 1] * len(shape) / math.fsum(shape)

    def price(self, slot: int) -> float:
        if not 1 <= slot <= self.slot_count:
            raise IndexError(f"slot {slot} outside 1..{self.slot_count}")
        return self.prices[slot - 1]


def scaled_load(bus: int, slot: int, profiles: ScenarioProfiles) -> tuple[float, float]:
    """Residential (P, Q) demand at ``bus`` during 1-based ``slot``.

    Reactive demand follows the same shape as real demand (constant power
    factor).
    """
    p, q = profiles.base_loads.get(bus, (0.0, 0.0))
    f = profiles.load_factor(slot)
    return p * f, q * f


def _validate(case: GridCase, profiles: ScenarioProfiles) -> None:
    ids = case.bus_ids
    if not ids:
        raise CaseError("buses", "at least one bus is required")
    if len(set(ids)) != len(ids):
        raise CaseError("buses", "duplicate bus id")
    for k, b in enumerate(case.buses):
        if not 0 < b.v_min <= b.v_max:
            raise CaseError(f"buses[{k}] (id {b.id})", f"need 0 < v_min <= v_max, got {b.v_min}, {b.v_max}")
    known = set(ids)
    pairs = set()
    for k, ln in enumerate(case.lines):
        where = f"lines[{k}]"
        for end in (ln.from_bus, ln.to_bus):
            if end not in known:
                raise CaseError(where, f"references nonexistent bus {end}")
        if ln.from_bus == ln.to_bus:
            raise CaseError(where, "line endpoints must differ")
        key = frozenset((ln.from_bus, ln.to_bus))
        if key in pairs:
            raise CaseError(where, "parallel line between the same buses")
        pairs.add(key)
        if ln.impedance == 0:
            raise CaseError(where, "zero impedance")
        if ln.impedance.real < 0:
            raise CaseError(where, "negative resistance")
        if not 0 < ln.theta_max < math.pi / 2:
            raise CaseError(where, "theta_max must lie in (0, pi/2)")
    _check_connected(case)
    gen_buses = set()
    for k, g in enumerate(case.generators):
        where = f"generators[{k}]"
        if g.bus not in known:
            raise CaseError(where, f"references nonexistent bus {g.bus}")
        if g.bus in gen_buses:
            raise CaseError(where, f"second generator at bus {g.bus}")
        gen_buses.add(g.bus)
        if g.p_limits[0] > g.p_limits[1]:
            raise CaseError(where, "p_min > p_max")
        if g.q_limits[0] > g.q_limits[1]:
            raise CaseError(where, "q_min > q_max")
        if g.cost_coeffs[0] < 0:
            raise CaseError(where + ".cost", "quadratic coefficient must be >= 0")
    if profiles.slot_hours <= 0:
        raise CaseError("profiles.slot_hours", "must be positive")
    if profiles.slot_count < 1:
        raise CaseError("profiles.load_shape", "at least one slot is required")
    if any(v <= 0 for v in profiles.load_shape):
        raise CaseError("profiles.load_shape", "entries must be positive")
    if len(profiles.prices) != profiles.slot_count:
        raise CaseError("profiles.prices", "length must match load_shape")
    if any(v < 0 for v in profiles.prices):
        raise CaseError("profiles.prices", "entries must be nonnegative")
    for bus in profiles.base_loads:
        if bus not in known:
            raise CaseError("profiles.base_loads", f"references nonexistent bus {bus}")


def _check_connected(case: GridCase) -> None:
    ids = case.bus_ids
    adj = {i: set() for i in ids}
    for ln in case.lines:
        adj[ln.from_bus].add(ln.to_bus)
        adj[ln.to_bus].add(ln.from_bus)
    seen, stack = {ids[0]}, [ids[0]]
    while stack:
        for nb in adj[stack.pop()]:
            if nb not in seen:
                seen.add(nb)
                stack.append(nb)
    if len(seen) != len(ids):
        missing = sorted(set(ids) - seen)
        raise CaseError("lines", f"network is disconnected; unreachable buses {missing}")


def _get(doc: dict, key: str, path: str):
    if not isinstance(doc, dict) or key not in doc:
        raise CaseError(f"{path}.{key}" if path else key, "missing field")
    return doc[key]


def _num(v, path: str) -> float:
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise CaseError(path, f"expected a number, got {v!r}")
    return float(v)


def parse_case(doc: dict, name: str = "") -> tuple[GridCase, ScenarioProfiles]:
    base = _num(_get(doc, "base_mva", ""), "base_mva")
    if base <= 0:
        raise CaseError("base_mva", "must be positive")
    buses = []
    for k, b in enumerate(_get(doc, "buses", "")):
        p = f"buses[{k}]"
        buses.append(Bus(int(_get(b, "id", p)), _num(_get(b, "v_min", p), p + ".v_min"),
                         _num(_get(b, "v_max", p), p + ".v_max")))
    lines = []
    for k, ln in enumerate(_get(doc, "lines", "")):
        p = f"lines[{k}]"
        z = complex(_num(_get(ln, "r", p), p + ".r"), _num(_get(ln, "x", p), p + ".x"))
        lines.append(Line(int(_get(ln, "from", p)), int(_get(ln, "to", p)), z,
                          _num(_get(ln, "theta_max", p), p + ".theta_max")))
    gens = []
    for k, g in enumerate(_get(doc, "generators", "")):
        p = f"generators[{k}]"
        cost = _get(g, "cost", p)
        if not isinstance(cost, list) or len(cost) != 3:
            raise CaseError(p + ".cost", "expected [c2, c1, c0]")
        gens.append(GeneratorSpec(
            bus=int(_get(g, "bus", p)),
            p_limits=(_num(_get(g, "p_min", p), p + ".p_min"), _num(_get(g, "p_max", p), p + ".p_max")),
            q_limits=(_num(_get(g, "q_min", p), p + ".q_min"), _num(_get(g, "q_max", p), p + ".q_max")),
            cost_coeffs=tuple(_num(c, f"{p}.cost[{i}]") for i, c in enumerate(cost)),
            is_station=bool(g.get("is_station", False)),
        ))
    prof = _get(doc, "profiles", "")
    loads = {}
    for k, bl in enumerate(_get(prof, "base_loads", "profiles")):
        p = f"profiles.base_loads[{k}]"
        loads[int(_get(bl, "bus", p))] = (_num(_get(bl, "p", p), p + ".p"), _num(_get(bl, "q", p), p + ".q"))
    profiles = ScenarioProfiles(
        slot_hours=_num(_get(prof, "slot_hours", "profiles"), "profiles.slot_hours"),
        load_shape=tuple(_num(v, f"profiles.load_shape[{i}]")
                         for i, v in enumerate(_get(prof, "load_shape", "profiles"))),
        prices=tuple(_num(v, f"profiles.prices[{i}]")
                     for i, v in enumerate(_get(prof, "prices", "profiles"))),
        base_loads=loads,
    )
    case = GridCase(tuple(buses), tuple(lines), tuple(gens), base, name or str(doc.get("name", "")))
    _validate(case, profiles)
    return case, profiles


def case_to_dict(case: GridCase, profiles: ScenarioProfiles) -> dict:
    return {
        "name": case.name,
        "base_mva": case.base_power,
        "buses": [{"id": b.id, "v_min": b.v_min, "v_max": b.v_max} for b in case.buses],
        "lines": [{"from": ln.from_bus, "to": ln.to_bus, "r": ln.impedance.real,
                   "x": ln.impedance.imag, "theta_max": ln.theta_max} for ln in case.lines],
        "generators": [{"bus": g.bus, "p_min": g.p_limits[0], "p_max": g.p_limits[1],
                        "q_min": g.q_limits[0], "q_max": g.q_limits[1],
                        "cost": list(g.cost_coeffs), "is_station": g.is_station}
                       for g in case.generators],
        "profiles": {
            "slot_hours": profiles.slot_hours,
            "load_shape": list(profiles.load_shape),
            "prices": list(profiles.prices),
            "base_loads": [{"bus": bus, "p": p, "q": q}
                           for bus, (p, q) in sorted(profiles.base_loads.items())],
        },
    }


def load_case(path) -> tuple[GridCase, ScenarioProfiles]:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise CaseError("<document>", f"invalid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise CaseError("<document>", "top level must be a JSON object")
    return parse_case(doc, name=doc.get("name") or path.stem)


def write_case(path, case: GridCase, profiles: ScenarioProfiles) -> None:
    Path(path).write_text(json.dumps(case_to_dict(case, profiles), indent=2) + "\n")


def bundled_case_path(name: str) -> Path:
    """Path of a case shipped with the package (``case4_demo`` etc.)."""
    here = Path(__file__).parent / "data"
    p = here / (name if name.endswith(".json") else name + ".json")
    if not p.exists():
        raise FileNotFoundError(f"no bundled case named {name!r}")
    return p


def resolve_case_path(spec: str) -> Path:
    p = Path(spec)
    if p.exists():
        return p
    return bundled_case_path(p.name)
