import dataclasses

import pytest

from pevcoord.fleet import FleetState, load_fleet
from pevcoord.grid import bundled_case_path, load_case
from pevcoord.mpc import brute_force_oracle, run_mpc

FIXTURES = ("case4_demo", "case3_lossless")


def load_fixture(name):
    case, profiles = load_case(bundled_case_path(name))
    pevs = load_fleet(bundled_case_path(f"{name}_fleet"), case.charging_stations,
                      profiles.slot_count, profiles.slot_hours)
    return case, profiles, pevs


def fractional_variant():
    """case4_demo with flat prices and 200 kW chargers: the relaxation spreads
    charging over slots, so path-following has real work to do."""
    case, profiles, pevs = load_fixture("case4_demo")
    pevs = [dataclasses.replace(p, max_rate_kw=200.0, capacity_kwh=p.capacity_kwh * 4) for p in pevs]
    profiles = dataclasses.replace(profiles, prices=(0.1,) * profiles.slot_count)
    return case, profiles, pevs


@pytest.fixture(scope="session")
def case4():
    return load_fixture("case4_demo")


@pytest.fixture(scope="session")
def case3():
    return load_fixture("case3_lossless")


@pytest.fixture(scope="session")
def case4_frac():
    return fractional_variant()


@pytest.fixture(scope="session")
def case4_trace(case4):
    return run_mpc(*case4)


@pytest.fixture(scope="session")
def case3_trace(case3):
    return run_mpc(*case3)


@pytest.fixture(scope="session")
def case4_oracle(case4):
    return brute_force_oracle(*case4)


@pytest.fixture(scope="session")
def case3_oracle(case3):
    return brute_force_oracle(*case3)


def state_at(pevs, profiles, clock):
    return dataclasses.replace(FleetState.initial(pevs, profiles.slot_hours), clock=clock)
