"""Shared fixtures.

Two instance families are used throughout:

* ``micro``: a hand-built two-site network with flat tariffs and a two-day
  scenario set, small enough that costs can be checked against arithmetic
  done by hand and solves take well under a second.
* ``desk``: the bundled synthetic five-site instance (rescaled demand so
  the numbers stay friendly), reduced to six representative days. Solves
  take a few seconds; everything derived from it is session-scoped and
  reused.
"""

import numpy as np
import pytest

from helios.domain import (Arc, CapacityFactorDataset, CostParameters,
                           DemandProfile, EnergyNetwork, PlanningInstance,
                           Site, TariffSchedule, TimeStructure)
from helios.scenarios import (ReducedScenarioSet, UncertaintyStatistics,
                              compute_uncertainty_statistics,
                              reduce_scenarios)
from helios.synthetic import GeneratorSpec, generate_synthetic

HOURS, MONTHS = 24, 12

# Frozen generator settings for the bundled desk instances. The two-year
# variant prices exports low so the value of extra solar eventually drops
# below its cost; the one-year variant keeps the default feed-in tariff.
DESK_SPEC = dict(seed=3, demand_scale=1e-3, battery_cost_0=80.0,
                 solar_cost_0=95.0, budget=1.2e5, peak_ratio=2.4)


def bell_profile(peak: float) -> np.ndarray:
    """A daylight-shaped 24-hour capacity-factor curve peaking at noon."""
    hours = np.arange(HOURS)
    curve = np.clip(np.sin(np.pi * (hours - 6) / 12), 0.0, None)
    return peak * curve


def micro_network() -> EnergyNetwork:
    rent = np.full((HOURS, MONTHS), 0.01)
    return EnergyNetwork(
        sites=[Site("mine-x", "mining", True, True),
               Site("plant-y", "chemical", False, False)],
        arcs=[Arc("mine-x", "plant-y", 1000.0, 1.0, rent)],
    )


def micro_scenarios() -> ReducedScenarioSet:
    """Two day types, both carrying weight in every month."""
    sunny = bell_profile(0.8)[:, None]
    cloudy = bell_profile(0.2)[:, None]
    centroids = np.stack([sunny, cloudy])             # (2, 24, 1)
    weights = np.tile([[0.75], [0.25]], (1, MONTHS))  # (2, 12)
    return ReducedScenarioSet(centroids=centroids, weights=weights,
                              site_names=["mine-x"])


def micro_stats() -> UncertaintyStatistics:
    return UncertaintyStatistics(
        max_dev=np.full((HOURS, 2), 0.05),
        smooth_dev=np.full((HOURS, 2), 0.02),
        daily_sigma=np.array([0.3, 0.1]),
    )


def build_micro(budget: float = 0.0, *, nareva_cap: float = 200.0,
                sell_fraction: float = 0.2) -> PlanningInstance:
    n = 2
    demand = np.zeros((n, HOURS, MONTHS, 1))
    demand[0] = 100.0
    demand[1] = 50.0
    tariffs = TariffSchedule(
        price_onee=np.full((n, HOURS, MONTHS), 1.0),
        price_nareva=np.full((n, HOURS, MONTHS), 0.5),
        feed_in=np.full((n, HOURS, MONTHS), 0.1),
        onee_cap=np.full(HOURS, 1e6),
        nareva_cap=np.full(HOURS, nareva_cap),
    )
    costs = CostParameters(budget=budget, battery_cost=np.array([50.0]),
                           solar_cost=np.array([100.0]),
                           sell_fraction=sell_fraction)
    return PlanningInstance(
        network=micro_network(),
        time=TimeStructure.calendar(1, leap_offset=-1),
        costs=costs,
        tariffs=tariffs,
        demand=DemandProfile(demand),
        scenarios=micro_scenarios(),
    )


def rescale_money(inst: PlanningInstance, s: float) -> PlanningInstance:
    """Scale every monetary quantity by ``s``.  The optimal decisions are
    unchanged and the objective scales linearly; we use this to bring the
    exponential-cone model into a range the interior-point solver likes."""
    inst.tariffs.price_onee *= s
    inst.tariffs.price_nareva *= s
    inst.tariffs.feed_in *= s
    for arc in inst.network.arcs:
        arc.rent_price = arc.rent_price * s
    inst.costs.battery_cost = inst.costs.battery_cost * s
    inst.costs.solar_cost = inst.costs.solar_cost * s
    inst.costs.budget *= s
    return inst


@pytest.fixture
def micro() -> PlanningInstance:
    return build_micro()


@pytest.fixture
def micro_funded() -> PlanningInstance:
    return build_micro(budget=5000.0)


def micro_dataset(days_per_month: int = 4, seed: int = 11) -> CapacityFactorDataset:
    """Days alternating around the two micro day types, every month."""
    rng = np.random.default_rng(seed)
    dates, months, values = [], [], []
    for m in range(1, MONTHS + 1):
        for d in range(days_per_month):
            peak = 0.8 if d % 2 == 0 else 0.2
            noise = 0.02 * rng.standard_normal(HOURS)
            day = np.clip(bell_profile(peak) + noise, 0.0, 1.0)
            dates.append(f"2023-{m:02d}-{d + 1:02d}")
            months.append(m)
            values.append(day[:, None])
    return CapacityFactorDataset(dates=dates, months=np.array(months),
                                 values=np.stack(values),
                                 site_names=["mine-x"])


# -- desk instances (session scope, generated once) ------------------------

@pytest.fixture(scope="session")
def desk():
    """Two-year instance, its dataset, scenario set and statistics."""
    spec = GeneratorSpec(years=2, feed_in_price=0.02, **DESK_SPEC)
    instance, dataset = generate_synthetic(spec)
    scenarios = reduce_scenarios(dataset, 6, seed=1)
    stats = compute_uncertainty_statistics(dataset, scenarios)
    return instance.with_scenarios(scenarios), dataset, stats


@pytest.fixture(scope="session")
def desk_instance(desk) -> PlanningInstance:
    return desk[0]


@pytest.fixture(scope="session")
def desk_dataset(desk) -> CapacityFactorDataset:
    return desk[1]


@pytest.fixture(scope="session")
def desk_stats(desk) -> UncertaintyStatistics:
    return desk[2]


@pytest.fixture(scope="session")
def yearly():
    """One-year sibling of the desk instance, as used for tuning runs."""
    spec = GeneratorSpec(years=1, **DESK_SPEC)
    instance, dataset = generate_synthetic(spec)
    scenarios = reduce_scenarios(dataset, 6, seed=1)
    stats = compute_uncertainty_statistics(dataset, scenarios)
    return instance.with_scenarios(scenarios), dataset, stats


@pytest.fixture(scope="session")
def desk_solved(desk_instance):
    """The desk instance solved once, shared by read-only assertions."""
    from helios.saa import build_saa
    from helios.solvers import solve

    model = build_saa(desk_instance)
    out = solve(model)
    assert out.status == "optimal"
    return desk_instance, model, out
