"""Synthetic instance generator.

Produces a five-site network (three mining sites that may host solar and
batteries, two chemical processing sites that may not), a year of daily solar
capacity-factor profiles with seasonal amplitude and correlated intra-day
noise, banded time-of-use tariffs, and demand profiles. Everything is
deterministic in the seed, and generated instances always pass
validate_instance.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .domain import (
    HOURS,
    MONTHS,
    Arc,
    CapacityFactorDataset,
    CostParameters,
    DemandProfile,
    EmissionIntensity,
    EnergyNetwork,
    PlanningInstance,
    Site,
    TariffSchedule,
    TimeStructure,
)

MINING_SITES = ["mine-a", "mine-b", "mine-c"]
CHEMICAL_SITES = ["plant-d", "plant-e"]


@dataclass
class GeneratorSpec:
    """Knobs of the synthetic instance.

    Sizes and noise levels have sane defaults; the bundled instance pins a
    specific spec. peak_ratio scales the evening tariff band relative to
    off-peak, cloud_prob is the chance of an overcast day, and seasonality
    the summer-to-winter swing of the clear-sky amplitude.
    """

    years: int = 2
    seed: int = 0
    budget: float = 1.0e9            # MAD
    demand_scale: float = 1.0
    noise: float = 0.10              # relative amplitude noise within a day
    edge_jitter: float = 0.8         # hours of sunrise/sunset wander
    seasonality: float = 0.24
    cloud_prob: float = 0.16
    peak_ratio: float = 2.4
    feed_in_price: float = 0.22      # MAD/kWh
    battery_cost_0: float = 2600.0   # MAD/kWh in year 1
    solar_cost_0: float = 9500.0     # MAD/kW in year 1
    cost_decline: float = 0.97       # year-over-year technology cost factor

    def to_document(self) -> dict:
        return asdict(self)

    @staticmethod
    def from_document(doc: dict) -> "GeneratorSpec":
        return GeneratorSpec(**doc)


def generate_synthetic(spec: GeneratorSpec) -> tuple[PlanningInstance, CapacityFactorDataset]:
    """Build a full planning instance plus one year of daily capacity factors."""
    rng = np.random.default_rng(spec.seed)
    network = _build_network(rng)
    time = TimeStructure.calendar(spec.years, leap_offset=-1)
    costs = _build_costs(spec)
    tariffs = _build_tariffs(spec, len(network.sites))
    demand = _build_demand(spec, network, time, rng)
    dataset = generate_capacity_factors(spec, rng)
    instance = PlanningInstance(
        network=network,
        time=time,
        costs=costs,
        tariffs=tariffs,
        demand=demand,
        emissions=EmissionIntensity(),
    )
    return instance, dataset


def _build_network(rng: np.random.Generator) -> EnergyNetwork:
    sites = [Site(n, "mining", True, True) for n in MINING_SITES]
    sites += [Site(n, "chemical", False, False) for n in CHEMICAL_SITES]

    def rent(base: float) -> np.ndarray:
        # transmission rent rises slightly during evening peak hours
        hourly = np.full(HOURS, base)
        hourly[17:22] *= 1.6
        monthly = 1.0 + 0.05 * np.cos(2 * np.pi * (np.arange(MONTHS) - 6) / 12)
        return np.round(hourly[:, None] * monthly[None, :], 6)

    links = [
        ("mine-a", "mine-b", 45_000.0, 0.035),
        ("mine-b", "mine-c", 45_000.0, 0.035),
        ("mine-a", "plant-d", 60_000.0, 0.045),
        ("mine-c", "plant-e", 60_000.0, 0.045),
        ("plant-d", "plant-e", 35_000.0, 0.030),
    ]
    arcs = [Arc(src, dst, cap, 0.99, rent(base)) for src, dst, cap, base in links]
    return EnergyNetwork(sites=sites, arcs=arcs)


def _build_costs(spec: GeneratorSpec) -> CostParameters:
    years = np.arange(spec.years)
    return CostParameters(
        budget=spec.budget,
        battery_cost=spec.battery_cost_0 * spec.cost_decline ** years,
        solar_cost=spec.solar_cost_0 * spec.cost_decline ** years,
    )


def _build_tariffs(spec: GeneratorSpec, n_sites: int) -> TariffSchedule:
    band = np.full(HOURS, 0.62)          # off-peak floor, MAD/kWh
    band[7:17] = 0.95                    # daytime shoulder
    band[17:22] = 0.62 * spec.peak_ratio  # evening peak
    monthly = 1.0 + 0.06 * np.cos(2 * np.pi * (np.arange(MONTHS) - 0.5) / 12)
    onee = band[:, None] * monthly[None, :]

    # the independent renewable producer sells at a flat-ish daytime rate
    nareva = np.full((HOURS, MONTHS), 0.84) * monthly[None, :] * 0.98

    site_factor = np.array([1.0, 1.0, 1.0, 1.04, 1.04])[:n_sites]
    price_onee = np.round(site_factor[:, None, None] * onee[None, :, :], 6)
    price_nareva = np.round(site_factor[:, None, None] * nareva[None, :, :], 6)
    feed_in = np.full((n_sites, HOURS, MONTHS), spec.feed_in_price)

    onee_cap = np.full(HOURS, 90_000.0)
    nareva_cap = np.full(HOURS, 22_000.0)
    return TariffSchedule(price_onee=price_onee, price_nareva=price_nareva,
                          feed_in=feed_in, onee_cap=onee_cap, nareva_cap=nareva_cap)


def _build_demand(spec: GeneratorSpec, network: EnergyNetwork,
                  time: TimeStructure, rng: np.random.Generator) -> DemandProfile:
    n = len(network.sites)
    hours = np.arange(HOURS)
    # mining load follows the working day; chemical load runs around the clock
    mining_shape = 0.75 + 0.25 * np.exp(-0.5 * ((hours - 12.5) / 4.5) ** 2) * 2.2
    chem_shape = 0.95 + 0.05 * np.cos(2 * np.pi * (hours - 14) / 24)
    base_kwh = {"mining": 21_000.0, "chemical": 40_000.0}
    shapes = {"mining": mining_shape, "chemical": chem_shape}

    monthly = 1.0 + 0.08 * np.cos(2 * np.pi * (np.arange(MONTHS) - 0.5) / 12)
    growth = 1.02 ** np.arange(time.years)

    d = np.zeros((n, HOURS, MONTHS, time.years))
    for i, site in enumerate(network.sites):
        level = base_kwh[site.kind] * spec.demand_scale * (1 + 0.04 * (i % 3))
        jitter = 1.0 + 0.02 * rng.standard_normal((HOURS, MONTHS))
        d[i] = (level * shapes[site.kind][:, None] * monthly[None, :] * jitter)[..., None] \
            * growth[None, None, :]

    # plant-e runs cogeneration in the small hours: negative demand
    e = network.site_index("plant-e")
    d[e, 2:5, :, :] -= 46_000.0 * spec.demand_scale
    return DemandProfile(values=np.round(d, 3))


# --------------------------------------------------------------------------
# capacity factors
# --------------------------------------------------------------------------

def generate_capacity_factors(spec: GeneratorSpec,
                              rng: np.random.Generator | None = None,
                              n_days: int = 365,
                              start: str = "2023-01-01") -> CapacityFactorDataset:
    """One simulated year of daily profiles at the mining sites.

    Clear-sky output is a bell between sunrise and sunset whose amplitude and
    daylight length peak in summer. Days share a slowly varying regional
    weather state; overcast days scale the whole profile down. Within a day,
    deviations come from sunrise/sunset jitter and autocorrelated amplitude
    noise, so hour-to-hour changes are smaller than the deviations themselves.
    """
    if rng is None:
        rng = np.random.default_rng(spec.seed)
    n_mining = len(MINING_SITES)
    start_t = np.datetime64(start)
    dates = [str(start_t + np.timedelta64(t, "D")) for t in range(n_days)]
    months = np.array([int(d[5:7]) for d in dates])

    values = np.zeros((n_days, HOURS, n_mining))
    site_amp = np.array([0.97, 1.0, 1.03])
    weather = 0.0
    hour_centers = np.arange(HOURS) + 0.5

    for t in range(n_days):
        doy = t % 365
        daylight = 12.0 + 2.3 * np.cos(2 * np.pi * (doy - 172) / 365)
        amp = 0.62 + spec.seasonality * np.cos(2 * np.pi * (doy - 190) / 365)
        weather = 0.62 * weather + rng.standard_normal()
        regional = np.clip(1.0 - 0.10 * max(weather, 0.0), 0.3, 1.0)
        if rng.random() < spec.cloud_prob:
            regional *= rng.uniform(0.25, 0.6)

        for i in range(n_mining):
            rise = 12.0 - daylight / 2 + spec.edge_jitter * rng.standard_normal() * 0.5
            fall = 12.0 + daylight / 2 + spec.edge_jitter * rng.standard_normal() * 0.5
            bell = np.sin(np.pi * np.clip((hour_centers - rise) / (fall - rise), 0, 1))
            bell = np.clip(bell, 0.0, None) ** 1.15
            noise = np.zeros(HOURS)
            e = 0.0
            for h in range(HOURS):
                e = 0.65 * e + rng.standard_normal()
                noise[h] = e
            profile = amp * site_amp[i] * regional * bell * (1 + spec.noise * noise * 0.35)
            values[t, :, i] = np.clip(profile, 0.0, 1.0)

    return CapacityFactorDataset(dates=dates, months=months, values=values,
                                 site_names=list(MINING_SITES))


def cloudier(dataset: CapacityFactorDataset, scale: float,
             seed: int = 0) -> CapacityFactorDataset:
    """Scale a dataset's capacity factors down (or up) with mild day-to-day
    variation around `scale`. Used to inject a distribution shift between
    training and evaluation days."""
    rng = np.random.default_rng(seed)
    factors = np.clip(scale * (1 + 0.05 * rng.standard_normal(dataset.n_days)), 0.0, None)
    values = np.clip(dataset.values * factors[:, None, None], 0.0, 1.0)
    return CapacityFactorDataset(dates=list(dataset.dates), months=dataset.months.copy(),
                                 values=values, site_names=list(dataset.site_names))
