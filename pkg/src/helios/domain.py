"""Domain types for the planning problem: network, time structure, costs,
tariffs, demand, capacity-factor data, plans and dispatch schedules.

Conventions used throughout the package:

- hours are indexed 1..24 in files and user-facing output, 0..23 in arrays
- months are 1..12 in files, 0..11 in arrays
- years are 1..Y in formulas, 0..Y-1 in arrays
- power in kW, energy in kWh, money in MAD, capacity factors dimensionless in [0, 1]

All types are treated as immutable after construction; arrays they hold must
not be modified in place.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import numpy as np

HOURS = 24
MONTHS = 12

MINING = "mining"
CHEMICAL = "chemical"


# --------------------------------------------------------------------------
# network
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class Site:
    name: str
    kind: str  # "mining" or "chemical"
    solar_allowed: bool
    nareva_allowed: bool


@dataclass
class Arc:
    """Directed transmission line between two sites.

    rent_price is MAD/kWh indexed (hour, month), shape (24, 12).
    """

    src: str
    dst: str
    capacity_kw: float
    efficiency: float  # fraction of a positive-direction kWh that arrives
    rent_price: np.ndarray


@dataclass
class EnergyNetwork:
    sites: list[Site]
    arcs: list[Arc]

    def site_index(self, name: str) -> int:
        for i, s in enumerate(self.sites):
            if s.name == name:
                return i
        raise KeyError(name)

    @property
    def site_names(self) -> list[str]:
        return [s.name for s in self.sites]

    @property
    def mining_sites(self) -> list[str]:
        return [s.name for s in self.sites if s.kind == MINING]

    def arcs_in(self, name: str) -> list[int]:
        return [i for i, a in enumerate(self.arcs) if a.dst == name]

    def arcs_out(self, name: str) -> list[int]:
        return [i for i, a in enumerate(self.arcs) if a.src == name]


# --------------------------------------------------------------------------
# time, costs, tariffs, demand
# --------------------------------------------------------------------------

@dataclass
class TimeStructure:
    """Planning horizon: Y years of 12 months of 24-hour days.

    days_in_month has shape (12, Y) and holds the day count of each month in
    each year of the horizon.
    """

    years: int
    days_in_month: np.ndarray

    @property
    def hours_per_day(self) -> int:
        return HOURS

    @property
    def months(self) -> int:
        return MONTHS

    @staticmethod
    def calendar(years: int, leap_offset: int = 0) -> "TimeStructure":
        """A horizon of common years (365 days); every fourth year starting
        at leap_offset is a leap year."""
        base = np.array([31, 28, 31, 30, 31, 30, 31, 31, 30, 31, 30, 31])
        dim = np.tile(base[:, None], (1, years)).astype(int)
        for y in range(years):
            if (y - leap_offset) % 4 == 0 and leap_offset >= 0:
                dim[1, y] = 29
        return TimeStructure(years=years, days_in_month=dim)


@dataclass
class CostParameters:
    """Investment budget, discounting, asset costs and physical coefficients."""

    budget: float                      # MAD
    battery_cost: np.ndarray           # MAD/kWh, shape (Y,)
    solar_cost: np.ndarray             # MAD/kW, shape (Y,)
    discount: float = 0.96             # annual discount factor
    solar_decay: float = 0.995         # annual solar capacity retention
    battery_decay: float = 0.96        # annual battery capacity retention
    retention: float = 0.997           # hourly fraction of stored energy kept
    sell_fraction: float = 0.2         # daily cap on sales as a fraction of local production
    discharge_rate: float = 1.0        # kW delivered per kW discharged
    solar_ramp_total: float = 0.015    # worst-case total capacity-factor decline over the horizon

    def solar_ramp(self, years: int) -> np.ndarray:
        """Multiplicative year-by-year decline of capacity factors, linear
        from 1.0 in year 1 to (1 - solar_ramp_total) in year Y."""
        if years == 1:
            return np.ones(1)
        return 1.0 - self.solar_ramp_total * np.arange(years) / (years - 1)


@dataclass
class TariffSchedule:
    """Purchase and feed-in prices (MAD/kWh) and hourly provider capacities (kW).

    Price arrays have shape (n_sites, 24, 12). NAREVA prices are only
    meaningful at sites where nareva_allowed; other entries are ignored.
    """

    price_onee: np.ndarray
    price_nareva: np.ndarray
    feed_in: np.ndarray
    onee_cap: np.ndarray    # shape (24,), per site and hour
    nareva_cap: np.ndarray  # shape (24,)


@dataclass
class DemandProfile:
    """Hourly demand in kWh, shape (n_sites, 24, 12, Y). Negative entries model
    on-site cogeneration output."""

    values: np.ndarray


@dataclass
class CapacityFactorDataset:
    """Daily capacity-factor profiles at the mining sites.

    values has shape (n_days, 24, n_mining); dates are ISO-8601 strings and
    months[i] in 1..12 is the calendar month of day i.
    """

    dates: list[str]
    months: np.ndarray
    values: np.ndarray
    site_names: list[str]

    @property
    def n_days(self) -> int:
        return self.values.shape[0]

    def day_vectors(self) -> np.ndarray:
        """Flatten each day to a (24 * n_mining) vector for clustering."""
        return self.values.reshape(self.n_days, -1)

    def month_days(self, month: int) -> np.ndarray:
        """Indices of the days falling in calendar month (1..12)."""
        return np.flatnonzero(self.months == month)

    def subset(self, idx) -> "CapacityFactorDataset":
        idx = np.asarray(idx, dtype=int)
        return CapacityFactorDataset(
            dates=[self.dates[i] for i in idx],
            months=self.months[idx].copy(),
            values=self.values[idx].copy(),
            site_names=list(self.site_names),
        )


@dataclass(frozen=True)
class EmissionIntensity:
    """kg CO2 per kWh purchased, by provider. Local solar is carbon free by
    default. The absolute scale cancels in reduction percentages."""

    onee: float = 0.66
    nareva: float = 0.63
    solar: float = 0.0


# --------------------------------------------------------------------------
# plans and dispatch
# --------------------------------------------------------------------------

@dataclass
class InvestmentPlan:
    """Installed assets by (site, year): battery_kwh and solar_kw, shape (N, Y)."""

    battery_kwh: np.ndarray
    solar_kw: np.ndarray

    def effective_solar(self, solar_decay: float) -> np.ndarray:
        """Usable solar capacity by (site, year) after degradation of earlier
        installations: zbar_n^y = sum_{y'<=y} decay^(y-y') z_n^{y'}."""
        return _degraded_cumsum(self.solar_kw, solar_decay)

    def effective_battery(self, battery_decay: float) -> np.ndarray:
        """Usable battery capacity by (site, year) after degradation."""
        return _degraded_cumsum(self.battery_kwh, battery_decay)

    @staticmethod
    def zero(n_sites: int, years: int) -> "InvestmentPlan":
        return InvestmentPlan(
            battery_kwh=np.zeros((n_sites, years)),
            solar_kw=np.zeros((n_sites, years)),
        )


def _degraded_cumsum(built: np.ndarray, decay: float) -> np.ndarray:
    n, years = built.shape
    out = np.zeros_like(built, dtype=float)
    for y in range(years):
        ages = y - np.arange(y + 1)
        out[:, y] = built[:, : y + 1] @ (decay ** ages)
    return out


@dataclass
class DispatchSchedule:
    """Operational decisions per (hour, scenario, month, year).

    Flows are stored as the split pair (flow_pos, flow_neg), both >= 0, so the
    signed flow is flow_pos - flow_neg and |flow| is their sum. Arrays are
    indexed (A or N, 24, D, M, Y).
    """

    flow_pos: np.ndarray
    flow_neg: np.ndarray
    storage: np.ndarray
    discharge: np.ndarray
    buy_onee: np.ndarray
    buy_nareva: np.ndarray
    sell: np.ndarray


@dataclass
class PlanningInstance:
    """Everything the model builders need: network, horizon, prices, demand,
    and (once attached) the reduced scenario set."""

    network: EnergyNetwork
    time: TimeStructure
    costs: CostParameters
    tariffs: TariffSchedule
    demand: DemandProfile
    emissions: EmissionIntensity = field(default_factory=EmissionIntensity)
    scenarios: object | None = None   # ReducedScenarioSet, attached after reduction

    @property
    def n_sites(self) -> int:
        return len(self.network.sites)

    def with_scenarios(self, scenarios) -> "PlanningInstance":
        return dataclasses.replace(self, scenarios=scenarios)

    def with_budget(self, budget: float) -> "PlanningInstance":
        return dataclasses.replace(self, costs=dataclasses.replace(self.costs, budget=budget))


# --------------------------------------------------------------------------
# validation
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class Violation:
    path: str
    message: str
    severity: str = "error"  # "error" or "warning"


@dataclass
class ValidationReport:
    violations: list[Violation] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not any(v.severity == "error" for v in self.violations)

    @property
    def errors(self) -> list[Violation]:
        return [v for v in self.violations if v.severity == "error"]

    @property
    def warnings(self) -> list[Violation]:
        return [v for v in self.violations if v.severity == "warning"]

    def add(self, path: str, message: str, severity: str = "error") -> None:
        self.violations.append(Violation(path, message, severity))

    def __str__(self) -> str:
        if not self.violations:
            return "instance valid"
        return "\n".join(f"{v.severity}: {v.path}: {v.message}" for v in self.violations)


def validate_instance(instance: PlanningInstance) -> ValidationReport:
    """Check every structural invariant and report all violations found.

    The report is empty iff the instance is well formed. Negative demand is
    legal (cogeneration) and only noted as a warning.
    """
    rep = ValidationReport()
    net, time = instance.network, instance.time
    n, years = instance.n_sites, time.years
    names = net.site_names

    if len(set(names)) != len(names):
        rep.add("network.sites", "duplicate site names")
    for i, s in enumerate(net.sites):
        if s.kind not in (MINING, CHEMICAL):
            rep.add(f"network.sites[{i}].kind", f"unknown kind {s.kind!r}")
        if s.kind == CHEMICAL and s.solar_allowed:
            rep.add(f"network.sites[{i}]", "solar_allowed must be false at chemical sites")
        if s.nareva_allowed and s.kind != MINING:
            rep.add(f"network.sites[{i}]", "nareva_allowed only at mining sites")
    for i, a in enumerate(net.arcs):
        if a.src not in names or a.dst not in names:
            rep.add(f"network.arcs[{i}]", f"arc references unknown site {a.src}->{a.dst}")
        if not a.capacity_kw > 0:
            rep.add(f"network.arcs[{i}].capacity_kw", "must be positive")
        if not (0 < a.efficiency <= 1):
            rep.add(f"network.arcs[{i}].efficiency", "efficiency out of (0, 1]")
        if a.rent_price.shape != (HOURS, MONTHS):
            rep.add(f"network.arcs[{i}].rent_price", f"expected shape (24, 12), got {a.rent_price.shape}")
        elif np.any(a.rent_price < 0):
            rep.add(f"network.arcs[{i}].rent_price", "negative rent price")

    if years < 1:
        rep.add("time.years", "horizon must be at least one year")
    if time.days_in_month.shape != (MONTHS, years):
        rep.add("time.days_in_month", f"expected shape (12, {years})")
    else:
        totals = time.days_in_month.sum(axis=0)
        for y, t in enumerate(totals):
            if t not in (365, 366):
                rep.add(f"time.days_in_month[:, {y}]", f"year sums to {t} days, expected 365 or 366")

    c = instance.costs
    if c.budget < 0:
        rep.add("costs.budget", "budget must be nonnegative")
    for nm, val in (("discount", c.discount), ("solar_decay", c.solar_decay),
                    ("battery_decay", c.battery_decay), ("retention", c.retention)):
        if not (0 < val <= 1):
            rep.add(f"costs.{nm}", f"{nm} out of (0, 1]")
    if not (0 <= c.sell_fraction <= 1):
        rep.add("costs.sell_fraction", "sell fraction out of [0, 1]")
    if not c.discharge_rate > 0:
        rep.add("costs.discharge_rate", "must be positive")
    for nm, arr in (("battery_cost", c.battery_cost), ("solar_cost", c.solar_cost)):
        if np.shape(arr) != (years,):
            rep.add(f"costs.{nm}", f"expected shape ({years},)")
        elif np.any(np.asarray(arr) <= 0):
            rep.add(f"costs.{nm}", "asset costs must be positive")

    t = instance.tariffs
    for nm, arr in (("price_onee", t.price_onee), ("price_nareva", t.price_nareva),
                    ("feed_in", t.feed_in)):
        if arr.shape != (n, HOURS, MONTHS):
            rep.add(f"tariffs.{nm}", f"expected shape ({n}, 24, 12), got {arr.shape}")
        elif np.any(arr < 0):
            rep.add(f"tariffs.{nm}", "negative price")
    for nm, arr in (("onee_cap", t.onee_cap), ("nareva_cap", t.nareva_cap)):
        if arr.shape != (HOURS,):
            rep.add(f"tariffs.{nm}", f"expected shape (24,), got {arr.shape}")
        elif np.any(arr < 0):
            rep.add(f"tariffs.{nm}", "negative capacity")

    d = instance.demand.values
    if d.shape != (n, HOURS, MONTHS, years):
        rep.add("demand.values", f"expected shape ({n}, 24, 12, {years}), got {d.shape}")
    else:
        if not np.all(np.isfinite(d)):
            rep.add("demand.values", "non-finite demand")
        if np.any(d < 0):
            rep.add("demand.values", "negative demand present (treated as cogeneration)",
                    severity="warning")

    e = instance.emissions
    if min(e.onee, e.nareva, e.solar) < 0:
        rep.add("emissions", "emission intensities must be nonnegative")

    if instance.scenarios is not None:
        s = instance.scenarios
        mining = net.mining_sites
        if s.centroids.shape[-1] != len(mining):
            rep.add("scenarios.centroids",
                    f"expected {len(mining)} mining-site columns, got {s.centroids.shape[-1]}")
        if np.any(s.centroids < 0) or np.any(s.centroids > 1):
            rep.add("scenarios.centroids", "centroid capacity factors out of [0, 1]")
        col = s.weights.sum(axis=0)
        if np.any(np.abs(col - 1.0) > 1e-9) or np.any(s.weights < -1e-12):
            rep.add("scenarios.weights", "monthly weights are not a probability vector")

    return rep


def check_plan(instance: PlanningInstance, plan: InvestmentPlan,
               tol: float = 1e-6) -> ValidationReport:
    """Validate a plan against the instance: nonnegativity, no solar at
    disallowed sites, and the discounted budget constraint."""
    rep = ValidationReport()
    n, years = instance.n_sites, instance.time.years
    if plan.battery_kwh.shape != (n, years) or plan.solar_kw.shape != (n, years):
        rep.add("plan", f"expected arrays of shape ({n}, {years})")
        return rep
    if np.any(plan.battery_kwh < -tol) or np.any(plan.solar_kw < -tol):
        rep.add("plan", "negative installation")
    for i, s in enumerate(instance.network.sites):
        if not s.solar_allowed and np.any(plan.solar_kw[i] > tol):
            rep.add(f"plan.solar_kw[{s.name}]", "solar_allowed=false")
    c = instance.costs
    disc = c.discount ** np.arange(1, years + 1)
    spend = float(np.sum(c.battery_cost * disc * plan.battery_kwh)
                  + np.sum(c.solar_cost * disc * plan.solar_kw))
    if spend > c.budget * (1 + 1e-9) + tol:
        rep.add("plan", f"discounted spend {spend:.6g} exceeds budget {c.budget:.6g}")
    return rep


def investment_spend(instance: PlanningInstance, plan: InvestmentPlan) -> float:
    """Discounted investment outlay charged against the budget."""
    c = instance.costs
    disc = c.discount ** np.arange(1, instance.time.years + 1)
    return float(np.sum(c.battery_cost * disc * plan.battery_kwh)
                 + np.sum(c.solar_cost * disc * plan.solar_kw))
