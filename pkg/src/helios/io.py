"""Reading and writing instance files, capacity-factor data, scenario sets
and plans.

An instance on disk is a directory with `instance.json` (network, horizon,
costs, tariffs, emission intensities), `demand.csv`, and optionally
`capacity_factors.csv` and `scenarios.json`. CSV files use the schema
`date,hour,site,value` with hour in 1..24; demand rows carry the horizon year
as the ISO year field (0001-03-01 means year 1, March). Writers and loaders
round-trip exactly.
"""

from __future__ import annotations

import csv
import json
import os
from dataclasses import asdict

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
    InvestmentPlan,
    PlanningInstance,
    Site,
    TariffSchedule,
    TimeStructure,
    validate_instance,
)
from .scenarios import ReducedScenarioSet, UncertaintyStatistics

CSV_HEADER = ["date", "hour", "site", "value"]


class ParseError(ValueError):
    """A file could not be parsed; carries path and line number."""

    def __init__(self, path: str, line: int | None, message: str):
        self.path, self.line = path, line
        where = f"{path}:{line}" if line is not None else path
        super().__init__(f"{where}: {message}")


class SchemaError(ValueError):
    """A file parsed but its content does not match the expected schema."""

    def __init__(self, path: str, message: str):
        self.path = path
        super().__init__(f"{path}: {message}")


class ValidationError(ValueError):
    """A loaded instance failed domain validation."""

    def __init__(self, report):
        self.report = report
        super().__init__(str(report))


# --------------------------------------------------------------------------
# instance document
# --------------------------------------------------------------------------

def instance_to_document(instance: PlanningInstance) -> dict:
    return {
        "sites": [asdict(s) for s in instance.network.sites],
        "arcs": [
            {
                "src": a.src,
                "dst": a.dst,
                "capacity_kw": a.capacity_kw,
                "efficiency": a.efficiency,
                "rent_price": a.rent_price.tolist(),
            }
            for a in instance.network.arcs
        ],
        "time": {
            "years": instance.time.years,
            "days_in_month": instance.time.days_in_month.tolist(),
        },
        "costs": {
            "budget": instance.costs.budget,
            "battery_cost": np.asarray(instance.costs.battery_cost).tolist(),
            "solar_cost": np.asarray(instance.costs.solar_cost).tolist(),
            "discount": instance.costs.discount,
            "solar_decay": instance.costs.solar_decay,
            "battery_decay": instance.costs.battery_decay,
            "retention": instance.costs.retention,
            "sell_fraction": instance.costs.sell_fraction,
            "discharge_rate": instance.costs.discharge_rate,
            "solar_ramp_total": instance.costs.solar_ramp_total,
        },
        "tariffs": {
            "price_onee": instance.tariffs.price_onee.tolist(),
            "price_nareva": instance.tariffs.price_nareva.tolist(),
            "feed_in": instance.tariffs.feed_in.tolist(),
            "onee_cap": instance.tariffs.onee_cap.tolist(),
            "nareva_cap": instance.tariffs.nareva_cap.tolist(),
        },
        "emissions": asdict(instance.emissions),
    }


def _require(doc: dict, key: str, path: str, where: str):
    if key not in doc:
        raise SchemaError(path, f"missing key {where}{key!r}")
    return doc[key]


def instance_from_document(doc: dict, demand: DemandProfile, path: str = "<doc>") -> PlanningInstance:
    sites = [
        Site(
            name=_require(s, "name", path, f"sites[{i}]."),
            kind=_require(s, "kind", path, f"sites[{i}]."),
            solar_allowed=bool(s.get("solar_allowed", False)),
            nareva_allowed=bool(s.get("nareva_allowed", False)),
        )
        for i, s in enumerate(_require(doc, "sites", path, ""))
    ]
    arcs = [
        Arc(
            src=_require(a, "src", path, f"arcs[{i}]."),
            dst=_require(a, "dst", path, f"arcs[{i}]."),
            capacity_kw=float(_require(a, "capacity_kw", path, f"arcs[{i}].")),
            efficiency=float(_require(a, "efficiency", path, f"arcs[{i}].")),
            rent_price=np.asarray(_require(a, "rent_price", path, f"arcs[{i}]."), dtype=float),
        )
        for i, a in enumerate(_require(doc, "arcs", path, ""))
    ]
    tdoc = _require(doc, "time", path, "")
    time = TimeStructure(
        years=int(_require(tdoc, "years", path, "time.")),
        days_in_month=np.asarray(_require(tdoc, "days_in_month", path, "time."), dtype=int),
    )
    cdoc = _require(doc, "costs", path, "")
    costs = CostParameters(
        budget=float(_require(cdoc, "budget", path, "costs.")),
        battery_cost=np.asarray(_require(cdoc, "battery_cost", path, "costs."), dtype=float),
        solar_cost=np.asarray(_require(cdoc, "solar_cost", path, "costs."), dtype=float),
        discount=float(cdoc.get("discount", 0.96)),
        solar_decay=float(cdoc.get("solar_decay", 0.995)),
        battery_decay=float(cdoc.get("battery_decay", 0.96)),
        retention=float(cdoc.get("retention", 0.997)),
        sell_fraction=float(cdoc.get("sell_fraction", 0.2)),
        discharge_rate=float(cdoc.get("discharge_rate", 1.0)),
        solar_ramp_total=float(cdoc.get("solar_ramp_total", 0.015)),
    )
    fdoc = _require(doc, "tariffs", path, "")
    tariffs = TariffSchedule(
        price_onee=np.asarray(_require(fdoc, "price_onee", path, "tariffs."), dtype=float),
        price_nareva=np.asarray(_require(fdoc, "price_nareva", path, "tariffs."), dtype=float),
        feed_in=np.asarray(_require(fdoc, "feed_in", path, "tariffs."), dtype=float),
        onee_cap=np.asarray(_require(fdoc, "onee_cap", path, "tariffs."), dtype=float),
        nareva_cap=np.asarray(_require(fdoc, "nareva_cap", path, "tariffs."), dtype=float),
    )
    emissions = EmissionIntensity(**doc.get("emissions", {}))
    return PlanningInstance(
        network=EnergyNetwork(sites=sites, arcs=arcs),
        time=time,
        costs=costs,
        tariffs=tariffs,
        demand=demand,
        emissions=emissions,
    )


# --------------------------------------------------------------------------
# CSV files
# --------------------------------------------------------------------------

def _read_csv_rows(path: str):
    """Yield (line_number, date, hour, site, value) with hour/value parsed."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError(path, 1, "empty file") from None
        if [c.strip() for c in header] != CSV_HEADER:
            raise ParseError(path, 1, f"expected header {','.join(CSV_HEADER)}")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 4:
                raise ParseError(path, lineno, f"expected 4 columns, got {len(row)}")
            date, hour_s, site, value_s = (c.strip() for c in row)
            try:
                hour = int(hour_s)
            except ValueError:
                raise ParseError(path, lineno, f"hour {hour_s!r} is not an integer") from None
            if not 1 <= hour <= HOURS:
                raise ParseError(path, lineno, f"hour {hour} out of 1..24")
            try:
                value = float(value_s)
            except ValueError:
                raise ParseError(path, lineno, f"value {value_s!r} is not a number") from None
            yield lineno, date, hour, site, value


def _parse_iso(date: str, path: str, lineno: int) -> tuple[int, int, int]:
    parts = date.split("-")
    if len(parts) != 3:
        raise ParseError(path, lineno, f"date {date!r} is not ISO-8601")
    try:
        y, m, d = (int(p) for p in parts)
    except ValueError:
        raise ParseError(path, lineno, f"date {date!r} is not ISO-8601") from None
    if not 1 <= m <= MONTHS:
        raise ParseError(path, lineno, f"month {m} out of 1..12")
    return y, m, d


def load_demand_csv(path: str, network: EnergyNetwork, time: TimeStructure) -> DemandProfile:
    """Demand rows are (year-as-date, hour, site, kWh); every
    (site, hour, month, year) cell must appear exactly once."""
    n, years = len(network.sites), time.years
    index = {s: i for i, s in enumerate(network.site_names)}
    values = np.full((n, HOURS, MONTHS, years), np.nan)
    for lineno, date, hour, site, value in _read_csv_rows(path):
        y, m, _ = _parse_iso(date, path, lineno)
        if site not in index:
            raise SchemaError(path, f"unknown site {site!r} (line {lineno})")
        if not 1 <= y <= years:
            raise ParseError(path, lineno, f"year {y} out of 1..{years}")
        if not np.isnan(values[index[site], hour - 1, m - 1, y - 1]):
            raise SchemaError(path, f"duplicate cell site={site} h={hour} m={m} y={y} (line {lineno})")
        values[index[site], hour - 1, m - 1, y - 1] = value

    if np.isnan(values).any():
        missing_sites = [s for s in index if np.isnan(values[index[s]]).all()]
        if missing_sites:
            raise SchemaError(path, f"no demand rows for site {missing_sites[0]!r}")
        i, h, m, y = (int(v[0]) for v in np.where(np.isnan(values)))
        raise SchemaError(
            path,
            f"{int(np.isnan(values).sum())} cells missing, e.g. "
            f"site={network.site_names[i]} h={h + 1} m={m + 1} y={y + 1}",
        )
    return DemandProfile(values=values)


def write_demand_csv(path: str, network: EnergyNetwork, demand: DemandProfile) -> None:
    n, _, months, years = demand.values.shape
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_HEADER)
        for y in range(years):
            for m in range(months):
                for i in range(n):
                    for h in range(HOURS):
                        writer.writerow(
                            [f"{y + 1:04d}-{m + 1:02d}-01", h + 1,
                             network.site_names[i], repr(float(demand.values[i, h, m, y]))]
                        )


def load_capacity_factors_csv(path: str, site_names: list[str] | None = None) -> CapacityFactorDataset:
    """Capacity-factor rows are (calendar date, hour, mining site, factor).
    Site order follows `site_names` when given, else first appearance."""
    cells: dict[tuple[str, str], dict[int, float]] = {}
    seen_sites: list[str] = []
    for lineno, date, hour, site, value in _read_csv_rows(path):
        _parse_iso(date, path, lineno)
        if site_names is not None and site not in site_names:
            raise SchemaError(path, f"unknown site {site!r} (line {lineno})")
        if site not in seen_sites:
            seen_sites.append(site)
        key = (date, site)
        per_hour = cells.setdefault(key, {})
        if hour in per_hour:
            raise SchemaError(path, f"duplicate cell date={date} h={hour} site={site} (line {lineno})")
        per_hour[hour] = value

    sites = site_names if site_names is not None else seen_sites
    for s in sites:
        if s not in seen_sites:
            raise SchemaError(path, f"no rows for site {s!r}")
    dates = sorted({d for d, _ in cells})
    values = np.zeros((len(dates), HOURS, len(sites)))
    for di, date in enumerate(dates):
        for si, site in enumerate(sites):
            per_hour = cells.get((date, site))
            if per_hour is None or len(per_hour) != HOURS:
                have = 0 if per_hour is None else len(per_hour)
                raise SchemaError(path, f"date {date} site {site}: {have} of 24 hours present")
            for h in range(HOURS):
                values[di, h, si] = per_hour[h + 1]
    months = np.array([int(d[5:7]) for d in dates])
    return CapacityFactorDataset(dates=dates, months=months, values=values,
                                 site_names=list(sites))


def write_capacity_factors_csv(path: str, dataset: CapacityFactorDataset) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_HEADER)
        for di, date in enumerate(dataset.dates):
            for si, site in enumerate(dataset.site_names):
                for h in range(HOURS):
                    writer.writerow([date, h + 1, site, repr(float(dataset.values[di, h, si]))])


# --------------------------------------------------------------------------
# directory-level load/save
# --------------------------------------------------------------------------

def load_instance(paths: dict | str, config: dict | None = None) -> PlanningInstance:
    """Load a validated instance.

    `paths` is either a directory containing instance.json / demand.csv /
    optional scenarios.json, or a dict with keys "instance", "demand" and
    optionally "scenarios". `config` entries override scalar cost fields
    (currently "budget").
    """
    if isinstance(paths, str):
        base = paths
        paths = {
            "instance": os.path.join(base, "instance.json"),
            "demand": os.path.join(base, "demand.csv"),
        }
        scen = os.path.join(base, "scenarios.json")
        if os.path.exists(scen):
            paths["scenarios"] = scen

    doc = _load_json(paths["instance"])
    net_only = instance_from_document(doc, demand=DemandProfile(values=np.zeros(0)),
                                      path=paths["instance"])
    demand = load_demand_csv(paths["demand"], net_only.network, net_only.time)
    instance = instance_from_document(doc, demand=demand, path=paths["instance"])
    if config and "budget" in config:
        instance = instance.with_budget(float(config["budget"]))
    if "scenarios" in paths:
        scenarios, _ = load_scenarios(paths["scenarios"])
        instance = instance.with_scenarios(scenarios)

    report = validate_instance(instance)
    if not report.ok:
        raise ValidationError(report)
    return instance


def save_instance(directory: str, instance: PlanningInstance,
                  dataset: CapacityFactorDataset | None = None,
                  statistics: UncertaintyStatistics | None = None) -> None:
    os.makedirs(directory, exist_ok=True)
    with open(os.path.join(directory, "instance.json"), "w", encoding="utf-8") as fh:
        json.dump(instance_to_document(instance), fh, indent=1)
    write_demand_csv(os.path.join(directory, "demand.csv"), instance.network, instance.demand)
    if dataset is not None:
        write_capacity_factors_csv(os.path.join(directory, "capacity_factors.csv"), dataset)
    if instance.scenarios is not None:
        save_scenarios(os.path.join(directory, "scenarios.json"),
                       instance.scenarios, statistics)


def load_dataset(directory_or_path: str,
                 site_names: list[str] | None = None) -> CapacityFactorDataset:
    path = directory_or_path
    if os.path.isdir(path):
        path = os.path.join(path, "capacity_factors.csv")
    return load_capacity_factors_csv(path, site_names)


def _load_json(path: str) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except json.JSONDecodeError as e:
        raise ParseError(path, e.lineno, e.msg) from None


# --------------------------------------------------------------------------
# scenario sets and plans
# --------------------------------------------------------------------------

def save_scenarios(path: str, scenarios: ReducedScenarioSet,
                   statistics: UncertaintyStatistics | None = None) -> None:
    doc = scenarios.to_document()
    if statistics is not None:
        doc["statistics"] = statistics.to_document()
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh)


def load_scenarios(path: str) -> tuple[ReducedScenarioSet, UncertaintyStatistics | None]:
    doc = _load_json(path)
    stats = None
    if "statistics" in doc:
        stats = UncertaintyStatistics.from_document(doc["statistics"])
    return ReducedScenarioSet.from_document(doc), stats


def save_plan(path: str, plan: InvestmentPlan, meta: dict | None = None) -> None:
    doc = {
        "battery_kwh": plan.battery_kwh.tolist(),
        "solar_kw": plan.solar_kw.tolist(),
    }
    if meta:
        doc["meta"] = meta
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=1)


def load_plan(path: str) -> InvestmentPlan:
    doc = _load_json(path)
    for key in ("battery_kwh", "solar_kw"):
        if key not in doc:
            raise SchemaError(path, f"missing key {key!r}")
    return InvestmentPlan(
        battery_kwh=np.asarray(doc["battery_kwh"], dtype=float),
        solar_kw=np.asarray(doc["solar_kw"], dtype=float),
    )
