"""Plan quality metrics and the tuning, sweep and sensitivity harnesses.

A solved planning run is summarized by its investment plan, the expected
yearly operating cost of the planning dispatch, the purchase emissions behind
that dispatch, and a net present value. The NPV discounts, year by year, the
operating savings against a no-investment baseline net of that year's
investment outlay; end-of-horizon salvage is deliberately left out, so a plan
has to pay for itself through operations alone.

Hyperparameter tuning splits each calendar month's days into train,
validation and test sets. Scenarios and deviation statistics are fitted on
the training days only, the planning model is solved once per candidate
(gamma, delta) setting, and every candidate is then scored by operating its
fixed plan through the validation days one at a time. Within a repetition all
candidates share the split, the scenario set and the evaluation days, so
score differences come from the plans alone. An optional shift transform
applied to the validation and test days models the case where operating
conditions drift away from the training record. The winner is picked on mean
validation day cost (or mean emissions via ``select_on``), with exact ties
resolved toward the least conservative setting: lower delta first, then the
lexicographically smaller gamma.

Budget sweeps and scenario-count sensitivity re-run the planning pipeline
over a grid of budgets or scenario counts and tabulate cost, emissions and
NPV per point. The sweep's shape check (operating cost non-increasing in the
budget) records a warning rather than raising, so one odd point cannot kill a
long run; per-point solver errors are likewise recorded and skipped.
"""

from __future__ import annotations

import csv
import itertools
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .dispatch import DispatchInfeasible, build_day_dispatch
from .domain import (HOURS, CapacityFactorDataset, DispatchSchedule,
                     EmissionIntensity, EnergyNetwork, InvestmentPlan,
                     PlanningInstance, investment_spend)
from .dro import AmbiguitySpec, build_dro, solve_dro_cutting_plane
from .model import ModelInstance
from .robust import build_robust
from .saa import (build_saa, day_costs, extract_plan, extract_schedule,
                  objective_breakdown)
from .scenarios import (UncertaintyStatistics, compute_uncertainty_statistics,
                        extend_scenarios, reduce_scenarios)
from .solvers import NumericalFailure, solve
from .synthetic import cloudier


class InsufficientDays(ValueError):
    """A month has fewer days than the requested split needs."""


class HorizonMismatch(ValueError):
    """Yearly series of different lengths were combined."""


class ZeroBaseline(ValueError):
    """A relative metric was requested against a zero baseline."""


BASE_TUPLE = (0.0, 0.0, 0.0, 0.0)


# --------------------------------------------------------------------------
# one planning run
# --------------------------------------------------------------------------

@dataclass
class PlanSolution:
    """One solved planning run and the headline numbers derived from it.

    operating_cost is the expected operating cost per year, undiscounted;
    day_cost the discounted per-(scenario, month, year) day costs of the
    planning dispatch. npv stays None until a baseline is known.
    """

    gamma: tuple[float, float, float]
    delta: float
    status: str
    objective: float
    plan: InvestmentPlan
    schedule: DispatchSchedule
    breakdown: dict[str, float]
    operating_cost: np.ndarray
    emissions_t: float
    day_cost: np.ndarray
    iterations: int = 1
    npv: float | None = None

    def to_document(self, with_schedule: bool = False) -> dict:
        doc = {
            "gamma": list(self.gamma),
            "delta": self.delta,
            "status": self.status,
            "objective": self.objective,
            "iterations": self.iterations,
            "plan": {
                "battery_kwh": self.plan.battery_kwh.tolist(),
                "solar_kw": self.plan.solar_kw.tolist(),
            },
            "breakdown": dict(self.breakdown),
            "operating_cost": self.operating_cost.tolist(),
            "emissions_t": self.emissions_t,
            "npv": self.npv,
        }
        if with_schedule:
            doc["schedule"] = {
                name: getattr(self.schedule, name).tolist()
                for name in ("flow_pos", "flow_neg", "storage", "discharge",
                             "buy_onee", "buy_nareva", "sell")
            }
        return doc


def solve_plan(instance: PlanningInstance, *,
               gamma: tuple[float, float, float] = (0.0, 0.0, 0.0),
               delta: float = 0.0,
               stats: UncertaintyStatistics | None = None,
               dro_method: str = "cuts",
               drop_nominal: bool = False,
               backend: str | None = None) -> PlanSolution:
    """Build and solve the planning model for one robustness setting.

    gamma scales the daily deviation set (all zeros disables it; otherwise
    ``stats`` must be given). delta is the radius of the day-weight ambiguity
    ball; positive values run the cutting-plane loop by default, or the
    one-shot conic reformulation with ``dro_method="cone"``.
    """
    if dro_method not in ("cuts", "cone"):
        raise ValueError(f"unknown dro_method {dro_method!r}")
    gamma = tuple(float(g) for g in gamma)
    if any(g > 0 for g in gamma):
        if stats is None:
            raise ValueError("a positive gamma needs deviation statistics")
        model = build_robust(instance, stats, gamma, drop_nominal=drop_nominal)
    else:
        model = build_saa(instance)

    iterations = 1
    if delta > 0 and dro_method == "cone":
        build_dro(model, AmbiguitySpec(delta))
        out = solve(model, backend=backend)
        objective = out.objective
    elif delta > 0:
        res = solve_dro_cutting_plane(model, AmbiguitySpec(delta),
                                      backend=backend)
        out, objective, iterations = res.outcome, res.objective, res.iterations
    else:
        out = solve(model, backend=backend)
        objective = out.objective

    if out.x is None or out.status not in ("optimal", "limit"):
        raise NumericalFailure(f"planning solve returned {out.status}")
    x = out.x
    return PlanSolution(
        gamma=gamma,
        delta=float(delta),
        status=out.status,
        objective=float(objective),
        plan=extract_plan(model, x),
        schedule=extract_schedule(model, x),
        breakdown=objective_breakdown(model, x),
        operating_cost=yearly_operating_cost(instance, model, x),
        emissions_t=expected_emissions(instance, model, x),
        day_cost=day_costs(model, x),
        iterations=iterations,
    )


# --------------------------------------------------------------------------
# derived metrics
# --------------------------------------------------------------------------

def yearly_operating_cost(instance: PlanningInstance, model: ModelInstance,
                          x: np.ndarray) -> np.ndarray:
    """Expected operating cost per year of the horizon, undiscounted."""
    day = model.meta["day_cost"]
    cday = day_costs(model, x)
    disc = instance.costs.discount ** np.arange(1, instance.time.years + 1)
    per_year = np.einsum("dmy,dm,my->y", cday, day["weights"],
                         day["days_in_month"])
    return per_year / disc


def expected_emissions(instance: PlanningInstance, model: ModelInstance,
                       x: np.ndarray,
                       intensities: EmissionIntensity | None = None) -> float:
    """Expected purchase emissions over the horizon, in tonnes CO2.

    Physical tonnes are not discounted; the day weighting matches the
    objective's expected-cost weighting.
    """
    inten = intensities or instance.emissions
    day = model.meta["day_cost"]
    multiplier = model.meta["sizes"]["hours"] // HOURS
    weight = (day["weights"][:, :, None] * day["days_in_month"][None]
              ) / multiplier
    kg = 0.0
    for name, rate in (("buy_onee", inten.onee), ("buy_nareva", inten.nareva)):
        blk = model.blocks[name]
        bought = x[blk.start: blk.start + blk.size].reshape(blk.shape)
        kg += rate * float(np.einsum("nhdmy,dmy->", bought, weight))
    return kg / 1000.0


def yearly_investment(instance: PlanningInstance,
                      plan: InvestmentPlan) -> np.ndarray:
    """Capacity payments per year of the horizon, undiscounted."""
    c = instance.costs
    return (c.battery_cost * plan.battery_kwh.sum(axis=0)
            + c.solar_cost * plan.solar_kw.sum(axis=0))


def compute_npv(operating_cost, baseline_cost, investment,
                discount: float) -> float:
    """Net present value of a plan against a no-build baseline.

    All three series are per-year and undiscounted: the plan's expected
    operating cost, the baseline's, and the investment outlay. Salvage does
    not enter, so the plan is credited only with operating savings.
    """
    op = np.asarray(operating_cost, dtype=float)
    base = np.asarray(baseline_cost, dtype=float)
    inv = np.asarray(investment, dtype=float)
    if op.ndim != 1 or op.shape != base.shape or op.shape != inv.shape:
        raise HorizonMismatch(
            f"yearly series disagree: {op.shape}, {base.shape}, {inv.shape}")
    disc = float(discount) ** np.arange(1, op.size + 1)
    return float(np.sum(disc * (base - op - inv)))


def emission_reduction(emissions_t: float, baseline_t: float) -> float:
    """Relative emissions saving against a baseline, in percent."""
    if baseline_t <= 0.0:
        raise ZeroBaseline("baseline emissions are zero")
    return 100.0 * (1.0 - emissions_t / baseline_t)


# --------------------------------------------------------------------------
# operating a fixed plan through recorded days
# --------------------------------------------------------------------------

def day_production(dataset: CapacityFactorDataset, index: int,
                   network: EnergyNetwork) -> np.ndarray:
    """One recorded day's capacity factors on network sites, (N, 24)."""
    out = np.zeros((len(network.sites), dataset.values.shape[1]))
    for col, name in enumerate(dataset.site_names):
        out[network.site_index(name)] = dataset.values[index, :, col]
    return out


@dataclass
class DayEvaluation:
    """Realized cost and purchase emissions of a plan, one entry per day."""

    cost: np.ndarray
    emissions_kg: np.ndarray

    @property
    def mean_cost(self) -> float:
        return float(self.cost.mean())

    @property
    def mean_emissions_kg(self) -> float:
        return float(self.emissions_kg.mean())


def evaluate_days(instance: PlanningInstance, plan: InvestmentPlan,
                  dataset: CapacityFactorDataset, *, year: int = 0,
                  backend: str | None = None,
                  intensities: EmissionIntensity | None = None) -> DayEvaluation:
    """Operate a fixed plan through each recorded day and collect the realized
    cost and purchase emissions. Every day is priced in its calendar month."""
    inten = intensities or instance.emissions
    cost = np.zeros(dataset.n_days)
    kg = np.zeros(dataset.n_days)
    for i in range(dataset.n_days):
        month = int(dataset.months[i]) - 1
        production = day_production(dataset, i, instance.network)
        model = build_day_dispatch(instance, plan, production, month, year)
        out = solve(model, backend=backend)
        if out.status != "optimal":
            raise DispatchInfeasible(
                f"day {dataset.dates[i]} (month {month + 1}): {out.status}")
        cost[i] = out.objective
        kg[i] = (inten.onee * float(out.block(model, "buy_onee").sum())
                 + inten.nareva * float(out.block(model, "buy_nareva").sum()))
    return DayEvaluation(cost=cost, emissions_kg=kg)


# --------------------------------------------------------------------------
# hyperparameter tuning
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class SplitSpec:
    """Month-wise day split and the number of independent repetitions."""

    train: int = 20
    validation: int = 4
    test: int = 4
    repetitions: int = 10
    seed: int = 0

    def __post_init__(self):
        for name in ("train", "validation", "test"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} count must be nonnegative")
        if self.train < 1 or self.validation < 1:
            raise ValueError("need at least one training and one validation day")
        if self.repetitions < 1:
            raise ValueError("repetitions must be at least 1")


@dataclass(frozen=True)
class HyperGrid:
    """Candidate (gamma_max, gamma_c, gamma_clt, delta) settings."""

    tuples: tuple[tuple[float, float, float, float], ...]

    def __post_init__(self):
        clean = []
        for entry in self.tuples:
            entry = tuple(float(v) for v in entry)
            if len(entry) != 4:
                raise ValueError(f"grid entries are 4-tuples, got {entry}")
            if any(v < 0 for v in entry):
                raise ValueError(f"negative grid entry {entry}")
            clean.append(entry)
        if not clean:
            raise ValueError("grid is empty")
        object.__setattr__(self, "tuples", tuple(dict.fromkeys(clean)))

    @staticmethod
    def default() -> "HyperGrid":
        return HyperGrid.cross(itertools.product((0.0, 1.0), repeat=3),
                               (0.0, 0.001, 0.01, 0.1, 1.0))

    @staticmethod
    def cross(gammas, deltas) -> "HyperGrid":
        return HyperGrid(tuple((*(float(g) for g in gamma), float(d))
                               for gamma in gammas for d in deltas))


@dataclass
class TupleScore:
    """Validation outcome of one grid setting, aggregated over repetitions.

    Improvements are percentages against the gamma = delta = 0 run on the
    same splits; mean and corrected standard deviation over repetitions.
    """

    gamma: tuple[float, float, float]
    delta: float
    validation_cost: float
    validation_emissions_kg: float
    cost_improvement: tuple[float, float]
    co2_improvement: tuple[float, float]

    @property
    def key(self) -> tuple[float, float, float, float]:
        return (*self.gamma, self.delta)


@dataclass
class EvaluationReport:
    """Tuning outcome: per-setting scores, the selected setting, and holdout
    improvements of the winner. val_cost / val_emissions keep the raw paired
    per-repetition day-cost means, one column per grid setting."""

    scores: list[TupleScore]
    selected: tuple[float, float, float, float]
    select_on: str
    repetitions: int
    baseline_cost: float
    baseline_emissions_kg: float
    test_cost_improvement: tuple[float, float] | None = None
    test_co2_improvement: tuple[float, float] | None = None
    val_cost: np.ndarray | None = None
    val_emissions: np.ndarray | None = None
    sweep: "SweepReport | None" = None

    def score_for(self, key) -> TupleScore:
        key = tuple(float(v) for v in key)
        for s in self.scores:
            if s.key == key:
                return s
        raise KeyError(f"setting {key} is not in the grid")

    def to_document(self) -> dict:
        def pair(p):
            return None if p is None else {"mean": p[0], "stdev": p[1]}

        doc = {
            "select_on": self.select_on,
            "repetitions": self.repetitions,
            "selected": list(self.selected),
            "baseline": {
                "validation_cost": self.baseline_cost,
                "validation_emissions_kg": self.baseline_emissions_kg,
            },
            "scores": [
                {
                    "gamma": list(s.gamma),
                    "delta": s.delta,
                    "validation_cost": s.validation_cost,
                    "validation_emissions_kg": s.validation_emissions_kg,
                    "cost_improvement": pair(s.cost_improvement),
                    "co2_improvement": pair(s.co2_improvement),
                }
                for s in self.scores
            ],
            "test": {
                "cost_improvement": pair(self.test_cost_improvement),
                "co2_improvement": pair(self.test_co2_improvement),
            },
        }
        if self.val_cost is not None:
            doc["validation_cost_matrix"] = self.val_cost.tolist()
        if self.sweep is not None:
            doc["sweep"] = self.sweep.to_document()
        return doc


def _apply_shift(shift, dataset: CapacityFactorDataset,
                 seed: int) -> CapacityFactorDataset:
    if callable(shift):
        return shift(dataset, seed)
    return cloudier(dataset, float(shift), seed=seed)


def _mean_std(values: np.ndarray) -> tuple[float, float]:
    if values.size < 2:
        return float(values.mean()), 0.0
    return float(values.mean()), float(values.std(ddof=1))


def cross_validate(instance: PlanningInstance, dataset: CapacityFactorDataset,
                   splits: SplitSpec | None = None,
                   grid: HyperGrid | None = None, *,
                   k_scenarios: int = 10,
                   shift=None,
                   select_on: str = "cost",
                   dro_method: str = "cuts",
                   drop_nominal: bool = False,
                   year: int = 0,
                   parallelism: int = 1,
                   backend: str | None = None) -> EvaluationReport:
    """Tune the robustness setting by repeated month-wise splits.

    Per repetition: split every month's days into train/validation/test,
    reduce scenarios and fit deviation statistics on the training days, solve
    the planning model per grid setting, and score each resulting plan on the
    validation days. ``shift`` (a scale factor or a ``(dataset, seed)``
    callable) is applied to the validation and test days only, to model
    conditions drifting from the training record. Plans of year index
    ``year`` are evaluated.

    The gamma = delta = 0 run is always solved as the improvement baseline,
    whether or not it is part of the grid; selection considers grid settings
    only. The winner's plans are re-scored against the baseline's on the test
    days. Raises InsufficientDays if any month is shorter than the split.
    """
    splits = splits or SplitSpec()
    grid = grid or HyperGrid.default()
    if select_on not in ("cost", "co2"):
        raise ValueError("select_on must be 'cost' or 'co2'")

    month_days = [dataset.month_days(m) for m in range(1, 13)]
    need = splits.train + splits.validation + splits.test
    for m, days in enumerate(month_days, start=1):
        if len(days) < need:
            raise InsufficientDays(
                f"month {m} has {len(days)} days, the split needs {need}")

    work = list(grid.tuples)
    if BASE_TUPLE not in work:
        work.append(BASE_TUPLE)
    base_idx = work.index(BASE_TUPLE)
    n_grid = len(grid.tuples)

    reps = splits.repetitions
    val_cost = np.zeros((reps, len(work)))
    val_kg = np.zeros((reps, len(work)))
    plans: list[list[InvestmentPlan]] = []
    test_sets: list[CapacityFactorDataset] = []

    for r in range(reps):
        rng = np.random.default_rng(splits.seed + r)
        tr: list[int] = []
        va: list[int] = []
        te: list[int] = []
        for days in month_days:
            perm = rng.permutation(days)
            tr.extend(perm[: splits.train])
            va.extend(perm[splits.train: splits.train + splits.validation])
            te.extend(perm[splits.train + splits.validation: need])
        train_ds = dataset.subset(sorted(tr))
        val_ds = dataset.subset(sorted(va))
        test_ds = dataset.subset(sorted(te))
        if shift is not None:
            val_ds = _apply_shift(shift, val_ds, splits.seed + 7919 + r)
            test_ds = _apply_shift(shift, test_ds, splits.seed + 104729 + r)

        scen = reduce_scenarios(train_ds, k_scenarios, seed=splits.seed + r)
        stats = compute_uncertainty_statistics(train_ds, scen)
        inst_r = instance.with_scenarios(scen)

        def run(setting):
            sol = solve_plan(inst_r, gamma=setting[:3], delta=setting[3],
                             stats=stats, dro_method=dro_method,
                             drop_nominal=drop_nominal, backend=backend)
            ev = evaluate_days(inst_r, sol.plan, val_ds, year=year,
                               backend=backend)
            return sol.plan, ev.mean_cost, ev.mean_emissions_kg

        if parallelism > 1:
            with ThreadPoolExecutor(max_workers=parallelism) as pool:
                results = list(pool.map(run, work))
        else:
            results = [run(setting) for setting in work]
        plans.append([res[0] for res in results])
        val_cost[r] = [res[1] for res in results]
        val_kg[r] = [res[2] for res in results]
        test_sets.append(test_ds)

    base_cost = val_cost[:, base_idx]
    base_kg = val_kg[:, base_idx]
    if np.any(base_cost == 0.0):
        raise ZeroBaseline("a repetition's baseline validation cost is zero")
    if np.any(base_kg == 0.0):
        raise ZeroBaseline("a repetition's baseline emissions are zero")
    imp_cost = 100.0 * (base_cost[:, None] - val_cost) / np.abs(base_cost[:, None])
    imp_kg = 100.0 * (base_kg[:, None] - val_kg) / base_kg[:, None]

    scores = [
        TupleScore(
            gamma=work[j][:3],
            delta=work[j][3],
            validation_cost=float(val_cost[:, j].mean()),
            validation_emissions_kg=float(val_kg[:, j].mean()),
            cost_improvement=_mean_std(imp_cost[:, j]),
            co2_improvement=_mean_std(imp_kg[:, j]),
        )
        for j in range(n_grid)
    ]

    if select_on == "cost":
        best = min(scores, key=lambda s: (s.validation_cost, s.delta, s.gamma))
    else:
        best = min(scores, key=lambda s: (s.validation_emissions_kg, s.delta,
                                          s.gamma))
    selected = best.key
    win_idx = work.index(selected)

    test_imp_cost = test_imp_kg = None
    if splits.test > 0:
        win_cost = np.zeros(reps)
        win_kg = np.zeros(reps)
        ref_cost = np.zeros(reps)
        ref_kg = np.zeros(reps)
        for r in range(reps):
            ev_ref = evaluate_days(instance, plans[r][base_idx], test_sets[r],
                                   year=year, backend=backend)
            if win_idx == base_idx:
                ev_win = ev_ref
            else:
                ev_win = evaluate_days(instance, plans[r][win_idx],
                                       test_sets[r], year=year,
                                       backend=backend)
            win_cost[r], win_kg[r] = ev_win.mean_cost, ev_win.mean_emissions_kg
            ref_cost[r], ref_kg[r] = ev_ref.mean_cost, ev_ref.mean_emissions_kg
        if np.any(ref_cost == 0.0) or np.any(ref_kg == 0.0):
            raise ZeroBaseline("a repetition's baseline test metric is zero")
        test_imp_cost = _mean_std(100.0 * (ref_cost - win_cost) / np.abs(ref_cost))
        test_imp_kg = _mean_std(100.0 * (ref_kg - win_kg) / ref_kg)

    return EvaluationReport(
        scores=scores,
        selected=selected,
        select_on=select_on,
        repetitions=reps,
        baseline_cost=float(base_cost.mean()),
        baseline_emissions_kg=float(base_kg.mean()),
        test_cost_improvement=test_imp_cost,
        test_co2_improvement=test_imp_kg,
        val_cost=val_cost[:, :n_grid].copy(),
        val_emissions=val_kg[:, :n_grid].copy(),
    )


def write_crossval_csv(report: EvaluationReport, path: str) -> None:
    """Score table: one row per gamma setting and metric, one column per
    delta, cells formatted "mean (stdev)" in percent against the baseline."""
    gammas = sorted({s.gamma for s in report.scores})
    deltas = sorted({s.delta for s in report.scores})
    by_key = {s.key: s for s in report.scores}
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["metric", "gamma_max", "gamma_c", "gamma_clt"]
                        + [f"delta={d:g}" for d in deltas])
        for metric in ("cost", "co2"):
            for gamma in gammas:
                row = [metric] + [f"{g:g}" for g in gamma]
                for d in deltas:
                    score = by_key.get((*gamma, d))
                    if score is None:
                        row.append("")
                    else:
                        mean, std = (score.cost_improvement if metric == "cost"
                                     else score.co2_improvement)
                        row.append(f"{mean:.2f} ({std:.2f})")
                writer.writerow(row)


# --------------------------------------------------------------------------
# perturbed holdout data
# --------------------------------------------------------------------------

def perturb_dataset(dataset: CapacityFactorDataset, seed: int = 0,
                    mu: float | None = None) -> CapacityFactorDataset:
    """Multiplicative noise for a harder holdout set.

    Every entry v becomes v (1 + e) with e drawn from Normal(mu, (mu/10)^2);
    the bias mu itself is drawn once per dataset from Uniform[-0.25, 0.25]
    unless given. Results stay clamped to [0, 1].
    """
    rng = np.random.default_rng(seed)
    m = float(rng.uniform(-0.25, 0.25)) if mu is None else float(mu)
    noise = m + (abs(m) / 10.0) * rng.standard_normal(dataset.values.shape)
    values = np.clip(dataset.values * (1.0 + noise), 0.0, 1.0)
    return CapacityFactorDataset(dates=list(dataset.dates),
                                 months=dataset.months.copy(),
                                 values=values,
                                 site_names=list(dataset.site_names))


# --------------------------------------------------------------------------
# budget sweep
# --------------------------------------------------------------------------

@dataclass
class SweepPoint:
    """One budget grid point. Metrics are nan when the point's solve failed;
    operating_cost and the spend columns are discounted horizon totals."""

    budget: float
    status: str
    objective: float = math.nan
    operating_cost: float = math.nan
    npv: float = math.nan
    emissions_t: float = math.nan
    emissions_reduction: float = math.nan
    battery_kwh: float = math.nan
    solar_kw: float = math.nan
    battery_spend: float = math.nan
    solar_spend: float = math.nan

    FIELDS = ("budget", "status", "objective", "operating_cost", "npv",
              "emissions_t", "emissions_reduction", "battery_kwh", "solar_kw",
              "battery_spend", "solar_spend")


@dataclass
class SweepReport:
    """Budget sweep outcome plus the zero-budget reference metrics."""

    points: list[SweepPoint]
    gamma: tuple[float, float, float]
    delta: float
    baseline_operating_cost: float
    baseline_emissions_t: float
    warnings: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return all(p.status in ("optimal", "limit") for p in self.points)

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(p, name) for p in self.points], dtype=float)

    def to_document(self) -> dict:
        return {
            "gamma": list(self.gamma),
            "delta": self.delta,
            "baseline_operating_cost": self.baseline_operating_cost,
            "baseline_emissions_t": self.baseline_emissions_t,
            "warnings": list(self.warnings),
            "points": [
                {name: getattr(p, name) for name in SweepPoint.FIELDS}
                for p in self.points
            ],
        }

    @classmethod
    def from_document(cls, doc: dict) -> "SweepReport":
        """Inverse of to_document; None metrics (JSON for nan) come back as
        nan so a round-tripped report renders the same CSV."""
        points = []
        for raw in doc["points"]:
            kwargs = {}
            for name in SweepPoint.FIELDS:
                value = raw[name]
                if name != "status" and value is None:
                    value = math.nan
                kwargs[name] = value
            points.append(SweepPoint(**kwargs))
        return cls(points=points,
                   gamma=tuple(float(g) for g in doc["gamma"]),
                   delta=float(doc["delta"]),
                   baseline_operating_cost=doc["baseline_operating_cost"],
                   baseline_emissions_t=doc["baseline_emissions_t"],
                   warnings=list(doc.get("warnings", [])))


def budget_sweep(instance: PlanningInstance, budgets, *,
                 gamma: tuple[float, float, float] = (0.0, 0.0, 0.0),
                 delta: float = 0.0,
                 stats: UncertaintyStatistics | None = None,
                 dro_method: str = "cuts",
                 parallelism: int = 1,
                 backend: str | None = None) -> SweepReport:
    """Solve the planning model across an ascending budget grid.

    Reductions and NPV are taken against the zero-budget run of the same
    robustness setting, so a zero point in the grid reports exactly NPV 0 and
    reduction 0. A point whose solve fails is recorded with the error text
    and skipped; operating cost rising with the budget is recorded as a
    warning.
    """
    budgets = [float(b) for b in budgets]
    if not budgets:
        raise ValueError("budget grid is empty")
    if any(b < 0 for b in budgets):
        raise ValueError("budgets must be nonnegative")
    if any(b1 < b0 for b0, b1 in zip(budgets, budgets[1:])):
        raise ValueError("budgets must be sorted ascending")

    def run_point(budget: float):
        try:
            return solve_plan(instance.with_budget(budget), gamma=gamma,
                              delta=delta, stats=stats, dro_method=dro_method,
                              backend=backend)
        except Exception as exc:
            return exc

    if parallelism > 1:
        with ThreadPoolExecutor(max_workers=parallelism) as pool:
            sols = list(pool.map(run_point, budgets))
    else:
        sols = [run_point(b) for b in budgets]

    base = None
    if 0.0 in budgets:
        candidate = sols[budgets.index(0.0)]
        if isinstance(candidate, PlanSolution):
            base = candidate
    if base is None:
        base = run_point(0.0)
        if isinstance(base, Exception):
            raise NumericalFailure(
                f"zero-budget reference solve failed: {base}") from base

    disc = instance.costs.discount ** np.arange(1, instance.time.years + 1)
    base_op = float(disc @ base.operating_cost)
    warnings_log: list[str] = []
    points: list[SweepPoint] = []
    prev_cost = prev_budget = None
    for budget, sol in zip(budgets, sols):
        if isinstance(sol, Exception):
            points.append(SweepPoint(budget=budget, status=f"error: {sol}"))
            continue
        op = float(disc @ sol.operating_cost)
        sol.npv = compute_npv(sol.operating_cost, base.operating_cost,
                              yearly_investment(instance, sol.plan),
                              instance.costs.discount)
        if base.emissions_t > 0:
            reduction = emission_reduction(sol.emissions_t, base.emissions_t)
        else:
            reduction = math.nan
            warnings_log.append("zero-budget emissions are zero; "
                                "reductions are undefined")
        points.append(SweepPoint(
            budget=budget,
            status=sol.status,
            objective=sol.objective,
            operating_cost=op,
            npv=sol.npv,
            emissions_t=sol.emissions_t,
            emissions_reduction=reduction,
            battery_kwh=float(sol.plan.battery_kwh.sum()),
            solar_kw=float(sol.plan.solar_kw.sum()),
            battery_spend=float(disc @ (instance.costs.battery_cost
                                        * sol.plan.battery_kwh.sum(axis=0))),
            solar_spend=float(disc @ (instance.costs.solar_cost
                                      * sol.plan.solar_kw.sum(axis=0))),
        ))
        if prev_cost is not None and op > prev_cost + 1e-7 * max(1.0, abs(prev_cost)):
            warnings_log.append(
                f"operating cost rose from budget {prev_budget:g} to "
                f"{budget:g} ({prev_cost:.6g} -> {op:.6g})")
        prev_cost, prev_budget = op, budget

    return SweepReport(points=points, gamma=tuple(float(g) for g in gamma),
                       delta=float(delta), baseline_operating_cost=base_op,
                       baseline_emissions_t=base.emissions_t,
                       warnings=warnings_log)


def write_sweep_csv(report: SweepReport, path: str) -> None:
    """One row per budget point with all sweep metrics; failed points keep
    their error text in the status column and empty metric cells."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(SweepPoint.FIELDS)
        for p in report.points:
            row = []
            for name in SweepPoint.FIELDS:
                value = getattr(p, name)
                if isinstance(value, float) and math.isnan(value):
                    row.append("")
                elif isinstance(value, float):
                    row.append(f"{value:.10g}")
                else:
                    row.append(value)
            writer.writerow(row)


# --------------------------------------------------------------------------
# scenario-count sensitivity
# --------------------------------------------------------------------------

@dataclass
class SensitivityPoint:
    """Pipeline outcome for one scenario-count setting."""

    scenarios: int
    day_length: int
    investment: float
    operating_cost: float
    emissions_t: float
    objective: float

    @property
    def label(self) -> str:
        if self.day_length == 1:
            return f"k={self.scenarios}"
        return f"k={self.scenarios}x{self.day_length}"


@dataclass
class SensitivityReport:
    """Per-count outcomes and the relative spread of each metric."""

    points: list[SensitivityPoint]
    spread: dict[str, float]

    def to_document(self) -> dict:
        return {
            "points": [
                {
                    "label": p.label,
                    "scenarios": p.scenarios,
                    "day_length": p.day_length,
                    "investment": p.investment,
                    "operating_cost": p.operating_cost,
                    "emissions_t": p.emissions_t,
                    "objective": p.objective,
                }
                for p in self.points
            ],
            "spread": dict(self.spread),
        }


def sensitivity_scenarios(instance: PlanningInstance,
                          dataset: CapacityFactorDataset, counts, *,
                          seed: int = 0,
                          backend: str | None = None) -> SensitivityReport:
    """Re-run scenario reduction and the planning solve per scenario count.

    Entries of ``counts`` are either a plain count or a (count, day_length)
    pair; day length 2 or 3 builds the product set of consecutive days. The
    report's spread is (max - min) / mean |value| per metric, a measure of
    how much the count choice moves the answer.
    """
    if len(counts) < 2:
        raise ValueError("need at least two scenario counts to compare")
    settings = []
    for entry in counts:
        if isinstance(entry, (tuple, list)):
            settings.append((int(entry[0]), int(entry[1])))
        else:
            settings.append((int(entry), 1))

    disc = instance.costs.discount ** np.arange(1, instance.time.years + 1)
    points = []
    for k, length in settings:
        scen = reduce_scenarios(dataset, k, seed=seed)
        if length > 1:
            scen = extend_scenarios(scen, length)
        sol = solve_plan(instance.with_scenarios(scen), backend=backend)
        points.append(SensitivityPoint(
            scenarios=k,
            day_length=length,
            investment=investment_spend(instance, sol.plan),
            operating_cost=float(disc @ sol.operating_cost),
            emissions_t=sol.emissions_t,
            objective=sol.objective,
        ))

    def rel_spread(values) -> float:
        arr = np.array(values, dtype=float)
        scale = float(np.abs(arr).mean())
        if scale == 0.0:
            return 0.0
        return float((arr.max() - arr.min()) / scale)

    spread = {
        "investment": rel_spread([p.investment for p in points]),
        "operating_cost": rel_spread([p.operating_cost for p in points]),
        "emissions_t": rel_spread([p.emissions_t for p in points]),
    }
    return SensitivityReport(points=points, spread=spread)


def write_sensitivity_csv(report: SensitivityReport, path: str) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["label", "scenarios", "day_length", "investment",
                         "operating_cost", "emissions_t", "objective"])
        for p in report.points:
            writer.writerow([p.label, p.scenarios, p.day_length,
                             f"{p.investment:.10g}", f"{p.operating_cost:.10g}",
                             f"{p.emissions_t:.10g}", f"{p.objective:.10g}"])
        writer.writerow([])
        writer.writerow(["spread"] + [f"{k}={v:.6g}"
                                      for k, v in report.spread.items()])
