"""Command-line front end for the planning pipeline.

Subcommands cover the whole workflow: ``generate`` a synthetic instance,
``reduce`` recorded days to scenarios, ``plan`` a single solve, ``replay`` a
day hour by hour, ``crossval`` the robustness setting, ``sweep`` a budget
grid, and ``serve`` the HTTP facade. Report-producing commands write CSV
tables and PNG figures into the output directory, plus a run-manifest.json
capturing every resolved setting, seed and library version, so a run can be
repeated from its artifacts alone.

Values for any flag can also come from a JSON config file (``--config``);
explicit flags win over the file, the file wins over built-in defaults.
Exit codes: 0 success, 1 invalid input, 2 solver failure. Failures print a
machine-readable ``error: E_...`` line on stderr.
"""

from __future__ import annotations

import argparse
import csv
import datetime
import json
import os
import sys

import numpy as np

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_SOLVER = 2


class _Parser(argparse.ArgumentParser):
    """Argument parser whose usage failures follow the exit-code contract."""

    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"error: E_USAGE: {message}", file=sys.stderr)
        raise SystemExit(EXIT_VALIDATION)


# --------------------------------------------------------------------------
# settings resolution and the run manifest
# --------------------------------------------------------------------------

def _load_config(path: str | None) -> dict:
    if path is None:
        return {}
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    if not isinstance(doc, dict):
        raise ValueError(f"{path}: config must be a JSON object")
    return doc


def _resolve(args, config: dict, name: str, default=None):
    """Flag value if given, else config-file value, else the default."""
    value = getattr(args, name.replace("-", "_"), None)
    if value is not None:
        return value
    if name in config:
        return config[name]
    return default


def _out_dir(args, config) -> str:
    out = _resolve(args, config, "out-dir", ".")
    os.makedirs(out, exist_ok=True)
    return out


def _write_manifest(out_dir: str, command: str, settings: dict) -> str:
    import matplotlib
    import scipy

    try:
        from importlib.metadata import version
        own = version("helios")
    except Exception:
        own = "unpackaged"
    manifest = {
        "command": command,
        "settings": settings,
        "versions": {
            "helios": own,
            "python": sys.version.split()[0],
            "numpy": np.__version__,
            "scipy": scipy.__version__,
            "matplotlib": matplotlib.__version__,
        },
        "solver_env": os.environ.get("HELIOS_SOLVER"),
        "created": datetime.datetime.now(datetime.timezone.utc).isoformat(),
    }
    path = os.path.join(out_dir, "run-manifest.json")
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=1)
    return path


def _load_planning_inputs(args, config, *, need_scenarios: bool = True):
    """Instance plus scenario set and deviation statistics, resolving the
    --scenarios override against the instance directory's bundled set."""
    from .io import load_instance, load_scenarios

    inst_dir = _resolve(args, config, "instance")
    if inst_dir is None:
        raise ValueError("an --instance directory is required")
    budget = _resolve(args, config, "budget")
    cfg = {"budget": float(budget)} if budget is not None else None
    instance = load_instance(inst_dir, cfg)

    scen_path = _resolve(args, config, "scenarios")
    if scen_path is None:
        bundled = os.path.join(inst_dir, "scenarios.json")
        scen_path = bundled if os.path.exists(bundled) else None
    stats = None
    if scen_path is not None:
        scenarios, stats = load_scenarios(scen_path)
        instance = instance.with_scenarios(scenarios)
    elif need_scenarios:
        raise ValueError(
            "no scenario set: pass --scenarios or run `helios reduce` first")
    return instance, stats, inst_dir, scen_path


def _gamma_of(args, config) -> tuple[float, float, float]:
    gamma = _resolve(args, config, "gamma", (0.0, 0.0, 0.0))
    gamma = tuple(float(g) for g in gamma)
    if len(gamma) != 3:
        raise ValueError("--gamma takes three values: max, c, clt")
    return gamma


# --------------------------------------------------------------------------
# subcommands
# --------------------------------------------------------------------------

def cmd_generate(args) -> int:
    from .io import save_instance
    from .synthetic import GeneratorSpec, generate_synthetic

    config = _load_config(args.config)
    out = _out_dir(args, config)
    fields = ("years", "seed", "budget", "demand_scale", "peak_ratio",
              "cloud_prob", "feed_in_price", "battery_cost_0", "solar_cost_0")
    kwargs = {}
    for name in fields:
        value = _resolve(args, config, name.replace("_", "-"))
        if value is not None:
            kwargs[name] = type(getattr(GeneratorSpec, name))(value)
    spec = GeneratorSpec(**kwargs)
    instance, dataset = generate_synthetic(spec)
    save_instance(out, instance, dataset)
    with open(os.path.join(out, "generator.json"), "w", encoding="utf-8") as fh:
        json.dump(spec.to_document(), fh, indent=1)
    _write_manifest(out, "generate", spec.to_document())
    print(f"wrote instance ({instance.n_sites} sites, {spec.years} years, "
          f"{dataset.n_days} recorded days) to {out}")
    return EXIT_OK


def cmd_reduce(args) -> int:
    from .io import load_dataset, save_scenarios
    from .scenarios import compute_uncertainty_statistics, reduce_scenarios

    config = _load_config(args.config)
    out = _out_dir(args, config)
    data_path = _resolve(args, config, "dataset")
    if data_path is None:
        raise ValueError("a --dataset file or directory is required")
    k = int(_resolve(args, config, "k", 10))
    seed = int(_resolve(args, config, "seed", 0))

    dataset = load_dataset(data_path)
    scenarios = reduce_scenarios(dataset, k, seed=seed)
    stats = compute_uncertainty_statistics(dataset, scenarios)
    scen_path = os.path.join(out, "scenarios.json")
    save_scenarios(scen_path, scenarios, stats)

    with open(os.path.join(out, "weights.csv"), "w", newline="",
              encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["scenario", "mean_capacity_factor"]
                        + [f"month_{m}" for m in range(1, 13)])
        for d in range(scenarios.n_scenarios):
            writer.writerow([d, f"{scenarios.centroids[d].mean():.6f}"]
                            + [f"{w:.8f}" for w in scenarios.weights[d]])
    _write_manifest(out, "reduce", {"dataset": data_path, "k": k, "seed": seed})
    print(f"reduced {dataset.n_days} days to {scenarios.n_scenarios} scenarios "
          f"-> {scen_path}")
    return EXIT_OK


def cmd_plan(args) -> int:
    from . import plots
    from .evaluation import compute_npv, solve_plan, yearly_investment
    from .io import save_plan

    config = _load_config(args.config)
    out = _out_dir(args, config)
    instance, stats, inst_dir, scen_path = _load_planning_inputs(args, config)
    gamma = _gamma_of(args, config)
    delta = float(_resolve(args, config, "delta", 0.0))
    dro_method = _resolve(args, config, "dro-method", "cuts")
    drop_nominal = bool(_resolve(args, config, "drop-nominal", False))

    settings = {"instance": inst_dir, "scenarios": scen_path,
                "budget": instance.costs.budget, "gamma": list(gamma),
                "delta": delta, "dro_method": dro_method,
                "drop_nominal": drop_nominal}
    _write_manifest(out, "plan", settings)

    sol = solve_plan(instance, gamma=gamma, delta=delta, stats=stats,
                     dro_method=dro_method, drop_nominal=drop_nominal)
    if instance.costs.budget > 0:
        base = solve_plan(instance.with_budget(0.0), gamma=gamma, delta=delta,
                          stats=stats, dro_method=dro_method,
                          drop_nominal=drop_nominal)
        sol.npv = compute_npv(sol.operating_cost, base.operating_cost,
                              yearly_investment(instance, sol.plan),
                              instance.costs.discount)
    else:
        sol.npv = 0.0

    with open(os.path.join(out, "plan.json"), "w", encoding="utf-8") as fh:
        json.dump(sol.to_document(), fh, indent=1)
    save_plan(os.path.join(out, "investment.json"), sol.plan,
              meta={"gamma": list(gamma), "delta": delta})
    with open(os.path.join(out, "investment.csv"), "w", newline="",
              encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["site", "year", "battery_kwh", "solar_kw"])
        for i, site in enumerate(instance.network.sites):
            for y in range(instance.time.years):
                writer.writerow([site.name, y + 1,
                                 f"{sol.plan.battery_kwh[i, y]:.6f}",
                                 f"{sol.plan.solar_kw[i, y]:.6f}"])
    plots.investment_figure(sol.plan, os.path.join(out, "plan_investment.png"))

    print(f"status {sol.status}; objective {sol.objective:,.2f} MAD")
    print(f"solar {sol.plan.solar_kw.sum():,.1f} kW, "
          f"battery {sol.plan.battery_kwh.sum():,.1f} kWh")
    print(f"NPV {sol.npv:,.2f} MAD; emissions {sol.emissions_t:,.1f} t CO2")
    return EXIT_OK


def cmd_replay(args) -> int:
    from . import plots
    from .dispatch import replay_day, scenario_production
    from .io import load_plan

    config = _load_config(args.config)
    out = _out_dir(args, config)
    instance, _, inst_dir, scen_path = _load_planning_inputs(args, config)
    plan_path = _resolve(args, config, "plan")
    if plan_path is None:
        raise ValueError("a --plan file is required")
    plan = load_plan(plan_path)

    scenario = int(_resolve(args, config, "scenario", 0))
    month = int(_resolve(args, config, "month", 1))
    year = int(_resolve(args, config, "year", 1))
    noise = float(_resolve(args, config, "noise", 0.0))
    seed = int(_resolve(args, config, "seed", 0))
    literal = bool(_resolve(args, config, "literal-sell-cap", False))
    if not 1 <= month <= 12:
        raise ValueError("--month is 1..12")
    if not 1 <= year <= instance.time.years:
        raise ValueError(f"--year is 1..{instance.time.years}")
    n_scen = instance.scenarios.n_scenarios
    if not 0 <= scenario < n_scen:
        raise ValueError(f"--scenario is 0..{n_scen - 1}")

    forecast = scenario_production(instance, scenario)
    production = forecast
    if noise > 0:
        rng = np.random.default_rng(seed)
        production = np.clip(
            forecast * (1.0 + noise * rng.standard_normal(forecast.shape)),
            0.0, 1.0)

    settings = {"instance": inst_dir, "scenarios": scen_path,
                "plan": plan_path, "scenario": scenario, "month": month,
                "year": year, "noise": noise, "seed": seed,
                "literal_sell_cap": literal}
    _write_manifest(out, "replay", settings)

    day = replay_day(instance, plan, production, month - 1, year - 1,
                     forecast=forecast if noise > 0 else None,
                     literal_sell_cap=literal)

    names = [s.name for s in instance.network.sites]
    with open(os.path.join(out, "replay.csv"), "w", newline="",
              encoding="utf-8") as fh:
        writer = csv.writer(fh)
        header = ["hour", "cost"]
        for col in ("buy_onee", "buy_nareva", "sell", "storage", "discharge"):
            header += [f"{col}[{n}]" for n in names]
        writer.writerow(header)
        for h in range(day.hour_cost.size):
            row = [h + 1, f"{day.hour_cost[h]:.6f}"]
            for col in ("buy_onee", "buy_nareva", "sell", "storage",
                        "discharge"):
                row += [f"{v:.6f}" for v in getattr(day, col)[:, h]]
            writer.writerow(row)
    plots.day_figure(day, os.path.join(out, "replay_day.png"))
    print(f"replayed scenario {scenario}, month {month}, year {year}: "
          f"day cost {day.cost:,.4f} MAD")
    return EXIT_OK


def cmd_crossval(args) -> int:
    from . import plots
    from .evaluation import (HyperGrid, SplitSpec, cross_validate,
                             write_crossval_csv)
    from .io import load_dataset

    config = _load_config(args.config)
    out = _out_dir(args, config)
    instance, _, inst_dir, _ = _load_planning_inputs(args, config,
                                                     need_scenarios=False)
    data_path = _resolve(args, config, "dataset")
    if data_path is None:
        raise ValueError("a --dataset file or directory is required")
    dataset = load_dataset(data_path)

    splits = SplitSpec(
        train=int(_resolve(args, config, "train", 20)),
        validation=int(_resolve(args, config, "validation", 4)),
        test=int(_resolve(args, config, "test", 4)),
        repetitions=int(_resolve(args, config, "reps", 10)),
        seed=int(_resolve(args, config, "seed", 0)),
    )
    gammas = _resolve(args, config, "gammas")
    deltas = _resolve(args, config, "deltas")
    if gammas is None and deltas is None:
        grid = HyperGrid.default()
    else:
        gtuples = ([tuple(float(v) for v in g.split(",")) for g in
                    gammas.split(";")] if gammas
                   else [(0.0, 0.0, 0.0), (1.0, 1.0, 1.0)])
        dvalues = ([float(d) for d in deltas.split(",")] if deltas
                   else [0.0, 0.001, 0.01, 0.1, 1.0])
        grid = HyperGrid.cross(gtuples, dvalues)
    shift = _resolve(args, config, "shift")
    select_on = _resolve(args, config, "select-on", "cost")
    k = int(_resolve(args, config, "k", 10))
    dro_method = _resolve(args, config, "dro-method", "cuts")

    settings = {"instance": inst_dir, "dataset": data_path,
                "splits": {"train": splits.train,
                           "validation": splits.validation,
                           "test": splits.test,
                           "repetitions": splits.repetitions,
                           "seed": splits.seed},
                "grid": [list(t) for t in grid.tuples], "k": k,
                "shift": shift, "select_on": select_on,
                "dro_method": dro_method}
    _write_manifest(out, "crossval", settings)

    report = cross_validate(instance, dataset, splits, grid, k_scenarios=k,
                            shift=None if shift is None else float(shift),
                            select_on=select_on, dro_method=dro_method)
    write_crossval_csv(report, os.path.join(out, "crossval.csv"))
    with open(os.path.join(out, "crossval.json"), "w", encoding="utf-8") as fh:
        json.dump(report.to_document(), fh, indent=1)
    plots.crossval_figures(report, out)

    g = report.selected
    print(f"selected gamma=({g[0]:g}, {g[1]:g}, {g[2]:g}) delta={g[3]:g} "
          f"on {report.select_on}")
    if report.test_cost_improvement is not None:
        mean, std = report.test_cost_improvement
        print(f"test-day cost improvement {mean:+.2f}% (stdev {std:.2f})")
    return EXIT_OK


def cmd_sweep(args) -> int:
    from . import plots
    from .evaluation import budget_sweep, write_sweep_csv

    config = _load_config(args.config)
    out = _out_dir(args, config)
    instance, stats, inst_dir, scen_path = _load_planning_inputs(args, config)
    budgets_raw = _resolve(args, config, "budgets")
    if budgets_raw is None:
        raise ValueError("a --budgets list is required, e.g. 0,1e9,2e9")
    if isinstance(budgets_raw, str):
        budgets = [float(b) for b in budgets_raw.split(",") if b.strip()]
    else:
        budgets = [float(b) for b in budgets_raw]
    gamma = _gamma_of(args, config)
    delta = float(_resolve(args, config, "delta", 0.0))
    dro_method = _resolve(args, config, "dro-method", "cuts")
    parallelism = int(_resolve(args, config, "parallelism", 1))

    settings = {"instance": inst_dir, "scenarios": scen_path,
                "budgets": budgets, "gamma": list(gamma), "delta": delta,
                "dro_method": dro_method, "parallelism": parallelism}
    _write_manifest(out, "sweep", settings)

    report = budget_sweep(instance, budgets, gamma=gamma, delta=delta,
                          stats=stats, dro_method=dro_method,
                          parallelism=parallelism)
    write_sweep_csv(report, os.path.join(out, "sweep.csv"))
    with open(os.path.join(out, "sweep.json"), "w", encoding="utf-8") as fh:
        json.dump(report.to_document(), fh, indent=1)
    plots.sweep_figures(report, out)

    for warning in report.warnings:
        print(f"warning: {warning}", file=sys.stderr)
    failed = [p for p in report.points if p.status.startswith("error")]
    if failed:
        for p in failed:
            print(f"error: E_SOLVER: budget {p.budget:g}: {p.status}",
                  file=sys.stderr)
        return EXIT_SOLVER
    print(f"swept {len(report.points)} budgets; "
          f"operating cost {report.points[0].operating_cost:,.2f} -> "
          f"{report.points[-1].operating_cost:,.2f} MAD")
    return EXIT_OK


def cmd_serve(args) -> int:
    import uvicorn

    from .service import create_app

    config = _load_config(args.config)
    port = int(_resolve(args, config, "port", 8000))
    store = _resolve(args, config, "store", "./helios-jobs")
    max_jobs = int(_resolve(args, config, "max-jobs", 2))
    queue_limit = int(_resolve(args, config, "queue-limit", 32))
    token = _resolve(args, config, "token")
    ui_dir = _resolve(args, config, "ui-dir")
    if ui_dir is None and os.path.isdir("frontend/dist"):
        ui_dir = "frontend/dist"
    app = create_app(store, max_concurrent_jobs=max_jobs,
                     queue_limit=queue_limit, token=token, ui_dir=ui_dir)
    print(f"serving on http://127.0.0.1:{port} (store: {store})")
    uvicorn.run(app, host="127.0.0.1", port=port, log_level="warning")
    return EXIT_OK


# --------------------------------------------------------------------------
# parser assembly
# --------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="helios",
                     description="Solar and battery capacity planning for an "
                                 "industrial energy network.")
    sub = parser.add_subparsers(dest="subcommand", required=True)

    def common(p):
        p.add_argument("--out-dir", help="directory for reports and figures")
        p.add_argument("--config", help="JSON file with defaults for any flag")
        p.add_argument("--seed", type=int)

    p = sub.add_parser("generate", help="write a synthetic instance")
    common(p)
    p.add_argument("--years", type=int)
    p.add_argument("--budget", type=float)
    p.add_argument("--demand-scale", type=float)
    p.add_argument("--peak-ratio", type=float)
    p.add_argument("--cloud-prob", type=float)
    p.add_argument("--feed-in-price", type=float)
    p.add_argument("--battery-cost-0", type=float)
    p.add_argument("--solar-cost-0", type=float)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("reduce", help="cluster recorded days into scenarios")
    common(p)
    p.add_argument("--dataset", help="capacity-factor CSV or instance directory")
    p.add_argument("--k", type=int, help="number of scenarios (default 10)")
    p.set_defaults(func=cmd_reduce)

    p = sub.add_parser("plan", help="solve one planning model")
    common(p)
    p.add_argument("--instance", help="instance directory")
    p.add_argument("--scenarios", help="scenario file (default: bundled)")
    p.add_argument("--budget", type=float, help="override the instance budget")
    p.add_argument("--gamma", nargs=3, type=float, metavar=("MAX", "C", "CLT"))
    p.add_argument("--delta", type=float, help="day-weight ambiguity radius")
    p.add_argument("--dro-method", choices=("cuts", "cone"))
    p.add_argument("--drop-nominal", action="store_const", const=True,
                   help="replace the nominal day by its worst case instead of "
                        "covering both")
    p.set_defaults(func=cmd_plan)

    p = sub.add_parser("replay", help="simulate one day hour by hour")
    common(p)
    p.add_argument("--instance", help="instance directory")
    p.add_argument("--scenarios", help="scenario file (default: bundled)")
    p.add_argument("--plan", help="investment file from `helios plan`")
    p.add_argument("--scenario", type=int, help="scenario index (default 0)")
    p.add_argument("--month", type=int, help="calendar month 1..12")
    p.add_argument("--year", type=int, help="horizon year 1..Y")
    p.add_argument("--noise", type=float,
                   help="relative production noise (default 0: replay the "
                        "forecast exactly)")
    p.add_argument("--literal-sell-cap", action="store_const", const=True,
                   help="cap sales by realized production history only")
    p.set_defaults(func=cmd_replay)

    p = sub.add_parser("crossval", help="tune gamma and delta by validation")
    common(p)
    p.add_argument("--instance", help="instance directory")
    p.add_argument("--dataset", help="capacity-factor CSV or instance directory")
    p.add_argument("--train", type=int, help="training days per month")
    p.add_argument("--validation", type=int, help="validation days per month")
    p.add_argument("--test", type=int, help="test days per month")
    p.add_argument("--reps", type=int, help="number of repetitions")
    p.add_argument("--k", type=int, help="scenarios fitted per repetition")
    p.add_argument("--gammas", help="semicolon-separated gamma triples, "
                                    "e.g. '0,0,0;1,0,1'")
    p.add_argument("--deltas", help="comma-separated delta values")
    p.add_argument("--shift", type=float,
                   help="scale validation/test days by this factor")
    p.add_argument("--select-on", choices=("cost", "co2"))
    p.add_argument("--dro-method", choices=("cuts", "cone"))
    p.set_defaults(func=cmd_crossval)

    p = sub.add_parser("sweep", help="solve across an ascending budget grid")
    common(p)
    p.add_argument("--instance", help="instance directory")
    p.add_argument("--scenarios", help="scenario file (default: bundled)")
    p.add_argument("--budgets", help="comma-separated budgets, e.g. 0,1e9,2e9")
    p.add_argument("--gamma", nargs=3, type=float, metavar=("MAX", "C", "CLT"))
    p.add_argument("--delta", type=float)
    p.add_argument("--dro-method", choices=("cuts", "cone"))
    p.add_argument("--parallelism", type=int)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("serve", help="start the HTTP planning service")
    common(p)
    p.add_argument("--port", type=int)
    p.add_argument("--store", help="job store directory")
    p.add_argument("--max-jobs", type=int, help="parallel solver workers")
    p.add_argument("--queue-limit", type=int, help="waiting jobs before 503")
    p.add_argument("--token", help="require this bearer token on /v1 routes")
    p.add_argument("--ui-dir", help="static files served under /ui")
    p.set_defaults(func=cmd_serve)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except OSError as exc:
        print(f"error: E_IO: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except ValueError as exc:
        print(f"error: E_VALIDATION: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except RuntimeError as exc:
        print(f"error: E_SOLVER: {exc}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    raise SystemExit(main())
