"""Single-day operation of a fixed investment plan.

The planning model prices each representative day with full knowledge of its
capacity factors.  Operating the plan for real happens hour by hour: at each
hour the remaining day is re-optimised against current conditions and a
forecast, the first hour of the result is implemented, and the rest is
discarded.  This module builds that remaining-day LP and runs the loop.

Conventions shared with the planning model: storage is cyclic over the day
(the closing level must match the opening level, so the optimiser cannot
profit by draining the batteries in the last hour), sales are capped at a
fraction of the day's solar production plus on-site cogeneration, and the
year's degradation ramp is folded into the effective solar capacity.

The daily sell cap needs a day total, which mid-day is part history and part
guess.  By default the builder fills the unknown hours with the forecast;
with ``literal_sell_cap=True`` it counts realised hours only, which is safe
but forbids any sales in the first hour of the day.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .domain import HOURS, InvestmentPlan, PlanningInstance
from .model import EQ, GE, LE, ModelInstance
from .saa import site_profiles
from .solvers import solve


class DispatchInfeasible(RuntimeError):
    """The remaining-day model has no feasible operation, e.g. realised
    production plus purchase capacity cannot cover demand."""


@dataclass
class DayHistory:
    """Realised quantities for the hours already operated."""

    storage_open: np.ndarray   # (N,) level at the start of the day
    storage_now: np.ndarray    # (N,) level entering the current hour
    sold: np.ndarray           # (N,) energy sold so far
    sell_base: np.ndarray      # (N,) realised production + cogeneration so far


@dataclass
class DayDispatch:
    """One realised day of operation and its cost (undiscounted MAD)."""

    flow_pos: np.ndarray   # (A, 24)
    flow_neg: np.ndarray   # (A, 24)
    storage: np.ndarray    # (N, 25), opening level per hour plus closing level
    discharge: np.ndarray  # (N, 24)
    buy_onee: np.ndarray   # (N, 24)
    buy_nareva: np.ndarray  # (N, 24)
    sell: np.ndarray       # (N, 24)
    hour_cost: np.ndarray  # (24,)

    @property
    def cost(self) -> float:
        return float(self.hour_cost.sum())


def scenario_production(instance: PlanningInstance, scenario: int) -> np.ndarray:
    """Capacity factors of one attached scenario on network sites, (N, 24)."""
    scen = instance.scenarios
    if scen is None:
        raise ValueError("instance has no attached scenario set")
    return site_profiles(scen, instance.network)[scenario].T


def _day_inputs(instance: PlanningInstance, plan: InvestmentPlan,
                month: int, year: int):
    net, costs, t = instance.network, instance.costs, instance.tariffs
    ramp = costs.solar_ramp(instance.time.years)[year]
    return {
        "eta": np.array([a.efficiency for a in net.arcs]),
        "cap_kw": np.array([a.capacity_kw for a in net.arcs]),
        "rent": np.stack([a.rent_price[:, month] for a in net.arcs]),
        "arcs_in": [net.arcs_in(s.name) for s in net.sites],
        "arcs_out": [net.arcs_out(s.name) for s in net.sites],
        "price_o": t.price_onee[:, :, month],
        "price_n": t.price_nareva[:, :, month],
        "price_w": t.feed_in[:, :, month],
        "cap_o": t.onee_cap,
        "cap_n": t.nareva_cap,
        "nareva_ok": np.array([s.nareva_allowed for s in net.sites]),
        "demand": instance.demand.values[:, :, month, year],
        "z_eff": plan.effective_solar(costs.solar_decay)[:, year] * ramp,
        "b_eff": plan.effective_battery(costs.battery_decay)[:, year],
    }


def build_day_dispatch(instance: PlanningInstance, plan: InvestmentPlan,
                       production: np.ndarray, month: int, year: int, *,
                       start_hour: int = 0, history: DayHistory | None = None,
                       forecast: np.ndarray | None = None,
                       literal_sell_cap: bool = False) -> ModelInstance:
    """LP over hours ``start_hour``..23 of one day for a fixed plan.

    ``production`` holds the day's capacity factors per (site, hour); the
    current hour is priced with it, later hours with ``forecast`` (defaults
    to ``production``, i.e. a fully known day).  ``history`` must be given
    whenever ``start_hour`` is positive.
    """
    n = instance.n_sites
    n_arcs = len(instance.network.arcs)
    t0, rem = start_hour, HOURS - start_hour
    if production.shape != (n, HOURS):
        raise ValueError(f"production must be ({n}, {HOURS})")
    if (history is None) != (t0 == 0):
        raise ValueError("history is required exactly when start_hour > 0")
    if forecast is None:
        forecast = production
    day = _day_inputs(instance, plan, month, year)

    # capacity factors the optimiser plans against: the current hour as
    # observed, later hours as forecast
    v_plan = forecast[:, t0:].copy()
    v_plan[:, 0] = production[:, t0]

    model = ModelInstance("day")
    f_pos = model.add_block("flow_pos", (n_arcs, rem))
    f_neg = model.add_block("flow_neg", (n_arcs, rem))
    s = model.add_block("storage", (n, rem + 1))
    r = model.add_block("discharge", (n, rem), lb=-np.inf)
    x_o = model.add_block("buy_onee", (n, rem))
    x_n = model.add_block("buy_nareva", (n, rem))
    w = model.add_block("sell", (n, rem))

    model.ub[x_o.ids] = np.broadcast_to(day["cap_o"][t0:], (n, rem))
    model.ub[x_n.ids] = np.where(day["nareva_ok"][:, None],
                                 day["cap_n"][None, t0:], 0.0)
    model.ub[s.ids[:, :rem]] = day["b_eff"][:, None]

    model.obj[f_pos.ids] = day["rent"][:, t0:]
    model.obj[f_neg.ids] = day["rent"][:, t0:]
    model.obj[x_o.ids] = day["price_o"][:, t0:]
    model.obj[x_n.ids] = day["price_n"][:, t0:]
    model.obj[w.ids] = -day["price_w"][:, t0:]

    eta = day["eta"]
    big_r = instance.costs.discharge_rate
    for i in range(n):
        for j in range(rem):
            cols = [r.ids[i, j], x_o.ids[i, j], x_n.ids[i, j], w.ids[i, j]]
            vals = [big_r, 1.0, 1.0, -1.0]
            for a in day["arcs_in"][i]:
                cols += [f_pos.ids[a, j], f_neg.ids[a, j]]
                vals += [eta[a], -1.0]
            for a in day["arcs_out"][i]:
                cols += [f_pos.ids[a, j], f_neg.ids[a, j]]
                vals += [-1.0, eta[a]]
            rhs = day["demand"][i, t0 + j] - v_plan[i, j] * day["z_eff"][i]
            model.add_row(cols, vals, GE, rhs)

    # daily sell cap: history plus, unless literal, the planned remainder
    sell_fr = instance.costs.sell_fraction
    neg = np.maximum(0.0, -day["demand"])
    for i in range(n):
        base = 0.0 if history is None else float(history.sell_base[i])
        sold = 0.0 if history is None else float(history.sold[i])
        if not literal_sell_cap:
            base += float(v_plan[i].sum() * day["z_eff"][i] + neg[i, t0:].sum())
        model.add_row(w.ids[i], np.ones(rem), LE,
                      sell_fr * base - sold, label=f"sell_cap[{i}]")

    psi = instance.costs.retention
    for i in range(n):
        for j in range(rem):
            model.add_row([s.ids[i, j + 1], s.ids[i, j], r.ids[i, j]],
                          [1.0, -psi, 1.0], EQ, 0.0)
        if history is None:
            model.add_row([s.ids[i, rem], s.ids[i, 0]], [1.0, -1.0], EQ, 0.0)
        else:
            model.lb[s.ids[i, 0]] = model.ub[s.ids[i, 0]] = history.storage_now[i]
            model.lb[s.ids[i, rem]] = model.ub[s.ids[i, rem]] = history.storage_open[i]

    for a in range(n_arcs):
        for j in range(rem):
            model.add_row([f_pos.ids[a, j], f_neg.ids[a, j]],
                          [1.0, 1.0], LE, day["cap_kw"][a])
    return model


def day_operating_cost(instance: PlanningInstance, plan: InvestmentPlan,
                       production: np.ndarray, month: int, year: int, *,
                       backend: str | None = None) -> float:
    """Cost of operating the plan through one fully known day (one LP)."""
    model = build_day_dispatch(instance, plan, production, month, year)
    out = solve(model, backend=backend)
    if out.status != "optimal":
        raise DispatchInfeasible(
            f"day model for month {month}, year {year}: {out.status}")
    return out.objective


def replay_day(instance: PlanningInstance, plan: InvestmentPlan,
               production: np.ndarray, month: int, year: int, *,
               forecast: np.ndarray | None = None,
               literal_sell_cap: bool = False,
               backend: str | None = None) -> DayDispatch:
    """Operate one day hour by hour and return what actually happened.

    Each hour solves the remaining-day model (current hour as realised in
    ``production``, later hours from ``forecast``), implements its first
    hour, and rolls forward.  Costs are accrued at the realised decisions,
    so with ``forecast == production`` the total equals the one-shot day
    optimum.
    """
    n = instance.n_sites
    n_arcs = len(instance.network.arcs)
    day = _day_inputs(instance, plan, month, year)
    neg = np.maximum(0.0, -day["demand"])
    psi = instance.costs.retention

    out_arrays = DayDispatch(
        flow_pos=np.zeros((n_arcs, HOURS)), flow_neg=np.zeros((n_arcs, HOURS)),
        storage=np.zeros((n, HOURS + 1)), discharge=np.zeros((n, HOURS)),
        buy_onee=np.zeros((n, HOURS)), buy_nareva=np.zeros((n, HOURS)),
        sell=np.zeros((n, HOURS)), hour_cost=np.zeros(HOURS))
    history = None
    for t in range(HOURS):
        model = build_day_dispatch(
            instance, plan, production, month, year, start_hour=t,
            history=history, forecast=forecast,
            literal_sell_cap=literal_sell_cap)
        res = solve(model, backend=backend)
        if res.status != "optimal":
            raise DispatchInfeasible(
                f"hour {t} of month {month}, year {year}: {res.status}")
        fp = res.block(model, "flow_pos")[:, 0]
        fn = res.block(model, "flow_neg")[:, 0]
        st = res.block(model, "storage")[:, 0]
        rd = res.block(model, "discharge")[:, 0]
        bo = res.block(model, "buy_onee")[:, 0]
        bn = res.block(model, "buy_nareva")[:, 0]
        sl = res.block(model, "sell")[:, 0]
        out_arrays.flow_pos[:, t] = fp
        out_arrays.flow_neg[:, t] = fn
        out_arrays.storage[:, t] = st
        out_arrays.discharge[:, t] = rd
        out_arrays.buy_onee[:, t] = bo
        out_arrays.buy_nareva[:, t] = bn
        out_arrays.sell[:, t] = sl
        out_arrays.hour_cost[t] = (
            day["rent"][:, t] @ (fp + fn)
            + day["price_o"][:, t] @ bo + day["price_n"][:, t] @ bn
            - day["price_w"][:, t] @ sl)
        opening = st if t == 0 else history.storage_open
        history = DayHistory(
            storage_open=opening,
            storage_now=psi * st - rd,
            sold=(0 if t == 0 else history.sold) + sl,
            sell_base=((0 if t == 0 else history.sell_base)
                       + production[:, t] * day["z_eff"] + neg[:, t]))
    out_arrays.storage[:, HOURS] = history.storage_now
    return out_arrays
