"""Worst-case solar coverage rows for the planning LP.

The planning model treats each scenario's capacity-factor profile as exact.
Here the profile may deviate from the centroid within a data-driven
polyhedron: a per-hour box, a bound on the hour-to-hour change of the
deviation (cyclic, hour 24 wrapping to hour 1), and a bound on the summed
daily deviation scaled like a standard deviation. Realized factors stay
nonnegative.

Robustifying every nodal balance row separately would price the box bound
alone (each hour pinned to its own worst case), so coverage is enforced in
aggregate: per (scenario, month), total delivered energy must meet total
demand, and total sales must respect the legal cap, for every admissible
profile. Each aggregated row carries a dual certificate - multipliers pricing
the mean profile and each face of the deviation polyhedron - whose value
lower-bounds the worst-case solar credit. By LP duality the best certificate
attains it exactly; `worst_case_production` recomputes that credit from
scratch and is the independent check on the algebra.

By default the nominal per-site rows stay in the model and the aggregated
rows are added on top, so the robust model is a restriction of the plain one
and collapses to it when all budgets are zero. With ``drop_nominal=True`` the
per-site balance and sell rows are removed instead, leaving only aggregate
coverage (cheaper, but dispatch is no longer meaningful per site).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.optimize import linprog

from .domain import HOURS, MONTHS, PlanningInstance
from .model import EQ, GE, LE, ModelInstance
from .saa import build_saa, site_profiles
from .scenarios import UncertaintyStatistics


class ExtendedScenariosUnsupported(ValueError):
    pass


class BudgetNotDerived(ValueError):
    pass


# certificate faces, one variable block each per (scenario, side):
#   mean     priced against the centroid profile, capped by effective capacity
#   box_hi   deviation at its upper per-hour bound
#   box_lo   deviation at its lower per-hour bound
#   step_hi  hour-to-hour increase at its bound
#   step_lo  hour-to-hour decrease at its bound
# plus a scalar `sum` face per scenario for the daily aggregate bound.
CERT_FACES = ("mean", "box_hi", "box_lo", "step_hi", "step_lo")
SIDES = ("demand", "sell")


@dataclass(frozen=True)
class UncertaintyBudget:
    """Scaling knobs for the deviation polyhedron, all relative to the
    statistics observed in the training data. Zero collapses a face to
    equality with the centroid."""

    gamma_max: float = 0.0
    gamma_c: float = 0.0
    gamma_clt: float = 0.0

    def __post_init__(self):
        for name in ("gamma_max", "gamma_c", "gamma_clt"):
            if getattr(self, name) < 0.0:
                raise ValueError(f"{name} must be nonnegative")

    def as_tuple(self) -> tuple[float, float, float]:
        return (self.gamma_max, self.gamma_c, self.gamma_clt)


@dataclass(frozen=True)
class UncertaintyBounds:
    """Explicit deviation polyhedron: |u| <= hour_bound per hour, change of u
    between consecutive hours within +-step_bound (cyclic), and the summed
    deviation over (site, hour, year) within +-sum_bound per scenario.
    Realizations additionally keep centroid + u >= 0."""

    hour_bound: np.ndarray   # (24, D)
    step_bound: np.ndarray   # (24, D)
    sum_bound: np.ndarray    # (D,)

    def __post_init__(self):
        for name in ("hour_bound", "step_bound", "sum_bound"):
            if np.asarray(getattr(self, name)).min(initial=0.0) < 0.0:
                raise ValueError(f"{name} has negative entries")


def build_uncertainty_set(stats: UncertaintyStatistics, budget: UncertaintyBudget,
                          *, sites: int, years: int) -> UncertaintyBounds:
    """Scale observed deviation statistics into polyhedron bounds. The
    aggregate bound grows with the square root of the number of summed terms
    (sites x years x months x hours), like a standard deviation of a sum."""
    scale = np.sqrt(float(sites * years * MONTHS * HOURS))
    return UncertaintyBounds(
        hour_bound=budget.gamma_max * stats.max_dev,
        step_bound=budget.gamma_c * stats.smooth_dev,
        sum_bound=budget.gamma_clt * scale * stats.daily_sigma,
    )


def worst_case_production(vbar: np.ndarray, weight: np.ndarray,
                          hour_bound: np.ndarray, step_bound: np.ndarray,
                          sum_bound: float) -> tuple[float, np.ndarray]:
    """Minimize sum_{n,h,y} weight[n,y] * v[n,h,y] over admissible profiles.

    vbar (N, H) is the mean profile; v = vbar + u with u inside the deviation
    polyhedron and v >= 0. Returns (value, v) with v the worst-case
    realization. Always feasible (u = 0 qualifies).
    """
    vbar = np.asarray(vbar, dtype=float)
    weight = np.asarray(weight, dtype=float)
    n, hours = vbar.shape
    years = weight.shape[1]
    size = n * hours * years

    def vid(i, h, y):
        return (i * hours + h) * years + y

    c = np.broadcast_to(weight[:, None, :], (n, hours, years)).reshape(size)
    lo = np.maximum(-hour_bound[None, :, None], -vbar[:, :, None])
    lo = np.broadcast_to(lo, (n, hours, years)).reshape(size)
    hi = np.broadcast_to(hour_bound[None, :, None], (n, hours, years)).reshape(size)

    rows, cols, vals, rhs = [], [], [], []

    def le_row(cc, vv, b):
        k = len(rhs)
        rows.extend([k] * len(cc))
        cols.extend(cc)
        vals.extend(vv)
        rhs.append(b)

    for i in range(n):
        for y in range(years):
            for h in range(hours):
                prev = (h - 1) % hours
                a, b = vid(i, h, y), vid(i, prev, y)
                le_row([a, b], [1.0, -1.0], step_bound[h])
                le_row([a, b], [-1.0, 1.0], step_bound[h])
    all_ids = np.arange(size)
    le_row(all_ids, np.ones(size), sum_bound)
    le_row(all_ids, -np.ones(size), sum_bound)

    a_ub = sp.coo_matrix((vals, (rows, cols)), shape=(len(rhs), size)).tocsr()
    res = linprog(c, A_ub=a_ub, b_ub=np.array(rhs),
                  bounds=np.column_stack([lo, hi]), method="highs")
    if not res.success:
        raise BudgetNotDerived(f"deviation polyhedron malformed: {res.message}")
    u = res.x.reshape(n, hours, years)
    v = vbar[:, :, None] + u
    value = float((c * res.x).sum() + (weight.sum(axis=1) * vbar.sum(axis=1)).sum())
    return value, v


def max_certificate(vbar: np.ndarray, weight: np.ndarray,
                    hour_bound: np.ndarray, step_bound: np.ndarray,
                    sum_bound: float) -> float:
    """Best certificate value for a fixed plan: maximize the priced lower
    bound on worst-case production subject to the stationarity rows. Equals
    `worst_case_production` on the same data by LP duality."""
    vbar = np.asarray(vbar, dtype=float)
    weight = np.asarray(weight, dtype=float)
    n, hours = vbar.shape
    years = weight.shape[1]
    size = n * hours * years
    # variable layout: [mean, box_hi, box_lo, step_hi, step_lo] blocks of
    # `size`, then the scalar sum face
    n_var = 5 * size + 1

    cap = np.broadcast_to(weight[:, None, :], (n, hours, years)).reshape(size)
    vb = np.broadcast_to(vbar[:, :, None], (n, hours, years)).reshape(size)
    hb = np.broadcast_to(hour_bound[None, :, None], (n, hours, years)).reshape(size)
    sb = np.broadcast_to(step_bound[None, :, None], (n, hours, years)).reshape(size)

    c = np.concatenate([-vb, hb, hb, sb, sb, [sum_bound]])  # minimize -value

    idx = np.arange(size).reshape(n, hours, years)
    nxt = np.roll(idx, -1, axis=1).reshape(size)
    base = np.arange(size)
    rows = np.concatenate([base] * 7)
    cols = np.concatenate([base, size + base, 2 * size + base,
                           3 * size + base, 3 * size + nxt,
                           4 * size + base, 4 * size + nxt])
    vals = np.concatenate([np.ones(size), np.ones(size), -np.ones(size),
                           np.ones(size), -np.ones(size),
                           -np.ones(size), np.ones(size)])
    rows = np.concatenate([rows, base])
    cols = np.concatenate([cols, np.full(size, 5 * size)])
    vals = np.concatenate([vals, -np.ones(size)])
    a_eq = sp.coo_matrix((vals, (rows, cols)), shape=(size, n_var)).tocsr()

    lo = np.concatenate([np.full(size, -np.inf), np.zeros(4 * size + 1)])
    hi = np.concatenate([cap, np.full(4 * size + 1, np.inf)])
    res = linprog(c, A_eq=a_eq, b_eq=np.zeros(size),
                  bounds=np.column_stack([lo, hi]), method="highs")
    if not res.success:
        raise BudgetNotDerived(f"certificate problem failed: {res.message}")
    return -float(res.fun)


def build_robust(instance: PlanningInstance, stats: UncertaintyStatistics,
                 budget: UncertaintyBudget | tuple[float, float, float],
                 *, drop_nominal: bool = False) -> ModelInstance:
    """Planning LP plus aggregated worst-case coverage for the given budget."""
    if not isinstance(budget, UncertaintyBudget):
        budget = UncertaintyBudget(*budget)
    bounds = build_uncertainty_set(stats, budget, sites=instance.n_sites,
                                   years=instance.time.years)
    model = build_saa(instance)
    add_robust_rows(model, instance, bounds, drop_nominal=drop_nominal)
    return model


def add_robust_rows(model: ModelInstance, instance: PlanningInstance,
                    bounds: UncertaintyBounds, *, drop_nominal: bool = False) -> None:
    """Attach certificate variables and aggregated coverage rows to a built
    planning model. Adds 2 * D * (5 * N * H * M * Y + 1) variables; rows are
    the two aggregated rows per (scenario, month) plus, per certificate
    entry, one stationarity row and one capacity-cap row."""
    scen = instance.scenarios
    if scen.day_multiplier != 1:
        raise ExtendedScenariosUnsupported(
            "aggregated coverage assumes 24-hour scenario days; "
            "build from a plain scenario set")
    net, costs = instance.network, instance.costs
    n, years, months = instance.n_sites, instance.time.years, instance.time.months
    n_scen, hours = scen.n_scenarios, scen.hours
    if bounds.hour_bound.shape != (hours, n_scen):
        raise BudgetNotDerived(
            f"bounds shaped {bounds.hour_bound.shape} do not match "
            f"({hours}, {n_scen}); derive them from this scenario set")

    shape = (n_scen, n, hours, months, years)
    sides = {}
    for side in SIDES:
        blocks = {face: model.add_block(
            f"wc_{side}_{face}", shape,
            lb=-np.inf if face == "mean" else 0.0) for face in CERT_FACES}
        blocks["sum"] = model.add_block(f"wc_{side}_sum", (n_scen,))
        sides[side] = blocks

    zbar = model.blocks["solar_eff"]
    ramp = costs.solar_ramp(years)
    v_site = site_profiles(scen, net)  # (D, H, N)
    nxt = np.roll(np.arange(hours), -1)

    for side in SIDES:
        blk = sides[side]
        mean, box_hi, box_lo = blk["mean"], blk["box_hi"], blk["box_lo"]
        step_hi, step_lo, agg = blk["step_hi"], blk["step_lo"], blk["sum"]
        for d in range(n_scen):
            for m in range(months):
                for y in range(years):
                    for i in range(n):
                        for h in range(hours):
                            model.add_row(
                                [mean.ids[d, i, h, m, y], zbar.ids[i, y]],
                                [1.0, -ramp[y]], LE, 0.0)
                            model.add_row(
                                [mean.ids[d, i, h, m, y],
                                 box_hi.ids[d, i, h, m, y],
                                 box_lo.ids[d, i, h, m, y],
                                 step_hi.ids[d, i, h, m, y],
                                 step_hi.ids[d, i, nxt[h], m, y],
                                 step_lo.ids[d, i, h, m, y],
                                 step_lo.ids[d, i, nxt[h], m, y],
                                 agg.ids[d]],
                                [1.0, 1.0, -1.0, 1.0, -1.0, -1.0, 1.0, -1.0],
                                EQ, 0.0)

    eta = np.array([a.efficiency for a in net.arcs])
    loss = eta - 1.0
    lossy = loss != 0.0
    f_pos, f_neg = model.blocks["flow_pos"], model.blocks["flow_neg"]
    r_blk = model.blocks["discharge"]
    x_o, x_n = model.blocks["buy_onee"], model.blocks["buy_nareva"]
    w_blk = model.blocks["sell"]
    demand = instance.demand.values
    neg_part = np.maximum(0.0, -demand)
    beta = costs.sell_fraction
    hb, sb, tb = bounds.hour_bound, bounds.step_bound, bounds.sum_bound
    cert_shape = (n, hours, years)

    def cert_terms(blk, d, m, sign):
        """(cols, vals) of the certificate's priced faces in a coverage row."""
        vb = np.broadcast_to(v_site[d].T[:, :, None], cert_shape)
        box = np.broadcast_to(hb[:, d][None, :, None], cert_shape)
        step = np.broadcast_to(sb[:, d][None, :, None], cert_shape)
        cols = [blk["mean"].ids[d][:, :, m, :].ravel()]
        vals = [sign * vb.ravel()]
        for face in ("box_hi", "box_lo"):
            cols.append(blk[face].ids[d][:, :, m, :].ravel())
            vals.append(-sign * box.ravel())
        for face in ("step_hi", "step_lo"):
            cols.append(blk[face].ids[d][:, :, m, :].ravel())
            vals.append(-sign * step.ravel())
        cols.append([blk["sum"].ids[d]])
        vals.append([-sign * tb[d]])
        return cols, vals

    for d in range(n_scen):
        for m in range(months):
            # delivered energy across all sites, hours and years of the month
            cols, vals = [], []
            if lossy.any():
                ids = f_pos.ids[lossy][:, :, d, m, :]
                coef = np.broadcast_to(loss[lossy][:, None, None], ids.shape)
                cols += [ids.ravel(), f_neg.ids[lossy][:, :, d, m, :].ravel()]
                vals += [coef.ravel(), coef.ravel()]
            ids = r_blk.ids[:, :, d, m, :]
            cols.append(ids.ravel())
            vals.append(np.full(ids.size, costs.discharge_rate))
            for blk, sign in ((x_o, 1.0), (x_n, 1.0), (w_blk, -1.0)):
                cols.append(blk.ids[:, :, d, m, :].ravel())
                vals.append(np.full(ids.size, sign))
            c2, v2 = cert_terms(sides["demand"], d, m, 1.0)
            cols = np.concatenate(cols + c2)
            vals = np.concatenate(vals + v2)
            live = vals != 0.0
            model.add_row(cols[live], vals[live], GE,
                          float(demand[:, :, m, :].sum()),
                          label=f"robust_demand[{d},{m}]")

            cols = [w_blk.ids[:, :, d, m, :].ravel()]
            vals = [np.ones(ids.size)]
            c2, v2 = cert_terms(sides["sell"], d, m, beta)
            cols = np.concatenate(cols + c2)
            vals = np.concatenate(vals + v2)
            live = vals != 0.0
            model.add_row(cols[live], vals[live], LE,
                          beta * float(neg_part[:, :, m, :].sum()),
                          label=f"robust_sell[{d},{m}]")

    model.meta["robust"] = {
        "hour_bound": hb, "step_bound": sb, "sum_bound": tb,
        "site_profile": v_site, "ramp": ramp, "drop_nominal": drop_nominal,
    }
    if drop_nominal:
        spans = model.meta["rows"]
        drop = np.concatenate([np.arange(*spans["balance"]),
                               np.arange(*spans["sell_cap"])])
        model.delete_rows(drop)
        model.meta["rows"] = {"balance": None, "sell_cap": None}


def certificate_value(model: ModelInstance, x: np.ndarray, side: str,
                      scenario: int, month: int) -> float:
    """Value of the solved certificate in the given coverage row: the lower
    bound on worst-case solar credit the solution actually carries. At most
    the oracle value; equal to it when the row binds at an optimum."""
    info = model.meta["robust"]
    blk = {face: model.blocks[f"wc_{side}_{face}"] for face in CERT_FACES}
    d, m = scenario, month
    vb = info["site_profile"][d].T[:, :, None]  # (N, H, 1)
    val = float((vb * x[blk["mean"].ids[d][:, :, m, :]]).sum())
    box = info["hour_bound"][:, d][None, :, None]
    step = info["step_bound"][:, d][None, :, None]
    for face, bound in (("box_hi", box), ("box_lo", box),
                        ("step_hi", step), ("step_lo", step)):
        val -= float((bound * x[blk[face].ids[d][:, :, m, :]]).sum())
    val -= float(info["sum_bound"][d] * x[model.blocks[f"wc_{side}_sum"].ids[d]])
    return val
