"""Builder for the multi-year sample-average planning LP.

The model decides battery and solar installations per (site, year) under a
discounted budget, and a full dispatch (flows, storage, purchases, sales) per
(hour, scenario, month, year). Scenario weights enter the objective; solar
output enters nodal balance as centroid capacity factor times effective
installed capacity, with a linear year-over-year degradation ramp applied to
the centroids.

Extended scenario sets (multi-day) are supported: the battery cycle closes
over the full extended day, the daily sell cap applies per 24-hour block, and
month-day weights are divided by the block count so expected totals match.
"""

from __future__ import annotations

import numpy as np

from .domain import (HOURS, DispatchSchedule, EnergyNetwork, InvestmentPlan,
                     PlanningInstance, ValidationReport)
from .model import EQ, GE, LE, ModelInstance
from .scenarios import ReducedScenarioSet


class MissingScenarioSet(ValueError):
    pass


class InconsistentDimensions(ValueError):
    pass


OPERATIONAL_BLOCKS = ("flow_pos", "flow_neg", "storage", "discharge",
                      "buy_onee", "buy_nareva", "sell")


def site_profiles(scen: ReducedScenarioSet, network: EnergyNetwork) -> np.ndarray:
    """Centroid capacity factors mapped onto network sites, shape
    (n_scenarios, hours, n_sites); zero where the set carries no site data."""
    out = np.zeros((scen.n_scenarios, scen.hours, len(network.sites)))
    if scen.site_names is not None:
        for col, name in enumerate(scen.site_names):
            out[:, :, network.site_index(name)] = scen.centroids[:, :, col]
    return out


def build_saa(instance: PlanningInstance) -> ModelInstance:
    """Assemble the planning LP for the instance's attached scenario set."""
    scen = instance.scenarios
    if scen is None:
        raise MissingScenarioSet("attach a reduced scenario set before building")
    net, time, costs = instance.network, instance.time, instance.costs
    n, years, months = instance.n_sites, time.years, time.months
    n_arcs = len(net.arcs)
    n_scen, hours = scen.n_scenarios, scen.hours
    blocks_per_day = scen.day_multiplier
    if scen.weights.shape != (n_scen, months):
        raise InconsistentDimensions(
            f"weights shape {scen.weights.shape} does not match ({n_scen}, {months})")
    if instance.demand.values.shape != (n, HOURS, months, years):
        raise InconsistentDimensions(
            f"demand shape {instance.demand.values.shape} does not match instance")

    model = ModelInstance("plan")
    b = model.add_block("battery", (n, years))
    z = model.add_block("solar", (n, years))
    zbar = model.add_block("solar_eff", (n, years))
    bcap = model.add_block("battery_eff", (n, years))
    ops_shape = (n, hours, n_scen, months, years)
    f_pos = model.add_block("flow_pos", (n_arcs, hours, n_scen, months, years))
    f_neg = model.add_block("flow_neg", (n_arcs, hours, n_scen, months, years))
    s = model.add_block("storage", ops_shape)
    r = model.add_block("discharge", ops_shape, lb=-np.inf)
    x_o = model.add_block("buy_onee", ops_shape)
    x_n = model.add_block("buy_nareva", ops_shape)
    w = model.add_block("sell", ops_shape)

    for i, site in enumerate(net.sites):
        if not site.solar_allowed:
            model.ub[z.ids[i]] = 0.0

    hod = np.arange(hours) % HOURS  # hour of day, for tariff/demand lookup
    t = instance.tariffs
    cap_o = t.onee_cap[hod]
    cap_n = t.nareva_cap[hod]
    for i, site in enumerate(net.sites):
        model.ub[x_o.ids[i]] = np.broadcast_to(
            cap_o[:, None, None, None], ops_shape[1:])
        if site.nareva_allowed:
            model.ub[x_n.ids[i]] = np.broadcast_to(
                cap_n[:, None, None, None], ops_shape[1:])
        else:
            model.ub[x_n.ids[i]] = 0.0

    v_site = site_profiles(scen, net)
    ramp = costs.solar_ramp(years)

    disc = costs.discount ** np.arange(1, years + 1)
    salvage = costs.discount ** years
    d_my = time.days_in_month.astype(float)
    p_dm = scen.weights
    # expected-day weight of one (d, m, y) slice of dispatch
    weight = (disc[None, None, :] * d_my[None, :, :] * p_dm[:, :, None]) / blocks_per_day

    # objective: investment with salvage, rent, energy
    model.obj[b.ids] = costs.battery_cost[None, :] * (disc - salvage)[None, :]
    model.obj[z.ids] = costs.solar_cost[None, :] * (disc - salvage)[None, :]

    rent = np.stack([a.rent_price for a in net.arcs])        # (A, 24, 12)
    rent_w = rent[:, hod, :][:, :, None, :, None] * weight[None, None, :, :, :]
    model.obj[f_pos.ids] = rent_w
    model.obj[f_neg.ids] = rent_w

    price_o = t.price_onee[:, hod, :][:, :, None, :, None] * weight[None, None]
    price_n = t.price_nareva[:, hod, :][:, :, None, :, None] * weight[None, None]
    price_w = t.feed_in[:, hod, :][:, :, None, :, None] * weight[None, None]
    model.obj[x_o.ids] = price_o
    model.obj[x_n.ids] = price_n
    model.obj[w.ids] = -price_w

    # budget
    bud_cols = np.concatenate([b.ids.reshape(-1), z.ids.reshape(-1)])
    bud_vals = np.concatenate(
        [np.tile(costs.battery_cost * disc, n), np.tile(costs.solar_cost * disc, n)])
    model.add_row(bud_cols, bud_vals, LE, costs.budget, label="budget")

    # effective-capacity definitions: zbar = sum xi^(y-y') z, bcap likewise
    for i in range(n):
        for y in range(years):
            ages = y - np.arange(y + 1)
            model.add_row(
                np.concatenate([[zbar.ids[i, y]], z.ids[i, : y + 1]]),
                np.concatenate([[1.0], -costs.solar_decay ** ages]),
                EQ, 0.0)
            model.add_row(
                np.concatenate([[bcap.ids[i, y]], b.ids[i, : y + 1]]),
                np.concatenate([[1.0], -costs.battery_decay ** ages]),
                EQ, 0.0)

    arcs_in = [net.arcs_in(site.name) for site in net.sites]
    arcs_out = [net.arcs_out(site.name) for site in net.sites]
    eta = np.array([a.efficiency for a in net.arcs])
    demand = instance.demand.values
    big_r = costs.discharge_rate

    balance_start = model.n_rows
    for i in range(n):
        a_in, a_out = arcs_in[i], arcs_out[i]
        base_cols = [r.ids[i], x_o.ids[i], x_n.ids[i], w.ids[i]]
        base_vals = [big_r, 1.0, 1.0, -1.0]
        for d in range(n_scen):
            for m in range(months):
                for y in range(years):
                    v_eff = v_site[d, :, i] * ramp[y]
                    for h in range(hours):
                        cols = [blk[h, d, m, y] for blk in base_cols]
                        vals = list(base_vals)
                        for a in a_in:
                            cols += [f_pos.ids[a, h, d, m, y], f_neg.ids[a, h, d, m, y]]
                            vals += [eta[a], -1.0]
                        for a in a_out:
                            cols += [f_pos.ids[a, h, d, m, y], f_neg.ids[a, h, d, m, y]]
                            vals += [-1.0, eta[a]]
                        if v_eff[h] != 0.0:
                            cols.append(zbar.ids[i, y])
                            vals.append(v_eff[h])
                        model.add_row(cols, vals, GE, demand[i, hod[h], m, y])

    # daily sell cap, one row per 24-hour block
    sell_start = model.n_rows
    sell_fr = costs.sell_fraction
    neg_part = np.maximum(0.0, -demand)  # (N, 24, M, Y)
    for i in range(n):
        for d in range(n_scen):
            for m in range(months):
                for y in range(years):
                    for blk in range(blocks_per_day):
                        span = np.arange(blk * HOURS, (blk + 1) * HOURS)
                        cols = list(w.ids[i, span, d, m, y])
                        vals = [1.0] * HOURS
                        v_sum = float(v_site[d, span, i].sum() * ramp[y])
                        if v_sum != 0.0:
                            cols.append(zbar.ids[i, y])
                            vals.append(-sell_fr * v_sum)
                        rhs = sell_fr * float(neg_part[i, :, m, y].sum())
                        model.add_row(cols, vals, LE, rhs)
    model.meta["rows"] = {"balance": (balance_start, sell_start),
                          "sell_cap": (sell_start, model.n_rows)}

    # battery dynamics with cyclic closure, and capacity rows
    psi = costs.retention
    for i in range(n):
        for d in range(n_scen):
            for m in range(months):
                for y in range(years):
                    s_ids = s.ids[i, :, d, m, y]
                    r_ids = r.ids[i, :, d, m, y]
                    for h in range(hours):
                        nxt = (h + 1) % hours
                        model.add_row(
                            [s_ids[nxt], s_ids[h], r_ids[h]],
                            [1.0, -psi, 1.0], EQ, 0.0)
                        model.add_row(
                            [s_ids[h], bcap.ids[i, y]], [1.0, -1.0], LE, 0.0)

    for a in range(n_arcs):
        k = net.arcs[a].capacity_kw
        fp = f_pos.ids[a].reshape(-1)
        fn = f_neg.ids[a].reshape(-1)
        for j in range(fp.size):
            model.add_row([fp[j], fn[j]], [1.0, 1.0], LE, k)

    _tag_metadata(model, instance, scen, v_site)
    return model


def _tag_metadata(model: ModelInstance, instance: PlanningInstance,
                  scen: ReducedScenarioSet, v_site: np.ndarray) -> None:
    """Record per-(scenario, month, year) discounted day costs and the
    objective component groups, for reuse by the ambiguity-set builder,
    breakdowns and evaluation."""
    net, time, costs = instance.network, instance.time, instance.costs
    n, years, months = instance.n_sites, time.years, time.months
    n_scen, hours = scen.n_scenarios, scen.hours
    hod = np.arange(hours) % HOURS
    disc = costs.discount ** np.arange(1, years + 1)
    t = instance.tariffs

    ids, coefs, block = [], [], []
    shape = (hours, n_scen, months, years)
    block_idx = (
        np.arange(n_scen)[None, :, None, None] * months * years
        + np.arange(months)[None, None, :, None] * years
        + np.arange(years)[None, None, None, :]
    )
    block_full = np.broadcast_to(block_idx, shape)
    day_disc = disc[None, None, None, :] / scen.day_multiplier

    rent = np.stack([a.rent_price for a in net.arcs])
    for a in range(len(net.arcs)):
        coef = np.broadcast_to(rent[a][hod][:, None, :, None] * day_disc, shape)
        for blk in ("flow_pos", "flow_neg"):
            ids.append(model.blocks[blk].ids[a].reshape(-1))
            coefs.append(coef.reshape(-1))
            block.append(block_full.reshape(-1))
    for i in range(n):
        for blk, price, sign in (("buy_onee", t.price_onee, 1.0),
                                 ("buy_nareva", t.price_nareva, 1.0),
                                 ("sell", t.feed_in, -1.0)):
            coef = np.broadcast_to(sign * price[i][hod][:, None, :, None] * day_disc, shape)
            ids.append(model.blocks[blk].ids[i].reshape(-1))
            coefs.append(coef.reshape(-1))
            block.append(block_full.reshape(-1))

    model.meta["day_cost"] = {
        "var_ids": np.concatenate(ids),
        "coefs": np.concatenate(coefs),
        "block": np.concatenate(block),
        "shape": (n_scen, months, years),
        "days_in_month": time.days_in_month.astype(float).copy(),
        "weights": scen.weights.copy(),
    }
    model.meta["sizes"] = {
        "sites": n, "hours": hours, "scenarios": n_scen,
        "months": months, "years": years, "arcs": len(net.arcs),
    }

    salvage = costs.discount ** years
    bat, sol = model.blocks["battery"], model.blocks["solar"]
    groups = {
        "battery": (bat.ids.reshape(-1),
                    np.tile(costs.battery_cost * disc, n)),
        "solar": (sol.ids.reshape(-1),
                  np.tile(costs.solar_cost * disc, n)),
        "salvage": (np.concatenate([bat.ids.reshape(-1), sol.ids.reshape(-1)]),
                    np.concatenate([np.tile(-costs.battery_cost * salvage, n),
                                    np.tile(-costs.solar_cost * salvage, n)])),
    }
    d_my = time.days_in_month.astype(float)
    p_dm = scen.weights
    weight = (d_my[None, :, :] * p_dm[:, :, None]).reshape(-1)  # (D*M*Y) via block idx

    # rent/energy groups reuse the day-cost tagging split by variable family
    day = model.meta["day_cost"]
    fam = np.empty(model.n_vars, dtype="U10")
    for name in OPERATIONAL_BLOCKS:
        blk = model.blocks[name]
        fam[blk.start: blk.start + blk.size] = "rent" if name.startswith("flow") else "energy"
    day_w = weight[day["block"]] * day["coefs"]
    groups["rent"] = (day["var_ids"][fam[day["var_ids"]] == "rent"],
                      day_w[fam[day["var_ids"]] == "rent"])
    groups["energy"] = (day["var_ids"][fam[day["var_ids"]] == "energy"],
                        day_w[fam[day["var_ids"]] == "energy"])
    model.meta["breakdown"] = groups


def objective_breakdown(model: ModelInstance, x: np.ndarray) -> dict[str, float]:
    """Objective components (battery, solar, rent, energy, salvage). Their sum
    equals the model objective on the same point."""
    if x.shape != (model.n_vars,):
        raise ValueError(f"solution length {x.shape} does not match model {model.n_vars}")
    groups = model.meta["breakdown"]
    return {name: float(vals @ x[ids]) for name, (ids, vals) in groups.items()}


def day_costs(model: ModelInstance, x: np.ndarray) -> np.ndarray:
    """Discounted operational cost of each (scenario, month, year) day,
    excluding day-count and probability weights."""
    day = model.meta["day_cost"]
    shape = day["shape"]
    out = np.zeros(int(np.prod(shape)))
    np.add.at(out, day["block"], day["coefs"] * x[day["var_ids"]])
    return out.reshape(shape)


def extract_plan(model: ModelInstance, x: np.ndarray) -> InvestmentPlan:
    bat = model.blocks["battery"]
    sol = model.blocks["solar"]
    return InvestmentPlan(
        battery_kwh=x[bat.start: bat.start + bat.size].reshape(bat.shape).copy(),
        solar_kw=x[sol.start: sol.start + sol.size].reshape(sol.shape).copy(),
    )


def extract_schedule(model: ModelInstance, x: np.ndarray) -> DispatchSchedule:
    """Operational decision arrays of a solution, in planning shape."""
    def grab(name):
        blk = model.blocks[name]
        return x[blk.start: blk.start + blk.size].reshape(blk.shape).copy()

    return DispatchSchedule(*(grab(name) for name in OPERATIONAL_BLOCKS))


def verify_solution(instance: PlanningInstance, model: ModelInstance,
                    x: np.ndarray, tol: float = 1e-6) -> ValidationReport:
    """Re-check a solution against the instance data, row family by row
    family, without using the model's constraint matrix."""
    rep = ValidationReport()
    scen = instance.scenarios
    net, costs = instance.network, instance.costs
    n, years, months = instance.n_sites, instance.time.years, instance.time.months
    hours = scen.hours
    hod = np.arange(hours) % HOURS

    def grab(name):
        blk = model.blocks[name]
        return x[blk.start: blk.start + blk.size].reshape(blk.shape)

    b, z = grab("battery"), grab("solar")
    zbar, bcap = grab("solar_eff"), grab("battery_eff")
    f_pos, f_neg = grab("flow_pos"), grab("flow_neg")
    s, r = grab("storage"), grab("discharge")
    x_o, x_n, w = grab("buy_onee"), grab("buy_nareva"), grab("sell")

    for name, arr in (("battery", b), ("solar", z), ("flow_pos", f_pos),
                      ("flow_neg", f_neg), ("storage", s), ("buy_onee", x_o),
                      ("buy_nareva", x_n), ("sell", w)):
        if arr.min(initial=0.0) < -tol:
            rep.add(name, f"negative entry {arr.min():.3e}")
    for i, site in enumerate(net.sites):
        if not site.solar_allowed and np.abs(z[i]).max(initial=0.0) > tol:
            rep.add(f"solar[{site.name}]", "installed where disallowed")
        if not site.nareva_allowed and np.abs(x_n[i]).max(initial=0.0) > tol:
            rep.add(f"buy_nareva[{site.name}]", "purchased where disallowed")

    disc = costs.discount ** np.arange(1, years + 1)
    spend = float((costs.battery_cost * disc * b).sum() + (costs.solar_cost * disc * z).sum())
    if spend > costs.budget + tol * max(1.0, costs.budget):
        rep.add("budget", f"spend {spend:.6g} over budget {costs.budget:.6g}")

    zbar_ref = InvestmentPlan(b, z).effective_solar(costs.solar_decay)
    bcap_ref = InvestmentPlan(b, z).effective_battery(costs.battery_decay)
    if np.abs(zbar - zbar_ref).max() > tol * max(1.0, np.abs(zbar_ref).max()):
        rep.add("solar_eff", "does not match degraded cumulative installations")
    if np.abs(bcap - bcap_ref).max() > tol * max(1.0, np.abs(bcap_ref).max()):
        rep.add("battery_eff", "does not match degraded cumulative installations")

    v_site = site_profiles(scen, net)
    ramp = costs.solar_ramp(years)
    eta = np.array([a.efficiency for a in net.arcs])
    demand = instance.demand.values
    scale = max(1.0, float(np.abs(demand).max()))

    # nodal balance
    inflow = np.zeros_like(s)
    for a, arc in enumerate(net.arcs):
        i_dst, i_src = net.site_index(arc.dst), net.site_index(arc.src)
        inflow[i_dst] += eta[a] * f_pos[a] - f_neg[a]
        inflow[i_src] += eta[a] * f_neg[a] - f_pos[a]
    solar = v_site.transpose(2, 1, 0)[:, :, :, None, None] * ramp[None, None, None, None, :] \
        * zbar[:, None, None, None, :]
    lhs = inflow + costs.discharge_rate * r + x_o + x_n + solar
    rhs = demand[:, hod][:, :, None, :, :] + w
    worst = float((rhs - lhs).max())
    if worst > tol * scale:
        rep.add("balance", f"violated by {worst:.3e}")

    # sell caps per 24-hour block
    neg_part = np.maximum(0.0, -demand).sum(axis=1)  # (N, M, Y)
    for blk in range(scen.day_multiplier):
        span = slice(blk * HOURS, (blk + 1) * HOURS)
        sold = w[:, span].sum(axis=1)
        produced = (solar[:, span].sum(axis=1) + neg_part[:, None, :, :])
        worst = float((sold - costs.sell_fraction * produced).max())
        if worst > tol * scale:
            rep.add("sell_cap", f"block {blk} violated by {worst:.3e}")

    # battery dynamics, capacity
    nxt = np.roll(np.arange(hours), -1)
    dyn = s[:, nxt] - costs.retention * s + r
    worst = float(np.abs(dyn).max())
    if worst > tol * scale:
        rep.add("battery_dynamics", f"violated by {worst:.3e}")
    worst = float((s - bcap[:, None, None, None, :]).max())
    if worst > tol * scale:
        rep.add("battery_capacity", f"violated by {worst:.3e}")

    # arc capacity and provider caps
    for a, arc in enumerate(net.arcs):
        worst = float((f_pos[a] + f_neg[a] - arc.capacity_kw).max())
        if worst > tol * scale:
            rep.add(f"arc_capacity[{a}]", f"violated by {worst:.3e}")
    cap_o = instance.tariffs.onee_cap[hod][None, :, None, None, None]
    cap_n = instance.tariffs.nareva_cap[hod][None, :, None, None, None]
    if float((x_o - cap_o).max()) > tol * scale:
        rep.add("onee_cap", f"violated by {float((x_o - cap_o).max()):.3e}")
    nareva_ok = np.array([s_.nareva_allowed for s_ in net.sites])
    if nareva_ok.any():
        worst = float((x_n[nareva_ok] - cap_n[0][None]).max())
        if worst > tol * scale:
            rep.add("nareva_cap", f"violated by {worst:.3e}")
    return rep
