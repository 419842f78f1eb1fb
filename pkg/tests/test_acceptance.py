"""Release gate for the planning stack.

Every guarantee the rest of the code leans on is re-checked here end to
end, with pinned tolerances: certificate duality, agreement of the three
ways to price day-weight ambiguity, collapse of all robustness knobs to
the nominal model, monotone response to each knob, scenario weights as
honest cluster frequencies, hour-by-hour replay against planned costs,
the documented discounting and storage arithmetic, the exact variable and
cone counts each layer adds, the economics of a budget sweep on the
bundled synthetic instance, and a tuning run where robustness actually
pays off once the weather drifts from the training record.

Each check writes one PASS/FAIL line with its measured margin straight to
the terminal (bypassing capture) so a run can be audited from its log.
The synthetic fixtures are session-scoped; the whole file runs in a few
minutes, dominated by the tuning run at the end.
"""

import math
import sys

import numpy as np
import pytest

from helios.dispatch import replay_day, scenario_production
from helios.domain import CostParameters
from helios.dro import (AmbiguitySpec, build_dro, solve_dro_cutting_plane,
                        worst_case_expectation)
from helios.evaluation import (HyperGrid, SplitSpec, budget_sweep,
                               compute_npv, cross_validate,
                               sensitivity_scenarios, solve_plan,
                               yearly_investment, yearly_operating_cost)
from helios.robust import (build_robust, max_certificate,
                           worst_case_production)
from helios.saa import (build_saa, day_costs, extract_plan, extract_schedule,
                        objective_breakdown)
from helios.scenarios import reduce_scenarios
from helios.solvers import solve

from conftest import build_micro, micro_stats, rescale_money


class gate:
    """One release check.  Prints a single PASS/FAIL line, with the measured
    margin, to the real terminal so the line lands in the log even when
    pytest captures stdout."""

    def __init__(self, num: int, claim: str):
        self.num = num
        self.claim = claim
        self.detail = ""

    def note(self, text: str) -> None:
        self.detail = text

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc, tb):
        verdict = "PASS" if exc_type is None else "FAIL"
        line = f"[gate {self.num:02d}] {verdict}  {self.claim}"
        if self.detail:
            line += f"  ({self.detail})"
        print("\n" + line, file=sys.__stdout__, flush=True)
        return False


def rel_gap(a: float, b: float) -> float:
    return abs(a - b) / max(1.0, abs(b))


# -- 1 ----------------------------------------------------------------------

def test_certificates_price_the_worst_case_exactly():
    rng = np.random.default_rng(20240817)
    worst = 0.0
    with gate(1, "production certificates equal the worst-case oracle on "
                 "20 random cases") as g:
        for _ in range(20):
            n = int(rng.integers(1, 4))
            hours = int(rng.choice([6, 8, 12, 24]))
            years = int(rng.integers(1, 3))
            vbar = rng.uniform(0.0, 1.0, (n, hours))
            weight = rng.uniform(0.0, 50.0, (n, years))
            hb = rng.uniform(0.0, 0.3, hours)
            sb = rng.uniform(0.0, 0.15, hours)
            tb = float(rng.uniform(0.0, 2.0))
            value, _ = worst_case_production(vbar, weight, hb, sb, tb)
            cert = max_certificate(vbar, weight, hb, sb, tb)
            worst = max(worst, rel_gap(cert, value))
        g.note(f"max rel err {worst:.2e}, tol 1e-6")
        assert worst <= 1e-6


# -- 2 ----------------------------------------------------------------------

RADII = (0.0, 0.001, 0.01, 0.1, 1.0)


@pytest.mark.filterwarnings("ignore:Solution may be inaccurate")
def test_ambiguity_solvers_agree_at_every_radius():
    worst_pair = worst_replay = worst_zero = 0.0
    with gate(2, "cone, cutting-plane and tilt pricings of day-weight "
                 "ambiguity agree on 15 solves") as g:
        for budget in (0.0, 2000.0, 5000.0):
            inst = rescale_money(build_micro(budget=budget), 1e-3)
            plain = solve(build_saa(inst))
            assert plain.status == "optimal"
            for delta in RADII:
                cuts_model = build_saa(inst)
                res = solve_dro_cutting_plane(cuts_model, AmbiguitySpec(delta))

                cone = solve(build_dro(build_saa(inst), AmbiguitySpec(delta)))
                # the interior-point backend sometimes stops at its iteration
                # cap with the answer already settled; value agreement is the
                # claim under test, so accept both exit statuses
                assert cone.status in ("optimal", "limit")
                worst_pair = max(worst_pair,
                                 rel_gap(cone.objective, res.objective))

                # re-price the returned plan day by day with the tilt solver
                day = cuts_model.meta["day_cost"]
                cday = day_costs(cuts_model, res.outcome.x)
                parts = objective_breakdown(cuts_model, res.outcome.x)
                total = parts["battery"] + parts["solar"] + parts["salvage"]
                for m in range(12):
                    w, _ = worst_case_expectation(
                        cday[:, m, 0], day["weights"][:, m], delta)
                    total += w * day["days_in_month"][m, 0]
                worst_replay = max(worst_replay,
                                   rel_gap(total, res.objective))

                if delta == 0.0:
                    worst_zero = max(worst_zero,
                                     rel_gap(res.objective, plain.objective))
        g.note(f"cone vs cuts {worst_pair:.2e} (tol 1e-5), re-priced plan "
               f"{worst_replay:.2e} (tol 1e-6), zero radius {worst_zero:.2e} "
               f"(tol 1e-6)")
        assert worst_pair <= 1e-5
        assert worst_replay <= 1e-6
        assert worst_zero <= 1e-6


# -- 3 ----------------------------------------------------------------------

def test_zero_knobs_collapse_to_the_nominal_model(yearly):
    with gate(3, "all-zero uncertainty knobs reproduce the nominal "
                 "objective") as g:
        gaps = []
        for inst, stats in ((build_micro(budget=5000.0), micro_stats()),
                            (yearly[0], yearly[2])):
            nominal = solve(build_saa(inst))
            chain = build_dro(build_robust(inst, stats, (0.0, 0.0, 0.0)),
                              AmbiguitySpec(0.0))
            collapsed = solve(chain)
            assert collapsed.status == "optimal"
            gaps.append(rel_gap(collapsed.objective, nominal.objective))
        g.note(f"handmade {gaps[0]:.2e}, synthetic {gaps[1]:.2e}, tol 1e-6")
        assert max(gaps) <= 1e-6


# -- 4 ----------------------------------------------------------------------

def test_objective_moves_the_right_way_with_every_knob(yearly):
    inst = yearly[0]

    def slack(v):
        return 1e-7 * max(1.0, abs(v))

    with gate(4, "objective falls with budget and rises with every "
                 "uncertainty knob") as g:
        budgets = [0.0, 1e4, 2.5e4, 5e4, 7.5e4, 1e5, 1.5e5, 2e5]
        objs = [solve_plan(inst.with_budget(b)).objective for b in budgets]
        max_rise = max(o1 - o0 for o0, o1 in zip(objs, objs[1:]))
        assert all(o1 <= o0 + slack(o0) for o0, o1 in zip(objs, objs[1:])), objs

        funded = build_micro(budget=5000.0)
        stats = micro_stats()
        max_gamma_drop = -math.inf
        for axis in range(3):
            prev = None
            for level in (0.0, 0.75, 1.5):
                setting = [0.0, 0.0, 0.0]
                setting[axis] = level
                out = solve(build_robust(funded, stats, tuple(setting)))
                assert out.status == "optimal"
                if prev is not None:
                    max_gamma_drop = max(max_gamma_drop, prev - out.objective)
                    assert out.objective >= prev - slack(prev)
                prev = out.objective

        prev = None
        max_radius_drop = -math.inf
        for delta in RADII:
            res = solve_dro_cutting_plane(build_saa(funded),
                                          AmbiguitySpec(delta))
            if prev is not None:
                max_radius_drop = max(max_radius_drop, prev - res.objective)
                assert res.objective >= prev - slack(prev)
            prev = res.objective

        g.note(f"8-point budget grid max rise {max_rise:.2e}, worst knob "
               f"drops {max_gamma_drop:.2e} / {max_radius_drop:.2e}, "
               f"tol 1e-7 relative")


# -- 5 ----------------------------------------------------------------------

def test_scenario_weights_are_nearest_centroid_frequencies(yearly):
    dataset = yearly[1]
    with gate(5, "monthly scenario weights equal brute-force "
                 "nearest-centroid frequencies") as g:
        scen = reduce_scenarios(dataset, 5, seed=4)
        flat = scen.centroids.reshape(5, -1)
        d2 = np.sum((dataset.day_vectors()[:, None, :] - flat[None]) ** 2,
                    axis=2)
        assign = d2.argmin(axis=1)
        col_err = 0.0
        for m in range(1, 13):
            days = dataset.month_days(m)
            freq = np.array([(assign[days] == d).mean() for d in range(5)])
            np.testing.assert_array_equal(scen.weights[:, m - 1], freq)
            col_err = max(col_err, abs(float(scen.weights[:, m - 1].sum()) - 1.0))
        g.note(f"12 months x 5 clusters exact, column sums off by "
               f"{col_err:.1e}, tol 1e-9")
        assert col_err <= 1e-9


# -- 6 ----------------------------------------------------------------------

def test_replay_matches_planned_costs_and_never_peeks_ahead():
    inst = build_micro(budget=5000.0)
    sol = solve_plan(inst)
    disc = inst.costs.discount
    with gate(6, "hour-by-hour replay reproduces planned day costs and "
                 "decisions never depend on later hours") as g:
        worst = 0.0
        for d in range(2):
            prod = scenario_production(inst, d)
            for m in range(12):
                rep = replay_day(inst, sol.plan, prod, m, 0)
                planned = sol.day_cost[d, m, 0] / disc
                worst = max(worst, rel_gap(rep.cost, planned))
        assert worst <= 1e-6

        rng = np.random.default_rng(6)
        for _ in range(50):
            base = np.zeros((2, 24))
            base[0] = rng.uniform(0.0, 1.0, 24)
            forecast = np.zeros((2, 24))
            forecast[0] = rng.uniform(0.0, 1.0, 24)
            h = int(rng.integers(1, 24))
            bent = base.copy()
            bent[0, h:] = np.clip(bent[0, h:] * rng.uniform(0.3, 1.7),
                                  0.0, 1.0)
            month = int(rng.integers(0, 12))
            a = replay_day(inst, sol.plan, base, month, 0, forecast=forecast)
            b = replay_day(inst, sol.plan, bent, month, 0, forecast=forecast)
            for field in ("flow_pos", "flow_neg", "discharge", "buy_onee",
                          "buy_nareva", "sell"):
                np.testing.assert_array_equal(getattr(a, field)[:, :h],
                                              getattr(b, field)[:, :h])
            np.testing.assert_array_equal(a.storage[:, :h + 1],
                                          b.storage[:, :h + 1])
        g.note(f"24 scenario days match within {worst:.2e} (tol 1e-6); 50 "
               f"perturbed days leave earlier hours bit-identical")


# -- 7 ----------------------------------------------------------------------

def test_discounting_storage_arithmetic_and_default_rates(desk_solved):
    inst, model, out = desk_solved
    disc = inst.costs.discount
    with gate(7, "NPV identity, storage recursion and the documented "
                 "default rates all hold") as g:
        op = yearly_operating_cost(inst, model, out.x)
        plan = extract_plan(model, out.x)
        base = solve_plan(inst.with_budget(0.0))
        inv = yearly_investment(inst, plan)
        npv = compute_npv(op, base.operating_cost, inv, disc)
        hand = 0.0
        for y in range(inst.time.years):
            hand += disc ** (y + 1) * (base.operating_cost[y] - op[y] - inv[y])
        npv_err = rel_gap(npv, hand)
        assert npv_err <= 1e-6

        sched = extract_schedule(model, out.x)
        s, r = sched.storage, sched.discharge
        resid = np.roll(s, -1, axis=1) - (inst.costs.retention * s - r)
        worst_resid = float(np.abs(resid).max())
        assert worst_resid <= 1e-6 * max(1.0, float(np.abs(s).max()))

        defaults = CostParameters(budget=0.0, battery_cost=np.ones(1),
                                  solar_cost=np.ones(1))
        assert defaults.sell_fraction == 0.2
        assert defaults.retention == 0.997
        assert defaults.discount == 0.96
        assert defaults.solar_decay == 0.995
        assert defaults.battery_decay == 0.96
        assert {a.efficiency for a in inst.network.arcs} == {0.99}
        g.note(f"npv identity {npv_err:.2e} (tol 1e-6), worst storage "
               f"residual {worst_resid:.2e}, defaults "
               f"0.2/0.99/0.997/0.96/0.995/0.96")


# -- 8 ----------------------------------------------------------------------

def test_each_layer_adds_exactly_the_advertised_blocks(yearly):
    with gate(8, "robust and ambiguity layers add exactly the advertised "
                 "variable and cone counts") as g:
        checked = []
        for inst, stats in ((build_micro(), micro_stats()),
                            (yearly[0], yearly[2])):
            base = build_saa(inst)
            sizes = base.meta["sizes"]
            n, h = sizes["sites"], sizes["hours"]
            d, m, y = sizes["scenarios"], sizes["months"], sizes["years"]

            rob = build_robust(inst, stats, (1.0, 1.0, 1.0))
            assert rob.n_vars - base.n_vars == 2 * d * (5 * n * h * m * y + 1)

            dro = build_dro(build_saa(inst), AmbiguitySpec(0.1))
            assert dro.n_vars - base.n_vars == 2 * m * y + 2 * d * m * y
            live = y * int((inst.scenarios.weights > 0).sum())
            assert dro.n_cones == live
            checked.append((2 * d * (5 * n * h * m * y + 1),
                            2 * m * y + 2 * d * m * y, live))
        # the handmade set weights every day, so its cone count is full
        assert checked[0][2] == 2 * 12 * 1
        g.note("var/cone deltas "
               + "; ".join(f"+{a}/+{b}/{c} cones" for a, b, c in checked))


# -- 9 ----------------------------------------------------------------------

BUDGET_GRID = [0.0, 2e4, 5e4, 1e5, 1.5e5, 2e5, 3e5, 4.5e5, 6e5]


def test_budget_sweep_economics_on_the_synthetic_instance(desk_instance,
                                                          desk_dataset):
    with gate(9, "sweep shows falling costs, diminishing emissions returns "
                 "and an interior NPV peak") as g:
        report = budget_sweep(desk_instance, BUDGET_GRID, parallelism=3)
        assert [p.status for p in report.points] == ["optimal"] * 9

        op = np.array([p.operating_cost for p in report.points])
        assert (np.diff(op) <= 1e-7 * np.maximum(1.0, np.abs(op[:-1]))).all()

        red = np.array([p.emissions_reduction for p in report.points])
        assert (np.diff(red) >= -1e-9).all()
        gains = np.diff(red) / np.diff(BUDGET_GRID)
        assert (np.diff(gains) <= 1e-9).all()

        npv = np.array([p.npv for p in report.points])
        peak = int(npv.argmax())
        assert 0 < peak < len(BUDGET_GRID) - 1
        assert npv[peak] > npv[0] and npv[peak] > npv[-1]

        sens = sensitivity_scenarios(desk_instance, desk_dataset,
                                     [4, 6, 8, 10], seed=0)
        worst_spread = max(sens.spread.values())
        assert worst_spread < 0.10
        g.note(f"operating cost monotone, NPV peaks at budget "
               f"{BUDGET_GRID[peak]:g}, scenario-count spread "
               f"{worst_spread:.3f} (tol 0.10)")


# -- 10 ---------------------------------------------------------------------

def test_tuned_robustness_beats_the_nominal_plan_under_drift(yearly):
    inst, dataset, _ = yearly
    grid = HyperGrid(((0.0, 0.0, 0.0, 0.0),
                      (1.0, 1.0, 1.0, 0.0),
                      (0.0, 0.0, 0.0, 0.1)))
    with gate(10, "a robustness setting beats the nominal plan on drifted "
                  "validation days") as g:
        report = cross_validate(
            inst, dataset,
            SplitSpec(train=20, validation=4, test=4, repetitions=10, seed=0),
            grid, k_scenarios=6, shift=0.7, select_on="cost", parallelism=3)

        base = report.val_cost[:, 0]
        best = None
        for j, setting in enumerate(grid.tuples[1:], start=1):
            wins = int((report.val_cost[:, j] < base).sum())
            p = sum(math.comb(10, i) for i in range(wins, 11)) / 2 ** 10
            gain = float(100.0 * (base - report.val_cost[:, j]).mean()
                         / base.mean())
            if best is None or p < best[1]:
                best = (setting, p, wins, gain)
        setting, p, wins, gain = best
        g.note(f"winner {setting}: better in {wins}/10 repetitions, mean "
               f"gain {gain:.2f}%, sign-test p {p:.4f} (need < 0.05)")
        assert gain > 0.0
        assert p < 0.05
        assert report.selected != (0.0, 0.0, 0.0, 0.0)
