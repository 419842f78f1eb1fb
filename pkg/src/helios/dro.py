"""Distribution-shift hedging on top of a built planning model.

The sample-average model weights each representative day by its observed
frequency.  Here those frequencies are treated as uncertain: for every
(month, year) block the day weights may shift to any distribution within a
Kullback-Leibler ball of radius ``delta`` around the observed one, and the
plan is charged the worst expectation over that ball.

Two solution routes are provided and must agree:

* :func:`build_dro` rewrites the objective through the dual of the inner
  maximisation, which needs one exponential-cone triple per (day, month,
  year) and is handed to a conic solver.
* :func:`solve_dro_cutting_plane` keeps the model linear and alternates
  between solving for a plan and re-weighting the days against it with
  :func:`worst_case_expectation`, accumulating cuts until the bound closes.

``delta = 0`` shrinks the ball to the observed frequencies themselves, so
both routes reduce to the sample-average model.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .model import GE, ModelInstance
from .saa import day_costs
from .solvers import SolveOutcome, solve


class ObjectiveNotSeparable(ValueError):
    """The model does not carry per-day cost groups in its metadata, so the
    objective cannot be re-weighted day by day."""


class IterationLimit(RuntimeError):
    """The cutting-plane loop hit its iteration cap before closing the gap."""


@dataclass(frozen=True)
class AmbiguitySpec:
    """Radius of the day-weight ambiguity ball and the reference weights.

    ``weights`` has one column per month, each column summing to one over
    the representative days.  ``None`` means "use the weights the model was
    built with".
    """

    delta: float
    weights: np.ndarray | None = None

    def __post_init__(self):
        if self.delta < 0:
            raise ValueError("ambiguity radius must be nonnegative")
        if self.weights is not None:
            w = np.asarray(self.weights, dtype=float)
            if w.ndim != 2:
                raise ValueError("weights must be (days, months)")
            if np.any(w < 0):
                raise ValueError("weights must be nonnegative")
            sums = w.sum(axis=0)
            if np.any(np.abs(sums - 1.0) > 1e-6):
                raise ValueError("each month's weights must sum to one")
            object.__setattr__(self, "weights", w / sums)


@dataclass
class CuttingPlaneResult:
    outcome: SolveOutcome
    objective: float
    iterations: int
    gap: float
    lower_bounds: list[float] = field(default_factory=list)


def _day_groups(model: ModelInstance):
    """Per-day variable/coefficient slices from the model metadata."""
    day = model.meta.get("day_cost")
    if day is None:
        raise ObjectiveNotSeparable(
            "model carries no per-day cost metadata; build it with the "
            "planning-model builders in this package")
    n_blocks = int(np.prod(day["shape"]))
    order = np.argsort(day["block"], kind="stable")
    ids = day["var_ids"][order]
    coefs = day["coefs"][order]
    starts = np.searchsorted(day["block"][order], np.arange(n_blocks + 1))
    return day, ids, coefs, starts


def _resolve_weights(day: dict, spec: AmbiguitySpec) -> np.ndarray:
    n_scen, months, _ = day["shape"]
    w = day["weights"] if spec.weights is None else spec.weights
    w = np.asarray(w, dtype=float)
    if w.shape != (n_scen, months):
        raise ValueError(
            f"weights shape {w.shape} does not match the model's "
            f"({n_scen}, {months}) day/month layout")
    return w


def build_dro(model: ModelInstance, spec: AmbiguitySpec) -> ModelInstance:
    """Replace the day-weighted objective with its worst-case-over-the-ball
    dual.  Mutates and returns ``model``.

    Adds, per (month, year): a free level variable and a nonnegative
    temperature; per (day, month, year): a free slack and a nonnegative
    charge, tied together by one exponential-cone triple.  With radius zero
    the ball is a single point and the model is returned untouched: the dual
    only approaches the plain expectation as the temperature grows without
    bound, so building it would trade an exact objective for an unattained
    one.
    """
    day, ids, coefs, starts = _day_groups(model)
    if "dro" in model.meta:
        raise ValueError("model already carries an ambiguity layer")
    weights = _resolve_weights(day, spec)
    if spec.delta == 0.0:
        return model
    n_scen, months, years = day["shape"]
    d_my = day["days_in_month"]

    level = model.add_block("dro_level", (months, years), lb=-np.inf)
    temp = model.add_block("dro_temperature", (months, years))
    slack = model.add_block("dro_slack", (n_scen, months, years), lb=-np.inf)
    charge = model.add_block("dro_charge", (n_scen, months, years))

    # Days a month never uses sit outside the ball's support, so they get
    # no row and no cone; leaving them in would hand the solver a free
    # direction whose cone bound explodes as the temperature drops.
    live = weights > 0
    dead = np.broadcast_to(~live[:, :, None], (n_scen, months, years))
    model.lb[slack.ids[dead]] = 0.0
    model.ub[slack.ids[dead]] = 0.0
    model.ub[charge.ids[dead]] = 0.0

    # level(m,y) - slack(d,m,y) >= cost of day (d,m,y)
    for blk in range(n_scen * months * years):
        d, rest = divmod(blk, months * years)
        m, y = divmod(rest, years)
        if not live[d, m]:
            continue
        sl = slice(starts[blk], starts[blk + 1])
        model.add_row(
            np.concatenate(([level.ids[m, y], slack.ids[d, m, y]], ids[sl])),
            np.concatenate(([1.0, -1.0], -coefs[sl])),
            GE, 0.0)
    keep = ~dead
    model.add_exp_cones(
        beta=np.broadcast_to(temp.ids[None], (n_scen, months, years))[keep],
        zeta=slack.ids[keep], gamma=charge.ids[keep])

    # The day variables lose their direct cost; the ambiguity variables are
    # charged with the day counts instead.
    model.obj[day["var_ids"]] = 0.0
    model.obj[level.ids.reshape(-1)] = d_my.reshape(-1)
    model.obj[temp.ids.reshape(-1)] = spec.delta * d_my.reshape(-1)
    model.obj[charge.ids.reshape(-1)] = (
        d_my[None] * weights[:, :, None]).reshape(-1)

    model.meta["dro"] = {"delta": spec.delta, "weights": weights,
                         "method": "cone", "cones": int(keep.sum())}
    return model


def worst_case_expectation(costs, weights, delta: float, *,
                           theta_tol: float = 1e-10) -> tuple[float, np.ndarray]:
    """Largest expectation of ``costs`` over distributions within KL radius
    ``delta`` of ``weights``.  Returns the value and the maximising weights.

    The maximiser lies on the exponential-tilt family Q ~ P * exp(c/theta);
    the temperature is found by bisection on the (monotone) divergence,
    after rescaling costs to [0, 1] so the tolerance is scale-free.
    """
    c = np.asarray(costs, dtype=float).reshape(-1)
    p = np.asarray(weights, dtype=float).reshape(-1)
    if c.shape != p.shape:
        raise ValueError("costs and weights differ in length")
    if np.any(p < 0) or p.sum() <= 0:
        raise ValueError("weights must be nonnegative and sum to one")
    if delta < 0:
        raise ValueError("ambiguity radius must be nonnegative")
    p = p / p.sum()
    if delta == 0.0:
        return float(p @ c), p.copy()
    live = p > 0
    span = float(c[live].max() - c[live].min())
    if span <= 1e-15 * max(1.0, float(np.abs(c[live]).max())):
        return float(p @ c), p.copy()
    cn = (c - c[live].min()) / span

    # All mass is allowed onto the dearest days once the radius covers the
    # divergence of that point mass.
    top = live & (cn >= cn[live].max() - 1e-12)
    kl_cap = float(-np.log(p[top].sum()))
    if delta >= kl_cap - 1e-12:
        q = np.where(top, p, 0.0)
        q /= q.sum()
        return float(q @ c), q

    def tilt(theta: float) -> np.ndarray:
        # dead entries carry arbitrary costs; exponentiate live ones only
        w = np.zeros_like(p)
        w[live] = p[live] * np.exp((cn[live] - 1.0) / theta)
        return w / w.sum()

    def kl(q: np.ndarray) -> float:
        m = q > 0
        # the true divergence is nonnegative; near-uniform tilts can come out
        # a few ulp below zero, which would defeat the bracketing below
        return max(0.0, float(np.sum(q[m] * np.log(q[m] / p[m]))))

    # KL(Q_theta || P) falls from kl_cap to 0 as theta grows.  The bracket
    # tolerance is relative to theta: for radii near the divergence's noise
    # floor the root sits at a huge temperature where an absolute 1e-10 is
    # finer than the float grid and the loop would never close.
    lo = hi = 1.0
    while kl(tilt(hi)) > delta:
        hi *= 2.0
    while kl(tilt(lo)) < delta:
        lo *= 0.5
    while hi - lo > theta_tol * max(1.0, hi):
        mid = 0.5 * (lo + hi)
        if kl(tilt(mid)) > delta:
            lo = mid
        else:
            hi = mid
    q = tilt(hi)  # the feasible side of the bracket
    q /= q.sum()
    return float(q @ c), q


def solve_dro_cutting_plane(model: ModelInstance, spec: AmbiguitySpec, *,
                            backend: str | None = None, tol: float = 1e-6,
                            max_iter: int = 200) -> CuttingPlaneResult:
    """Solve the day-weight-ambiguous problem without cones.

    Replaces each (month, year) day-cost term with an epigraph variable,
    seeds it with the observed-weights cut, then alternates: solve the LP,
    re-weight days against the incumbent plan, add the violated cuts.  LP
    optima are nondecreasing lower bounds; the pessimised objective of the
    incumbent is an upper bound; stops when they agree to ``tol`` (relative).
    Mutates ``model``.
    """
    day, ids, coefs, starts = _day_groups(model)
    if "dro" in model.meta:
        raise ValueError("model already carries an ambiguity layer")
    weights = _resolve_weights(day, spec)
    n_scen, months, years = day["shape"]
    d_my = day["days_in_month"]

    mean = model.add_block("dro_mean", (months, years), lb=-np.inf)
    model.obj[day["var_ids"]] = 0.0
    model.obj[mean.ids.reshape(-1)] = d_my.reshape(-1)
    model.meta["dro"] = {"delta": spec.delta, "weights": weights,
                        "method": "cuts"}

    def add_cut(m: int, y: int, q: np.ndarray) -> None:
        cols, vals = [np.array([mean.ids[m, y]])], [np.array([1.0])]
        for d in range(n_scen):
            sl = slice(starts[(d * months + m) * years + y],
                       starts[(d * months + m) * years + y + 1])
            cols.append(ids[sl])
            vals.append(-q[d] * coefs[sl])
        model.add_row(np.concatenate(cols), np.concatenate(vals), GE, 0.0)

    for m in range(months):
        for y in range(years):
            add_cut(m, y, weights[:, m])

    lower_bounds: list[float] = []
    for it in range(1, max_iter + 1):
        out = solve(model, backend=backend)
        if out.status != "optimal":
            raise RuntimeError(f"cutting-plane master solve: {out.status}")
        lower = out.objective
        lower_bounds.append(lower)
        cday = day_costs(model, out.x)
        mean_val = out.block(model, "dro_mean")
        worst = np.empty((months, years))
        movers = []
        for m in range(months):
            for y in range(years):
                worst[m, y], q = worst_case_expectation(
                    cday[:, m, y], weights[:, m], spec.delta)
                if worst[m, y] - mean_val[m, y] > tol * max(1.0, abs(worst[m, y])):
                    movers.append((m, y, q))
        upper = lower - float((d_my * mean_val).sum()) + float((d_my * worst).sum())
        gap = (upper - lower) / max(1.0, abs(upper))
        if gap <= tol:
            return CuttingPlaneResult(out, upper, it, gap, lower_bounds)
        for m, y, q in movers:
            add_cut(m, y, q)
    raise IterationLimit(
        f"no convergence in {max_iter} iterations (gap {gap:.2e})")
