"""Solver backends for ModelInstance.

Three backends: "highs" (scipy's linprog, LP only), "clarabel" and "scs"
(via cvxpy, required for exponential-cone models), and "simplex" (a
self-contained dense bounded-variable simplex for small cross-checks).
Selection order: explicit argument, then the HELIOS_SOLVER environment
variable, then "highs" for linear models and "clarabel" for cone models.
"""

from __future__ import annotations

import os
import time
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.optimize import linprog

from .model import EQ, GE, LE, ModelInstance

DEFAULT_TOL = 1e-8
SIMPLEX_MAX_ROWS = 6000

OPTIMAL, INFEASIBLE, UNBOUNDED, LIMIT = "optimal", "infeasible", "unbounded", "limit"


class BackendUnavailable(RuntimeError):
    pass


class NumericalFailure(RuntimeError):
    pass


@dataclass
class SolveOutcome:
    status: str
    x: np.ndarray | None
    objective: float | None
    wall_time: float
    solver: str

    def block(self, model: ModelInstance, name: str) -> np.ndarray:
        """Values of a named variable block, in the block's shape."""
        if self.x is None:
            raise ValueError(f"no primal values (status {self.status})")
        b = model.blocks[name]
        return self.x[b.start: b.start + b.size].reshape(b.shape)


def pick_backend(model: ModelInstance, backend: str | None = None) -> str:
    if backend is None:
        backend = os.environ.get("HELIOS_SOLVER") or None
    if backend is None:
        backend = "clarabel" if model.cones else "highs"
    backend = backend.lower()
    if backend not in ("highs", "clarabel", "scs", "simplex"):
        raise BackendUnavailable(f"unknown backend {backend!r}")
    if model.cones and backend in ("highs", "simplex"):
        raise BackendUnavailable(
            f"backend {backend!r} cannot handle cone constraints; "
            "use clarabel/scs or the cutting-plane path"
        )
    return backend


def solve(model: ModelInstance, backend: str | None = None,
          tol: float = DEFAULT_TOL, time_limit: float | None = None) -> SolveOutcome:
    backend = pick_backend(model, backend)
    start = time.monotonic()
    if backend == "highs":
        out = _solve_highs(model, tol, time_limit)
    elif backend in ("clarabel", "scs"):
        out = _solve_cvxpy(model, backend, tol, time_limit)
    else:
        out = _solve_simplex(model, tol)
    out.wall_time = time.monotonic() - start
    if out.status == OPTIMAL:
        recomputed = model.objective_value(out.x)
        scale = max(1.0, abs(recomputed))
        if abs(recomputed - out.objective) > 1e-6 * scale:
            raise NumericalFailure(
                f"{backend}: objective {out.objective} does not match c'x {recomputed}"
            )
        out.objective = recomputed
    return out


# --------------------------------------------------------------------------
# highs (scipy linprog)
# --------------------------------------------------------------------------

def _split_rows(model: ModelInstance):
    a, senses, rhs = model.matrix()
    le = senses == LE
    ge = senses == GE
    eq = senses == EQ
    a_ub = sp.vstack([a[le], -a[ge]]).tocsr() if (le.any() or ge.any()) else None
    b_ub = np.concatenate([rhs[le], -rhs[ge]]) if a_ub is not None else None
    a_eq = a[eq] if eq.any() else None
    b_eq = rhs[eq] if a_eq is not None else None
    return a_ub, b_ub, a_eq, b_eq


def _solve_highs(model: ModelInstance, tol: float, time_limit: float | None) -> SolveOutcome:
    a_ub, b_ub, a_eq, b_eq = _split_rows(model)
    options = {
        "presolve": True,
        "primal_feasibility_tolerance": tol,
        "dual_feasibility_tolerance": tol,
    }
    if time_limit is not None:
        options["time_limit"] = time_limit
    res = linprog(
        model.obj,
        A_ub=a_ub, b_ub=b_ub, A_eq=a_eq, b_eq=b_eq,
        bounds=np.column_stack([model.lb, model.ub]),
        method="highs",
        options=options,
    )
    status = {0: OPTIMAL, 1: LIMIT, 2: INFEASIBLE, 3: UNBOUNDED}.get(res.status)
    if status is None:
        raise NumericalFailure(f"highs: {res.message}")
    x = res.x if status == OPTIMAL else None
    obj = model.objective_value(x) if x is not None else None
    return SolveOutcome(status, x, obj, 0.0, "highs")


# --------------------------------------------------------------------------
# cvxpy backends (cone-capable)
# --------------------------------------------------------------------------

def _solve_cvxpy(model: ModelInstance, backend: str, tol: float,
                 time_limit: float | None) -> SolveOutcome:
    try:
        import cvxpy as cp
    except ImportError as e:  # pragma: no cover
        raise BackendUnavailable("cvxpy is not installed") from e

    x = cp.Variable(model.n_vars)
    cons = []
    a_ub, b_ub, a_eq, b_eq = _split_rows(model)
    if a_ub is not None:
        cons.append(a_ub @ x <= b_ub)
    if a_eq is not None:
        cons.append(a_eq @ x == b_eq)
    lo = np.isfinite(model.lb)
    hi = np.isfinite(model.ub)
    if lo.any():
        cons.append(x[np.flatnonzero(lo)] >= model.lb[lo])
    if hi.any():
        cons.append(x[np.flatnonzero(hi)] <= model.ub[hi])
    for batch in model.cones:
        beta = x[batch.beta]
        zeta = x[batch.zeta]
        gamma = x[batch.gamma]
        cons.append(cp.constraints.ExpCone(-zeta - beta, beta, gamma))

    prob = cp.Problem(cp.Minimize(model.obj @ x + model.obj_const), cons)
    solver = cp.CLARABEL if backend == "clarabel" else cp.SCS
    if backend == "scs":
        kwargs = {"eps": max(tol, 1e-9)}
    else:
        # Clarabel's scaled feasibility residual stalls around 1e-8 atop
        # 1e8-scale data; a decade of headroom there avoids spurious
        # reduced-accuracy exits without loosening the duality gap.  The
        # shortened step keeps iterates centred when the optimal ambiguity
        # temperature sits on the exponential cone's boundary, where the
        # default 0.99 fraction overshoots and stalls.
        kwargs = {"tol_gap_rel": max(tol, 1e-9), "tol_feas": max(tol * 10, 1e-7),
                  "max_step_fraction": 0.9}
    if time_limit is not None and backend == "clarabel":
        kwargs["time_limit"] = time_limit
    try:
        prob.solve(solver=solver, **kwargs)
    except cp.error.SolverError as e:
        raise NumericalFailure(f"{backend}: {e}") from e

    status = {
        cp.OPTIMAL: OPTIMAL,
        cp.INFEASIBLE: INFEASIBLE,
        cp.UNBOUNDED: UNBOUNDED,
        cp.OPTIMAL_INACCURATE: LIMIT,
        cp.INFEASIBLE_INACCURATE: INFEASIBLE,
        cp.UNBOUNDED_INACCURATE: UNBOUNDED,
    }.get(prob.status)
    if status is None:
        raise NumericalFailure(f"{backend}: status {prob.status}")
    keep = status == OPTIMAL or (status == LIMIT and x.value is not None)
    xv = np.asarray(x.value) if keep else None
    obj = model.objective_value(xv) if xv is not None else None
    return SolveOutcome(status, xv, obj, 0.0, backend)


# --------------------------------------------------------------------------
# dense bounded-variable simplex (cross-check oracle)
# --------------------------------------------------------------------------

def _solve_simplex(model: ModelInstance, tol: float) -> SolveOutcome:
    if model.n_rows > SIMPLEX_MAX_ROWS:
        raise BackendUnavailable(
            f"simplex backend is capped at {SIMPLEX_MAX_ROWS} rows "
            f"(model has {model.n_rows})"
        )
    x, status, _ = _bounded_simplex(model, tol)
    obj = model.objective_value(x) if status == OPTIMAL else None
    return SolveOutcome(status, x if status == OPTIMAL else None, obj, 0.0, "simplex")


def _bounded_simplex(model: ModelInstance, tol: float):
    """Two-phase revised simplex with bounded variables and a dense basis
    inverse. Written for clarity over speed; only used on small models."""
    a, senses, b = model.matrix()
    lb, c0 = model.lb.copy(), model.obj.copy()
    n = model.n_vars

    # shift finite lower bounds to zero; split free variables into pos - neg
    shift = np.where(np.isfinite(lb), lb, 0.0)
    b = b - a @ shift
    ubs = model.ub - shift
    free = np.flatnonzero(~np.isfinite(lb))
    if len(free):
        a = sp.hstack([a, -a[:, free]]).tocsr()
        c0 = np.concatenate([c0, -c0[free]])
        ubs = np.concatenate([ubs, np.full(len(free), np.inf)])
    n_ext = a.shape[1]

    # normalize to equalities: slack +1 for L rows, -1 for G rows
    m = a.shape[0]
    ineq = np.flatnonzero(senses != EQ)
    slack_sign = np.where(senses[ineq] == LE, 1.0, -1.0)
    slack = sp.coo_matrix((slack_sign, (ineq, np.arange(len(ineq)))), shape=(m, len(ineq)))
    a = sp.hstack([a, slack]).tocsr()
    c0 = np.concatenate([c0, np.zeros(len(ineq))])
    ubs = np.concatenate([ubs, np.full(len(ineq), np.inf)])

    # artificial columns give the phase-1 starting basis, signed with b
    sign_b = np.where(b < 0, -1.0, 1.0)
    art0 = a.shape[1]
    art = sp.coo_matrix((sign_b, (np.arange(m), np.arange(m))), shape=(m, m))
    a = sp.hstack([a, art]).tocsr()
    total = art0 + m
    c1 = np.zeros(total)
    c1[art0:] = 1.0
    c0 = np.concatenate([c0, np.zeros(m)])
    ubs = np.concatenate([ubs, np.full(m, np.inf)])
    a_csc = a.tocsc()

    basis = np.arange(art0, total)
    at_ub = np.zeros(total, dtype=bool)
    b_inv = np.diag(1.0 / sign_b)
    x_b = np.abs(b).astype(float)
    eps = 1e-9

    def values():
        x = np.where(at_ub, np.where(np.isfinite(ubs), ubs, 0.0), 0.0)
        x[basis] = x_b
        return x

    def refresh():
        nonlocal b_inv, x_b
        b_inv = np.linalg.inv(a_csc[:, basis].toarray())
        x_n = values()
        x_n[basis] = 0.0
        x_b = b_inv @ (b - a @ x_n)

    def iterate(cost):
        nonlocal b_inv, x_b
        opt_tol = 1e-8 * max(1.0, float(np.abs(cost).max()))
        stall = 0
        for it in range(1, 60001):
            if it % 2000 == 0:
                refresh()
            y = b_inv.T @ cost[basis]
            d = cost - a_csc.T @ y
            viol = np.where(at_ub, d, -d)
            viol[basis] = 0.0
            viol[ubs <= 0.0] = 0.0  # fixed variables can never enter
            if float(viol.max(initial=0.0)) <= opt_tol:
                return OPTIMAL
            if stall > 500:
                q = int(np.flatnonzero(viol > opt_tol)[0])
            else:
                q = int(np.argmax(viol))
            entering_up = not at_ub[q]
            col = b_inv @ a_csc[:, [q]].toarray().ravel()
            step = col if entering_up else -col
            t_best, leave, leave_to_ub = np.inf, -1, False
            pos = step > eps
            if pos.any():
                t = x_b[pos] / step[pos]
                i = int(np.argmin(t))
                if t[i] < t_best:
                    t_best, leave = float(t[i]), int(np.flatnonzero(pos)[i])
                    leave_to_ub = False
            neg = step < -eps
            if neg.any():
                room = ubs[basis[neg]] - x_b[neg]
                t = room / -step[neg]
                i = int(np.argmin(t))
                if t[i] < t_best:
                    t_best, leave = float(t[i]), int(np.flatnonzero(neg)[i])
                    leave_to_ub = True
            if ubs[q] < t_best:
                x_b = x_b - ubs[q] * step
                at_ub[q] = not at_ub[q]
                stall = 0
                continue
            if not np.isfinite(t_best):
                return UNBOUNDED
            stall = stall + 1 if t_best <= eps else 0
            x_b = x_b - t_best * step
            at_ub[basis[leave]] = leave_to_ub
            x_b[leave] = t_best if entering_up else ubs[q] - t_best
            at_ub[q] = False
            basis[leave] = q
            pivot = col[leave]
            eta = col
            eta[leave] -= 1.0
            b_inv -= np.outer(eta / pivot, b_inv[leave])
        return LIMIT

    if iterate(c1) != OPTIMAL:
        return None, LIMIT, None
    refresh()
    if float(c1 @ values()) > 1e-6 * max(1.0, float(np.abs(b).sum())):
        return None, INFEASIBLE, None
    ubs[art0:] = 0.0  # pin artificials for phase 2
    status = iterate(c0)
    if status != OPTIMAL:
        return None, status if status == UNBOUNDED else LIMIT, None
    refresh()

    x_ext = values()
    x = x_ext[:n].copy()
    if len(free):
        x[free] = x_ext[free] - x_ext[n:n_ext]
    x = x + shift
    return x, OPTIMAL, None
