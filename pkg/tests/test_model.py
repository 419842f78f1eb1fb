import numpy as np
import pytest

from helios.model import EQ, GE, LE, ModelInstance, parse_lp_text
from helios.solvers import (BackendUnavailable, NumericalFailure, pick_backend,
                            solve)


def knapsack_lp() -> ModelInstance:
    """max 3a + 2b s.t. a + b <= 4, a <= 3, b <= 3  (as a minimization)."""
    m = ModelInstance("knapsack")
    m.add_block("x", 2, ub=3.0)
    m.obj[:] = [-3.0, -2.0]
    m.add_row([0, 1], [1.0, 1.0], LE, 4.0, label="pool")
    return m


def test_block_layout_and_ids():
    m = ModelInstance()
    a = m.add_block("a", (2, 3))
    b = m.add_block("b", 4, lb=-1.0, ub=2.0)
    assert (a.start, a.size) == (0, 6)
    assert (b.start, b.size) == (6, 4)
    assert m.n_vars == 10
    assert m.ids("a").shape == (2, 3)
    assert m.ids("a")[1, 2] == 5
    assert m.lb[6] == -1.0 and m.ub[6] == 2.0
    with pytest.raises(ValueError, match="duplicate"):
        m.add_block("a", 1)


def test_row_validation():
    m = ModelInstance()
    m.add_block("x", 2)
    with pytest.raises(ValueError, match="differ in length"):
        m.add_row([0, 1], [1.0], LE, 0.0)
    with pytest.raises(ValueError, match="unknown sense"):
        m.add_row([0], [1.0], "~", 0.0)


def test_matrix_coalesces_repeated_columns():
    m = ModelInstance()
    m.add_block("x", 2)
    m.add_row([0, 0, 1], [1.0, 2.0, 5.0], LE, 7.0)
    a, senses, rhs = m.matrix()
    assert a.toarray().tolist() == [[3.0, 5.0]]
    assert senses.tolist() == [LE] and rhs.tolist() == [7.0]


def test_delete_rows_remaps_labels():
    m = ModelInstance()
    m.add_block("x", 1)
    m.add_row([0], [1.0], LE, 1.0, label="first")
    m.add_row([0], [1.0], GE, 0.0, label="second")
    m.add_row([0], [1.0], EQ, 0.5, label="third")
    remap = m.delete_rows([1])
    assert remap.tolist() == [0, -1, 1]
    assert m.row_labels == {"first": 0, "third": 1}
    assert m.n_rows == 2
    assert m.senses == [LE, EQ]


def test_objective_value_includes_constant():
    m = knapsack_lp()
    m.obj_const = 10.0
    assert m.objective_value(np.array([3.0, 1.0])) == pytest.approx(-1.0)


def test_highs_solves_the_knapsack():
    out = solve(knapsack_lp(), backend="highs")
    assert out.status == "optimal"
    assert out.objective == pytest.approx(-11.0)
    np.testing.assert_allclose(out.x, [3.0, 1.0], atol=1e-8)


def test_simplex_agrees_with_highs():
    m = ModelInstance()
    m.add_block("x", 3, ub=10.0)
    m.obj[:] = [-1.0, -2.0, 1.5]
    m.add_row([0, 1], [1.0, 1.0], LE, 6.0)
    m.add_row([1, 2], [1.0, -1.0], EQ, 2.0)
    m.add_row([0, 2], [1.0, 1.0], GE, 1.0)
    a = solve(m, backend="highs")
    b = solve(m, backend="simplex")
    assert a.status == b.status == "optimal"
    assert b.objective == pytest.approx(a.objective, abs=1e-8)


def test_infeasible_and_unbounded_are_reported():
    m = ModelInstance()
    m.add_block("x", 1, ub=1.0)
    m.add_row([0], [1.0], GE, 2.0)
    assert solve(m).status == "infeasible"

    m = ModelInstance()
    m.add_block("x", 1)  # maximize x, no cap
    m.obj[:] = [-1.0]
    assert solve(m).status == "unbounded"


def test_outcome_block_accessor():
    m = knapsack_lp()
    out = solve(m)
    np.testing.assert_allclose(out.block(m, "x"), [3.0, 1.0], atol=1e-8)


def test_backend_selection_rules(monkeypatch):
    plain = knapsack_lp()
    assert pick_backend(plain) == "highs"
    monkeypatch.setenv("HELIOS_SOLVER", "simplex")
    assert pick_backend(plain) == "simplex"
    assert pick_backend(plain, "highs") == "highs"  # argument wins
    monkeypatch.delenv("HELIOS_SOLVER")
    with pytest.raises(BackendUnavailable, match="unknown"):
        pick_backend(plain, "gurobi")

    cone = ModelInstance()
    cone.add_block("v", 3)
    cone.add_exp_cones([0], [1], [2])
    assert pick_backend(cone) == "clarabel"
    with pytest.raises(BackendUnavailable, match="cone"):
        pick_backend(cone, "highs")
    with pytest.raises(BackendUnavailable, match="cone"):
        pick_backend(cone, "simplex")


def test_clarabel_solves_a_cone_floor():
    # beta and zeta pinned at 1 and 0: gamma >= exp(-1)
    m = ModelInstance()
    m.add_block("v", 3)
    m.lb[0] = m.ub[0] = 1.0
    m.ub[1] = 0.0
    m.obj[2] = 1.0
    m.add_exp_cones([0], [1], [2])
    out = solve(m)
    assert out.status == "optimal"
    assert out.objective == pytest.approx(np.exp(-1.0), abs=1e-6)


def test_lp_text_round_trip():
    m = ModelInstance()
    m.add_block("x", 2, ub=5.0)
    m.add_block("y", 1, lb=-2.0)
    m.obj[:] = [1.25, 0.0, -3.0]
    m.obj_const = 4.0
    m.add_row([0, 2], [2.0, -1.0], GE, 1.0)
    m.add_row([0, 1, 2], [1.0, 1.0, 1.0], EQ, 2.5)
    text = m.lp_text()
    back = parse_lp_text(text)

    assert back.n_vars == m.n_vars
    np.testing.assert_allclose(back.obj, m.obj)
    assert back.obj_const == pytest.approx(m.obj_const)
    np.testing.assert_allclose(back.lb, m.lb)
    np.testing.assert_allclose(back.ub, m.ub)
    a0, s0, r0 = m.matrix()
    a1, s1, r1 = back.matrix()
    np.testing.assert_allclose(a1.toarray(), a0.toarray())
    assert s1.tolist() == s0.tolist()
    np.testing.assert_allclose(r1, r0)

    first = solve(m)
    second = solve(back)
    assert second.objective == pytest.approx(first.objective, abs=1e-9)


def test_cone_models_refuse_lp_text():
    m = ModelInstance()
    m.add_block("v", 3)
    m.add_exp_cones([0], [1], [2])
    with pytest.raises(ValueError, match="cone"):
        m.lp_text()


def test_solver_rechecks_reported_objectives():
    m = knapsack_lp()
    out = solve(m)
    # the reported objective is recomputed from c'x, so the two agree
    assert out.objective == pytest.approx(m.objective_value(out.x))
