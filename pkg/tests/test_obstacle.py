import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from obstaclelab.errors import ConvergenceError, FeasibilityError
from obstaclelab.expressions import Expression
from obstaclelab.grid import CoefficientField, assemble, build_grid, operator_from_matrix
from obstaclelab.measure import GridMeasure, atom
from obstaclelab.obstacle import (
    ViConfig,
    check_mass_bound,
    check_minimality,
    compare_reactions,
    entropy_residual,
    reaction,
    reaction_class_check,
    solve_op_by_truncation,
    solve_vi,
)

from oracles import laplacian_1d, unique_lcp

METHODS = ["activeset", "psor"]
G1 = build_grid([(0, 1)], 2)
OP1 = assemble(G1)


def assert_invariants(sol):
    scale = sol.scale
    lam = np.asarray(sol.reaction)
    finite = np.isfinite(sol.psi)
    assert lam.min(initial=0) >= -1e-10 * scale
    assert np.all(sol.u[finite] >= sol.psi[finite] - 1e-10 * scale)
    assert np.sum(lam[finite] * (sol.u - np.where(finite, sol.psi, 0))[finite]) <= 1e-8 * scale
    assert np.all(lam[~finite] <= 1e-10 * scale)
    np.testing.assert_allclose(sol.op @ sol.u, sol.load + lam, atol=1e-8 * scale)


@pytest.mark.parametrize("method", METHODS)
def test_hand_case(method):
    sol = solve_vi(OP1, atom(0.5, -1.0), -0.1, ViConfig(method=method))
    np.testing.assert_allclose(sol.u, [-0.05, -0.1, -0.05], atol=1e-10)
    np.testing.assert_allclose(sol.reaction, [0, 0.6, 0], atol=1e-10)
    assert sol.mass == pytest.approx(0.6)
    assert sol.contact_nodes == 1
    assert_invariants(sol)
    np.testing.assert_allclose(reaction(OP1, sol.u, atom(0.5, -1.0)), [0, 0.6, 0], atol=1e-12)
    assert check_mass_bound(sol).passed


@pytest.mark.parametrize("method", METHODS)
def test_zero_data(method):
    sol = solve_vi(OP1, GridMeasure(1), -1.0, ViConfig(method=method))
    assert not sol.u.any() and not np.asarray(sol.reaction).any()
    rep = check_mass_bound(sol)
    assert rep.passed and rep.slack == 0.0


@pytest.mark.parametrize("method", METHODS)
@settings(max_examples=60, deadline=None)
@given(data=st.data())
def test_matches_enumeration_oracle(method, data):
    n = data.draw(st.integers(1, 5))
    h = 1.0 / (n + 1)
    b = np.array(data.draw(st.lists(st.floats(-3, 3), min_size=n, max_size=n)))
    psi = np.array(data.draw(st.lists(
        st.one_of(st.floats(-1, 0.5), st.just(-np.inf)), min_size=n, max_size=n)))
    u_ref, lam_ref = unique_lcp(laplacian_1d(n, h), b, psi)
    op = assemble(build_grid([(0, 1)], 0, base=h))
    sol = solve_vi(op, b, psi, ViConfig(method=method))
    np.testing.assert_allclose(sol.u, u_ref, atol=1e-10)
    np.testing.assert_allclose(sol.reaction, lam_ref, atol=1e-10)


@pytest.mark.parametrize("method", METHODS)
def test_tiny_load_at_tie_keeps_reaction_nonnegative(method):
    b = np.array([0.0, 0.0, -1.0, 1e-10])
    psi = np.array([-np.inf, 0.0, 0.0, 0.0])
    u_ref, lam_ref = unique_lcp(laplacian_1d(4, 0.2), b, psi)
    sol = solve_vi(assemble(build_grid([(0, 1)], 0, base=0.2)), b, psi, ViConfig(method=method))
    np.testing.assert_allclose(sol.u, u_ref, atol=1e-12)
    np.testing.assert_allclose(sol.reaction, lam_ref, atol=1e-12)


def test_unconstrained_nodes_have_no_reaction():
    psi = np.array([-np.inf, 0.0, -np.inf])
    sol = solve_vi(OP1, [0.0, -1.0, 0.0], psi)
    np.testing.assert_allclose(sol.u, 0.0, atol=1e-14)
    np.testing.assert_allclose(sol.reaction, [0.0, 1.0, 0.0], atol=1e-12)
    assert_invariants(sol)


def test_obstacle_guards():
    with pytest.raises(FeasibilityError):
        solve_vi(OP1, np.zeros(3), [0.0, np.inf, 0.0])
    with pytest.raises(FeasibilityError):
        solve_vi(OP1, np.zeros(3), [0.0, np.nan, 0.0])
    with pytest.raises(ValueError):
        solve_vi(OP1, np.zeros(4), 0.0)
    with pytest.raises(ValueError):
        ViConfig(method="newton")
    with pytest.raises(ValueError):
        ViConfig(omega=2.0)


def test_dominating_measure_check():
    rho = atom(0.5, 1.0)
    psi = np.array([0.1, 0.2, 0.1])
    sol = solve_vi(OP1, GridMeasure(1), psi, rho=rho)
    assert_invariants(sol)
    assert check_mass_bound(sol, rho=rho).passed
    with pytest.raises(FeasibilityError):
        solve_vi(OP1, GridMeasure(1), psi + 0.2, rho=rho)


def test_psor_iteration_cap():
    grid = build_grid([(0, 1)] * 2, 5)
    op = assemble(grid)
    with pytest.raises(ConvergenceError):
        solve_vi(op, atom((0.5, 0.5), -1.0), -0.01, ViConfig(method="psor", max_iter=30))


@pytest.mark.parametrize("level", [3, 4])
def test_methods_agree_2d(level):
    grid = build_grid([(0, 1)] * 2, level)
    op = assemble(grid)
    mu = GridMeasure(2, [((0.3, 0.6), -1.0)], density=Expression("-2*sin(pi*x)", 2))
    psi = Expression("-0.02-0.05*y", 2)(grid.interior_points)
    a = solve_vi(op, mu, psi, ViConfig(method="activeset"))
    b = solve_vi(op, mu, psi, ViConfig(method="psor"))
    np.testing.assert_allclose(a.u, b.u, atol=1e-7)
    assert a.contact_nodes > 0
    assert_invariants(a)
    assert_invariants(b)


def test_nonsymmetric_operator():
    s = Expression("0.3*sin(3*x+y)", 2)
    coeff = CoefficientField.matrix([[1.0, s], [lambda p: -s(p), 1.0]])
    op = assemble(build_grid([(0, 1)] * 2, 3), coeff)
    b = -np.linspace(0.1, 1.0, op.n) * op.grid.node_volume * 10
    sol = solve_vi(op, b, -0.02)
    assert_invariants(sol)
    psor = solve_vi(op, b, -0.02, ViConfig(method="psor"))
    np.testing.assert_allclose(sol.u, psor.u, atol=1e-8)


def test_mass_bound_with_dense_matrix():
    op = operator_from_matrix(laplacian_1d(4, 0.2))
    sol = solve_vi(op, [-1.0, 0.5, -2.0, 0.0], -0.05)
    rep = check_mass_bound(sol)
    assert rep.passed and rep.tv_bound == 3.0


def test_minimality_samples():
    sol = solve_vi(OP1, atom(0.5, -1.0), -0.1)
    lam = np.asarray(sol.reaction)
    rep = check_minimality(sol, [lam, lam + 0.01, np.array([0.0, 0.0, 0.0])])
    assert rep.passed
    assert rep.checked == 2 and rep.skipped == 1
    assert rep.worst_violation <= 1e-12
    with pytest.raises(ValueError):
        check_minimality(sol, [np.array([-1.0, 0, 0])])


def test_minimality_random_level_4():
    grid = build_grid([(0, 1)] * 2, 4)
    op = assemble(grid)
    sol = solve_vi(op, atom((0.5, 0.5), -1.0), -0.05)
    rng = np.random.default_rng(2)
    samples = [np.asarray(sol.reaction).clip(0) + rng.uniform(0, 0.01, op.n) for _ in range(50)]
    rep = check_minimality(sol, samples)
    assert rep.passed and rep.checked == 50


def test_compare_reactions_hand_case():
    rep = compare_reactions(OP1, atom(0.5, -1.0), atom(0.5, -0.5), -0.1)
    np.testing.assert_allclose(rep.first.reaction, [0, 0.6, 0], atol=1e-10)
    np.testing.assert_allclose(rep.second.reaction, [0, 0.1, 0], atol=1e-10)
    assert rep.passed


def test_compare_reactions_equal_and_guards():
    rep = compare_reactions(OP1, atom(0.5, -1.0), atom(0.5, -1.0), -0.1)
    np.testing.assert_array_equal(rep.first.reaction, rep.second.reaction)
    with pytest.raises(ValueError):
        compare_reactions(OP1, atom(0.5, 1.0), atom(0.5, -1.0), -0.1)
    with pytest.raises(ValueError):
        compare_reactions(OP1, atom(0.5, -1.0), atom(0.5, 1.0), 0.1)


def test_truncation_inactive_schedule():
    mu = atom(0.5, -0.1)
    direct = solve_vi(OP1, mu, -1.0)
    final, trace, tv = solve_op_by_truncation(OP1, mu, -1.0, [0.1, 0.5, 1.0])
    assert tv == pytest.approx(0.1)
    for step in trace:
        assert step.mass_lambda == pytest.approx(direct.mass)
    np.testing.assert_allclose(final.u, direct.u, atol=1e-14)


def test_truncation_atom_case():
    final, trace, _ = solve_op_by_truncation(OP1, atom(0.5, -1.0), -0.1, [0.05, 0.1, 0.2, 1.0])
    masses = [s.mass_lambda for s in trace]
    assert all(b >= a - 1e-12 for a, b in zip(masses, masses[1:]))
    assert masses[-1] == pytest.approx(0.6)
    assert trace[-1].w1q_gap == 0.0
    with pytest.raises(ValueError):
        solve_op_by_truncation(OP1, atom(0.5, -1.0), -0.1, [0.2, 0.1])


def test_truncation_dirac_square_level_5():
    grid = build_grid([(0, 1)] * 2, 5)
    op = assemble(grid)
    mu = atom((0.5, 0.5), -1.0)
    direct = solve_vi(op, mu, -1.0)
    top = 1.01 * float(np.abs(direct.u).max() + 1)
    final, _, _ = solve_op_by_truncation(op, mu, -1.0, [top / 8, top / 2, top])
    np.testing.assert_allclose(final.u, direct.u, atol=1e-6)


def test_entropy_residual_identities():
    sol = solve_vi(OP1, atom(0.5, -1.0), -0.1)
    assert entropy_residual(sol, None, atom(0.5, -1.0), sol.u, 1.0) == pytest.approx(0, abs=1e-14)
    c = 0.05
    value = entropy_residual(sol, None, atom(0.5, -1.0), sol.u + c, 1.0)
    assert value == pytest.approx(sol.mass * c)
    with pytest.raises(ValueError):
        entropy_residual(sol, None, None, sol.u - 1.0, 1.0)
    with pytest.raises(ValueError):
        entropy_residual(sol, None, None, sol.u, 0.0)


def test_reaction_class_zero_data():
    sols = [solve_vi(assemble(build_grid([(0, 1)] * 2, lv)), GridMeasure(2), -1.0)
            for lv in (3, 4)]
    rep = reaction_class_check(sols, GridMeasure(2))
    assert rep.verdict == "no reaction" and rep.shares == [0.0, 0.0]


def test_reaction_class_atomic():
    mu = atom((0.5, 0.5), -1.0)
    sols = [solve_vi(assemble(build_grid([(0, 1)] * 2, lv)), mu, -0.05) for lv in (3, 4, 5)]
    rep = reaction_class_check(sols, mu)
    assert rep.verdict == "atomic reaction"
    assert rep.shares[-1] > 0.99
