"""Acceptance suite: one test and one printed pass/fail line per criterion.

Every criterion runs at its stated tolerance and runtime budget.  A line is
printed before the assertion so the summary lists failures too.
"""

import math
import time

import numpy as np

from obstaclelab.capacity import GridSet, capacity, grid_ball, grid_points
from obstaclelab.elliptic import duality_check, solve_linear
from obstaclelab.expressions import Expression
from obstaclelab.grid import CoefficientField, adjoint, assemble, build_grid
from obstaclelab.harness.experiments import run_experiment
from obstaclelab.measure import GridMeasure, load_vector
from obstaclelab.obstacle import ViConfig, check_mass_bound, compare_reactions, solve_vi

from oracles import laplacian_1d, unique_lcp


class Timer:
    def __enter__(self):
        self.start = time.perf_counter()
        return self

    def __exit__(self, *exc):
        self.seconds = time.perf_counter() - self.start


def random_measure(rng, dim, negative_bias=0.0):
    atoms = [(tuple(rng.uniform(0.05, 0.95, dim)), rng.uniform(-2, 1) - negative_bias)
             for _ in range(rng.integers(0, 4))]
    a, b, c = rng.uniform(-3, 3, 3)
    density = Expression(f"{a - negative_bias:.6f}+{b:.6f}*sin({c:.6f}*x+y)", dim)
    return GridMeasure(dim, atoms, density)


# 1 ------------------------------------------------------------------------------

def oracle_fixtures():
    rng = np.random.default_rng(2024)
    fixtures = [(3, np.array([0.0, -1.0, 0.0]), np.full(3, -0.1))]
    for n in range(1, 6):
        for _ in range(12):
            b = rng.uniform(-3, 3, n)
            psi = rng.uniform(-0.6, 0.4, n)
            psi[rng.random(n) < 0.2] = -np.inf
            fixtures.append((n, b, psi))
        fixtures.append((n, np.zeros(n), np.zeros(n)))
    return fixtures


def test_criterion_01_oracle_equivalence(record):
    worst = 0.0
    with Timer() as t:
        for n, b, psi in oracle_fixtures():
            h = 1.0 / (n + 1)
            u_ref, lam_ref = unique_lcp(laplacian_1d(n, h), b, psi)
            op = assemble(build_grid([(0, 1)], 0, base=h))
            for method in ("activeset", "psor"):
                sol = solve_vi(op, b, psi, ViConfig(method=method))
                worst = max(worst, float(np.abs(sol.u - u_ref).max()),
                            float(np.abs(np.asarray(sol.reaction) - lam_ref).max()))
        hand = solve_vi(assemble(build_grid([(0, 1)], 2)), [0.0, -1.0, 0.0], -0.1)
        hand_ok = (np.allclose(hand.u, [-0.05, -0.1, -0.05], atol=1e-10, rtol=0)
                   and np.allclose(hand.reaction, [0, 0.6, 0], atol=1e-10, rtol=0))
    passed = worst <= 1e-10 and hand_ok and t.seconds < 1.0
    record(1, passed, f"{len(oracle_fixtures())} fixtures x 2 methods, worst {worst:.2e}, "
                      f"hand case {'ok' if hand_ok else 'wrong'}, {t.seconds:.2f}s")
    assert passed


# 2 ------------------------------------------------------------------------------

def test_criterion_02_mass_bound(record):
    rng = np.random.default_rng(7)
    grid = build_grid([(0, 1)] * 2, 4)
    op = assemble(grid)
    pts = grid.interior_points
    failures, worst_ratio, contact = 0, 0.0, 0
    with Timer() as t:
        for _ in range(200):
            mu = random_measure(rng, 2, negative_bias=1.0)
            c0, c1 = rng.uniform(0, 0.1, 2)
            psi = -(c0 + c1 * np.sin(np.pi * pts[0]) ** 2) * (rng.random() < 0.8)
            sol = solve_vi(op, mu, psi)
            rep = check_mass_bound(sol)
            failures += not rep.passed
            contact += sol.contact_nodes > 0
            if rep.tv_bound > 0:
                worst_ratio = max(worst_ratio, rep.mass_lambda / rep.tv_bound)
        rho_fail = 0
        for _ in range(40):
            mu = random_measure(rng, 2, negative_bias=1.0)
            rho = GridMeasure(2, [(tuple(rng.uniform(0.2, 0.8, 2)), rng.uniform(0.5, 2))],
                              Expression(f"{rng.uniform(0, 3):.6f}", 2))
            u_rho = solve_linear(op, load_vector(rho, grid))
            psi = rng.uniform(0.2, 1.0) * u_rho - rng.uniform(0, 0.05)
            sol = solve_vi(op, mu, psi, rho=rho)
            rho_fail += not check_mass_bound(sol, rho=rho).passed
    passed = failures == 0 and rho_fail == 0 and t.seconds < 120
    record(2, passed, f"200 instances ({contact} with contact), failures {failures}, "
                      f"worst mass/TV {worst_ratio:.4f}; rho variant 40 instances, failures "
                      f"{rho_fail}, {t.seconds:.1f}s")
    assert passed


# 3, 4 ---------------------------------------------------------------------------

def run_registered(record, criterion, name, budget, **overrides):
    with Timer() as t:
        result = run_experiment(name, **overrides)
    passed = result.passed and t.seconds < budget
    failing = [a.name for a in result.assertions if not a.passed]
    detail = f"{name}: {result.verdict}, {t.seconds:.1f}s"
    if failing:
        detail += " | failing: " + "; ".join(failing)
    record(criterion, passed, detail)
    return passed, result


def test_criterion_03_dirac_reaction(record):
    passed, result = run_registered(record, 3, "delta_reaction", 120)
    print(result.report())
    assert passed


def test_criterion_04_log_obstacle(record):
    passed, result = run_registered(record, 4, "unbounded_reaction", 10)
    print(result.report())
    assert passed


# 5 ------------------------------------------------------------------------------

def test_criterion_05_duality(record):
    rng = np.random.default_rng(11)
    grid = build_grid([(0, 1)] * 2, 4)
    sym = assemble(grid)
    s = Expression("0.3*sin(3*x+y)", 2)
    skew = assemble(grid, CoefficientField.matrix([[1.0, s], [lambda p: -s(p), 1.0]]))
    assert not skew.symmetric
    worst = 0.0
    with Timer() as t:
        for k in range(100):
            op = sym if k % 2 == 0 else skew
            mu = np.asarray(load_vector(random_measure(rng, 2), grid))
            g = rng.uniform(-1, 1, op.n)
            u_mu = solve_linear(op, mu)
            u_star = solve_linear(adjoint(op), g * grid.node_volume)
            scale = max(float(np.abs(u_mu) @ np.abs(g)) * grid.node_volume,
                        float(np.abs(u_star) @ np.abs(mu)), 1e-300)
            worst = max(worst, duality_check(op, mu, g) / scale)
    passed = worst <= 1e-7 and t.seconds < 60
    record(5, passed, f"100 pairs (50 symmetric, 50 nonsymmetric), worst residual/scale "
                      f"{worst:.2e}, {t.seconds:.1f}s")
    assert passed


# 6 ------------------------------------------------------------------------------

def test_criterion_06_comparison(record):
    rng = np.random.default_rng(13)
    grid = build_grid([(0, 1)] * 2, 4)
    op = assemble(grid)
    pts = grid.interior_points
    failures, worst = 0, 0.0
    with Timer() as t:
        for _ in range(100):
            mu2 = np.asarray(load_vector(random_measure(rng, 2, negative_bias=1.0), grid))
            gap = GridMeasure(2, [(tuple(rng.uniform(0.1, 0.9, 2)), rng.uniform(0, 1))],
                              Expression(f"{rng.uniform(0, 4):.6f}*x*x", 2))
            mu1 = mu2 - np.asarray(load_vector(gap, grid))
            psi = -rng.uniform(0, 0.1) * (1 + pts[1])
            rep = compare_reactions(op, mu1, mu2, psi, tol=1e-8)
            failures += not rep.passed
            worst = max(worst, rep.lambda_violation, rep.u_violation)
    passed = failures == 0 and t.seconds < 120
    record(6, passed, f"100 ordered pairs, failures {failures}, worst violation {worst:.2e}, "
                      f"{t.seconds:.1f}s")
    assert passed


# 7, 8 ---------------------------------------------------------------------------

def test_criterion_07_truncation(record):
    passed, result = run_registered(record, 7, "truncation_consistency", 180)
    print(result.report())
    assert passed


def test_criterion_08_stability(record):
    with Timer() as t:
        strong = run_experiment("stability_strong")
        obstacle = run_experiment("stability_obstacle")
    print(strong.report())
    print(obstacle.report())
    passed = strong.passed and obstacle.passed and t.seconds < 120
    record(8, passed, f"stability_strong: {strong.verdict}; stability_obstacle: "
                      f"{obstacle.verdict}, {t.seconds:.1f}s")
    assert passed


# 9 ------------------------------------------------------------------------------

def test_criterion_09_weak_star(record):
    passed, result = run_registered(record, 9, "weakstar_failure", 600, levels=[6])
    print(result.report())
    assert passed


# 10 -----------------------------------------------------------------------------

def random_grid_set(rng, grid):
    parts = []
    for _ in range(rng.integers(1, 4)):
        kind = rng.integers(3)
        if kind == 0:
            parts.append(grid_ball(grid, rng.uniform(0.1, 0.9, 2), rng.uniform(0.02, 0.2)))
        elif kind == 1:
            parts.append(grid_points(grid, rng.uniform(0.05, 0.95, (rng.integers(1, 5), 2))))
        else:
            idx = rng.choice(grid.n_interior, rng.integers(1, 20), replace=False)
            parts.append(GridSet(grid, idx))
    out = parts[0]
    for p in parts[1:]:
        out = out | p
    return out


def test_criterion_10_capacity(record):
    with Timer() as t:
        g1 = build_grid([(0, 1)], 2)
        point = capacity(assemble(g1), grid_points(g1, [0.5]))
        point_ok = point == 4.0

        rng = np.random.default_rng(17)
        grid = build_grid([(0, 1)] * 2, 4)
        op = assemble(grid)
        mono_fail, mass_worst = 0, 0.0
        for _ in range(50):
            small = random_grid_set(rng, grid)
            big = small | random_grid_set(rng, grid)
            c_small, sol = capacity(op, small, return_potential=True)
            c_big = capacity(op, big)
            mono_fail += not (small <= big and c_small <= c_big * (1 + 1e-12))
            mass_worst = max(mass_worst, abs(c_small - sol.mass))
        mass_ok = mass_worst <= 1e-8

        ball = Expression("0.25-((x-0.5)^2+(y-0.5)^2+(z-0.5)^2)", 3)
        g3 = build_grid([(0, 1)] * 3, 6, mask=ball)
        cond = capacity(assemble(g3), grid_ball(g3, (0.5, 0.5, 0.5), 0.1))
        target = 4 * math.pi / (1 / 0.1 - 1 / 0.5)
        cond_err = cond / target - 1
        cond_ok = abs(cond_err) <= 0.05
    passed = point_ok and mono_fail == 0 and mass_ok and cond_ok and t.seconds < 300
    record(10, passed, f"point capacity {point!r}; 50 sets: monotonicity failures {mono_fail}, "
                       f"|cap - mass| <= {mass_worst:.1e}; condenser {cond:.4f} vs "
                       f"{target:.4f} ({cond_err:+.1%}), {t.seconds:.1f}s")
    assert passed


# 11, 12 -------------------------------------------------------------------------

def test_criterion_11_entropy(record):
    passed, result = run_registered(record, 11, "entropy_check", 60)
    print(result.report())
    assert passed


def test_criterion_12_m0b_reaction(record):
    passed, result = run_registered(record, 12, "m0b_reaction", 600)
    print(result.report())
    assert passed
