"""Discrete obstacle problems as linear complementarity systems.

Given the measure-form operator ``A``, nodal data ``b`` and an obstacle
``psi`` (possibly ``-inf``), find ``u >= psi`` with reaction
``lam = A u - b >= 0`` and ``lam * (u - psi) = 0``.  Because ``A`` is an
M-matrix the solution exists, is unique, and is the smallest supersolution
above the obstacle.
"""

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from ._psor import run_psor
from .elliptic import LinearSolveConfig, solve_linear, solve_sparse, sobolev_norms
from .errors import ConvergenceError, FeasibilityError
from .grid import as_extended_grid_function, truncate
from .measure import GridMeasure, NodalMeasure, load_vector, total_variation

METHOD_ALIASES = {
    "activeset": "activeset",
    "active-set": "activeset",
    "pdas": "activeset",
    "primal-dual-active-set": "activeset",
    "psor": "psor",
    "projected-successive-overrelaxation": "psor",
}

PSOR_CHUNK = 25


@dataclass(frozen=True)
class ViConfig:
    """Solver settings.  ``max_iter`` counts PSOR sweeps or active-set steps."""

    method: str = "activeset"
    omega: float = 1.5
    tol: float = 1e-10
    max_iter: int = 200_000
    active_set_cap: float = 0.25
    linear: LinearSolveConfig = field(default_factory=LinearSolveConfig)

    def __post_init__(self):
        if self.method not in METHOD_ALIASES:
            raise ValueError(f"unknown VI method {self.method!r}")
        object.__setattr__(self, "method", METHOD_ALIASES[self.method])
        if not 0 < self.omega < 2:
            raise ValueError("omega must lie in (0, 2)")
        if not 0 < self.tol < 1:
            raise ValueError("tolerance must lie in (0, 1)")
        if self.max_iter < 1:
            raise ValueError("max_iter must be >= 1")
        if not 0 < self.active_set_cap <= 1:
            raise ValueError("active_set_cap must lie in (0, 1]")


@dataclass(eq=False)
class ViSolution:
    u: np.ndarray
    reaction: NodalMeasure
    iterations: int
    complementarity_residual: float
    feasibility_residual: float
    method: str
    load: np.ndarray = field(repr=False)
    psi: np.ndarray = field(repr=False)
    op: object = field(repr=False, default=None)
    contact: np.ndarray = field(repr=False, default=None)

    @property
    def mass(self):
        return float(np.asarray(self.reaction).sum())

    @property
    def contact_nodes(self):
        return int(self.contact.sum())

    @property
    def scale(self):
        return _scale(self.op, self.load, self.u)


def _scale(op, b, u):
    """Magnitude of the terms entering ``A u - b``, in mass units."""
    terms = abs(op.matrix) @ np.abs(u)
    value = max(float(np.abs(b).max(initial=0.0)), float(terms.max(initial=0.0)))
    return value if value > 0 else 1.0


def _u_scale(u, psi):
    finite = np.isfinite(psi)
    value = max(float(np.abs(u).max(initial=0.0)),
                float(np.abs(psi[finite]).max(initial=0.0)))
    return value if value > 0 else 1.0


def _load(mu, op):
    if isinstance(mu, GridMeasure):
        if op.grid is None:
            raise ValueError("a GridMeasure needs an operator built on a grid")
        return np.array(load_vector(mu, op.grid), dtype=float)
    b = np.array(mu, dtype=float)
    if b.shape != (op.n,):
        raise ValueError(f"expected {op.n} nodal masses, got shape {b.shape}")
    return b


def _obstacle(psi, n):
    psi = np.asarray(psi, dtype=float)
    if psi.ndim == 0:
        psi = np.full(n, float(psi))
    if np.any(np.isnan(psi)) or np.any(psi == np.inf):
        raise FeasibilityError("obstacle is +inf or undefined at some node")
    return as_extended_grid_function(psi, n)


def reaction(op, u, mu):
    """``op @ u - load(mu)`` as a nodal measure."""
    return NodalMeasure(op @ np.asarray(u, dtype=float) - _load(mu, op), op.grid)


def _finish(op, b, psi, u, iterations, method, tol):
    lam = op @ u - b
    finite = np.isfinite(psi)
    gap = np.where(finite, u - np.where(finite, psi, 0.0), np.inf)
    compl = float(np.abs(lam[finite] * gap[finite]).sum())
    feas = float(np.maximum(psi[finite] - u[finite], 0.0).max(initial=0.0))
    scale = _scale(op, b, u)
    u_tol = tol * _u_scale(u, psi)
    # degenerate ties (u = psi, lam = 0) count as non-contact
    contact = finite & (gap <= u_tol) & (lam > tol * scale)
    return ViSolution(u, NodalMeasure(lam, op.grid), iterations, compl, feas, method,
                      b, psi, op, contact)


def _check_domination(op, psi, rho, cfg):
    u_rho = solve_linear(op, _load(rho, op), cfg.linear)
    finite = np.isfinite(psi)
    excess = np.where(finite, psi - u_rho, -np.inf)
    worst = int(np.argmax(excess))
    if excess[worst] > 1e-10 * _u_scale(u_rho, psi):
        raise FeasibilityError(
            f"obstacle exceeds the potential of the dominating measure at node {worst} "
            f"by {excess[worst]:.3e}")


def solve_vi(op, mu, psi, cfg=None, rho=None, u0=None):
    """Solve the discrete obstacle problem for data ``mu`` above ``psi``.

    ``rho`` is an optional dominating measure; when given, ``psi`` must lie
    below its potential.  ``u0`` seeds PSOR.
    """
    cfg = cfg or ViConfig()
    b = _load(mu, op)
    psi = _obstacle(psi, op.n)
    if rho is not None:
        _check_domination(op, psi, rho, cfg)
    if op.n == 0:
        return _finish(op, b, psi, np.zeros(0), 0, cfg.method, cfg.tol)
    if cfg.method == "psor":
        return _solve_psor(op, b, psi, cfg, u0)
    return _solve_active_set(op, b, psi, cfg)


def _solve_psor(op, b, psi, cfg, u0):
    matrix = op.matrix
    finite = np.isfinite(psi)
    proj = np.where(finite, psi, -np.inf)
    if u0 is None:
        u = np.where(finite, np.maximum(proj, 0.0), 0.0)
    else:
        u = np.maximum(np.asarray(u0, dtype=float), proj)
    sweeps = 0
    b_scale = float(np.abs(b).max(initial=0.0))
    while True:
        chunk = min(PSOR_CHUNK, cfg.max_iter - sweeps)
        u, _ = run_psor(matrix, b, proj, u, cfg.omega, chunk)
        sweeps += chunk
        r = matrix @ u - b
        on_contact = finite & (u <= proj)
        res = np.where(on_contact, np.abs(np.minimum(r, 0.0)), np.abs(r))
        scale = max(b_scale, float((abs(matrix) @ np.abs(u)).max(initial=0.0))) or 1.0
        residual = float(res.max()) / scale
        if residual <= cfg.tol:
            return _finish(op, b, psi, u, sweeps, "psor", cfg.tol)
        if sweeps >= cfg.max_iter:
            raise ConvergenceError(
                f"PSOR stopped after {sweeps} sweeps with projected residual {residual:.3e}",
                residual=residual, iterations=sweeps)


def _solve_on_inactive(op, b, psi, active, cfg):
    u = np.where(active, psi, 0.0)
    inactive = ~active
    if inactive.any():
        matrix = op.matrix
        rhs = b[inactive] - matrix[inactive][:, active] @ psi[active]
        sub = matrix[inactive][:, inactive]
        dimension = op.grid.dimension if op.grid is not None else 3
        u[inactive], _ = solve_sparse(sub, rhs, cfg.linear, symmetric=op.symmetric,
                                      dimension=dimension)
    return u


_POLISH_TOL = 1e-13
_POLISH_STEPS = 5


def _solve_active_set(op, b, psi, cfg):
    n = op.n
    finite = np.isfinite(psi)
    c = float(op.diagonal.max())
    cap = max(1, int(math.ceil(cfg.active_set_cap * n)))
    u = _solve_on_inactive(op, b, psi, np.zeros(n, dtype=bool), cfg)
    active = finite & (u < psi)
    settled = None
    polish_steps = 0
    # the coarse threshold guards against cycling on rounding noise; once it
    # settles, a few polish steps at near machine precision clean up ties
    for iteration in range(1, cfg.max_iter + 1):
        u = _solve_on_inactive(op, b, psi, active, cfg)
        lam = op @ u - b
        lam[~active] = 0.0
        indicator = np.where(finite, lam + c * (np.where(finite, psi, 0.0) - u), -np.inf)
        rel = cfg.tol if settled is None else _POLISH_TOL
        threshold = rel * _scale(op, b, u)
        want = finite & (indicator > 0)
        flips = (want != active) & (np.abs(indicator) > threshold)
        if not flips.any():
            if settled is None and cfg.tol > _POLISH_TOL:
                settled = (u, iteration)
                continue
            return _finish(op, b, psi, u, iteration, "activeset", cfg.tol)
        if settled is not None:
            polish_steps += 1
            if polish_steps > _POLISH_STEPS:
                return _finish(op, b, psi, settled[0], settled[1], "activeset", cfg.tol)
        idx = np.nonzero(flips)[0]
        if idx.size > cap:
            idx = idx[np.argsort(-np.abs(indicator[idx]), kind="stable")[:cap]]
        active[idx] = ~active[idx]
    if settled is not None:
        return _finish(op, b, psi, settled[0], settled[1], "activeset", cfg.tol)
    raise ConvergenceError(f"active-set method did not settle in {cfg.max_iter} steps",
                           iterations=cfg.max_iter)


# -- verification ----------------------------------------------------------------

@dataclass
class MassBoundReport:
    mass_lambda: float
    tv_bound: float
    slack: float
    passed: bool


def check_mass_bound(sol, mu=None, rho=None):
    """Compare mass(lam) with the total mass of the negative part of mu - rho.

    ``mu`` defaults to the data the solution was computed from.
    """
    b = sol.load if mu is None else _load(mu, sol.op)
    if rho is not None:
        b = b - _load(rho, sol.op)
    bound = float(np.maximum(-b, 0.0).sum())
    mass = sol.mass
    passed = mass <= bound * (1 + 1e-8) + 1e-10
    return MassBoundReport(mass, bound, bound - mass, bool(passed))


@dataclass
class MinimalityReport:
    checked: int
    skipped: int
    worst_violation: float
    passed: bool


def check_minimality(sol, samples, tol=1e-8):
    """Every feasible ``v = u_mu + u_nu`` (nu >= 0) must dominate ``u``."""
    op = sol.op
    finite = np.isfinite(sol.psi)
    checked = skipped = 0
    worst = 0.0
    u_scale = _u_scale(sol.u, sol.psi)
    for nu in samples:
        nu = _load(nu, op)
        if np.any(nu < 0):
            raise ValueError("minimality samples must be nonnegative measures")
        v = solve_linear(op, sol.load + nu)
        if np.any(v[finite] < sol.psi[finite] - 1e-10 * u_scale):
            skipped += 1
            continue
        checked += 1
        worst = max(worst, float((sol.u - v).max(initial=0.0)))
    return MinimalityReport(checked, skipped, worst, worst <= tol * max(u_scale, 1.0))


@dataclass
class ComparisonReport:
    lambda_violation: float
    u_violation: float
    passed: bool
    first: Optional[ViSolution] = field(repr=False, default=None)
    second: Optional[ViSolution] = field(repr=False, default=None)


def compare_reactions(op, mu1, mu2, psi, cfg=None, tol=1e-8):
    """For ordered data ``mu1 <= mu2`` and ``psi <= 0``: ``lam1 >= lam2``."""
    b1, b2 = _load(mu1, op), _load(mu2, op)
    psi = _obstacle(psi, op.n)
    scale = max(float(np.abs(b1).max(initial=0.0)), float(np.abs(b2).max(initial=0.0)), 1.0)
    if np.any(b1 > b2 + 1e-14 * scale):
        raise ValueError("compare_reactions needs load(mu1) <= load(mu2)")
    if np.any(psi > 0):
        raise ValueError("compare_reactions needs psi <= 0")
    s1 = solve_vi(op, b1, psi, cfg)
    s2 = solve_vi(op, b2, psi, cfg)
    lam1, lam2 = np.asarray(s1.reaction), np.asarray(s2.reaction)
    lam_gap = float((lam2 - lam1).max(initial=0.0))
    u_gap = float((s1.u - s2.u).max(initial=0.0))
    return ComparisonReport(lam_gap, u_gap, lam_gap <= tol and u_gap <= tol, s1, s2)


@dataclass
class TruncationStep:
    k: float
    mass_lambda: float
    tv_mu_k: float
    w1q_gap: float


def solve_op_by_truncation(op, mu, psi, schedule, rho=None, cfg=None, q=None):
    """Solve with the truncated data ``A T_k(u_{mu-rho}) + rho`` for each k.

    Returns the final solution, the per-k trace and the total variation of
    ``mu - rho`` that bounds every ``tv_mu_k``.
    """
    from .measure import regularize_by_truncation

    cfg = cfg or ViConfig()
    schedule = [float(k) for k in schedule]
    if not schedule or any(k <= 0 for k in schedule):
        raise ValueError("truncation levels must be positive")
    if any(b <= a for a, b in zip(schedule, schedule[1:])):
        raise ValueError("truncation schedule must be strictly increasing")
    b_mu = _load(mu, op)
    b_rho = np.zeros(op.n) if rho is None else _load(rho, op)
    psi = _obstacle(psi, op.n)
    if rho is not None:
        _check_domination(op, psi, rho, cfg)
    shifted = b_mu - b_rho
    solutions, tvs = [], []
    for k in schedule:
        mu_k = np.asarray(regularize_by_truncation(shifted, k, op, cfg.linear))
        tvs.append(total_variation(mu_k))
        solutions.append(solve_vi(op, mu_k + b_rho, psi, cfg))
    final = solutions[-1]
    trace = []
    for k, tv, sol in zip(schedule, tvs, solutions):
        gap = (sobolev_norms(sol.u - final.u, op.grid, q).w1q
               if op.grid is not None else float("nan"))
        trace.append(TruncationStep(k, sol.mass, tv, gap))
    return final, trace, total_variation(shifted)


def entropy_residual(sol, f, F, v, j):
    """``<A u - f - F, T_j(v - u)>`` for a bounded competitor ``v >= psi``.

    ``f`` holds nodal density values (mass per volume), ``F`` is the
    divergence part as a GridMeasure or as nodal masses; either may be None.
    """
    if j <= 0:
        raise ValueError("j must be positive")
    op = sol.op
    v = np.asarray(v, dtype=float)
    if not np.all(np.isfinite(v)):
        raise ValueError("competitor must be bounded")
    finite = np.isfinite(sol.psi)
    if np.any(v[finite] < sol.psi[finite] - 1e-10 * _u_scale(sol.u, sol.psi)):
        raise ValueError("competitor lies below the obstacle")
    t = truncate(v - sol.u, j)
    value = float(np.dot(op @ sol.u, t))
    if f is not None:
        volume = op.grid.node_volume if op.grid is not None else 1.0
        value -= float(np.dot(np.asarray(f, dtype=float) * volume, t))
    if F is not None:
        value -= float(np.dot(_load(F, op), t))
    return value


@dataclass
class ReactionClassReport:
    masses: list
    shares: list
    contact_volumes: list
    verdict: str
    passed: bool


def reaction_class_check(solutions, mu=None, min_drop=1e-9):
    """Track the largest single-node share of mass(lam) across levels.

    Only contact nodes carry reaction; off-contact residuals are solver
    noise and are ignored.  A share that keeps falling (by more than
    ``min_drop`` per level) means no atom forms; a share that stays above
    one half flags an atomic reaction.
    """
    masses, shares, volumes = [], [], []
    for sol in solutions:
        lam = np.where(sol.contact, np.asarray(sol.reaction), 0.0)
        total = float(lam.sum())
        masses.append(total)
        shares.append(float(lam.max(initial=0.0)) / total if total > 0 else 0.0)
        grid = sol.op.grid
        volumes.append(sol.contact_nodes * (grid.node_volume if grid is not None else 1.0))
    if all(m <= 0 for m in masses):
        return ReactionClassReport(masses, shares, volumes, "no reaction", True)
    decreasing = all(b < a - min_drop for a, b in zip(shares, shares[1:]))
    if decreasing:
        verdict = "diffuse reaction"
    elif shares[-1] >= 0.5:
        verdict = "atomic reaction"
    else:
        verdict = "inconclusive"
    if isinstance(mu, GridMeasure) and not mu.is_m0b and verdict == "diffuse reaction":
        verdict += " (data carries atoms)"
    return ReactionClassReport(masses, shares, volumes, verdict, decreasing)
