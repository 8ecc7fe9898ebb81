"""Linear solves with the assembled operator, duality and discrete norms."""

import warnings
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import ConvergenceError
from .grid import INTERIOR, adjoint

# Above this many unknowns a 3-D system goes to AMG-preconditioned Krylov;
# sparse LU fill-in grows too fast there.  2-D systems stay direct.
DIRECT_LIMIT_3D = 40_000
DIRECT_LIMIT = 600_000
REFINEMENT_STEPS = 4


@dataclass(frozen=True)
class LinearSolveConfig:
    """``method`` is one of auto, direct, cg, bicgstab."""

    tol: float = 1e-10
    max_iter: int = 2000
    method: str = "auto"

    def __post_init__(self):
        if not 0 < self.tol < 1:
            raise ValueError("tolerance must lie in (0, 1)")
        if self.max_iter < 1:
            raise ValueError("max_iter must be >= 1")
        if self.method not in ("auto", "direct", "cg", "bicgstab"):
            raise ValueError(f"unknown linear method {self.method!r}")


@dataclass(frozen=True)
class LinearSolveInfo:
    residual: float
    iterations: int
    method: str


def _choose(method, n, symmetric, dimension):
    if method != "auto":
        return method
    limit = DIRECT_LIMIT_3D if dimension >= 3 else DIRECT_LIMIT
    if n <= limit:
        return "direct"
    return "cg" if symmetric else "bicgstab"


def _max_residual(matrix, u, b):
    return float(np.abs(matrix @ u - b).max()) if b.size else 0.0


def solve_sparse(matrix, b, cfg=None, symmetric=None, dimension=3):
    """Solve ``matrix @ u = b`` to a max-norm relative residual of ``cfg.tol``.

    Returns ``(u, LinearSolveInfo)``.
    """
    cfg = cfg or LinearSolveConfig()
    b = np.asarray(b, dtype=float)
    if not np.all(np.isfinite(b)):
        raise ValueError("right-hand side must be finite")
    n = b.shape[0]
    b_norm = float(np.abs(b).max()) if n else 0.0
    if b_norm == 0.0:
        return np.zeros(n), LinearSolveInfo(0.0, 0, "trivial")
    matrix = sp.csr_matrix(matrix)
    if symmetric is None:
        symmetric = (matrix != matrix.T).nnz == 0
    method = _choose(cfg.method, n, symmetric, dimension)
    target = cfg.tol * b_norm

    if method == "direct":
        lu = spla.splu(matrix.tocsc())
        u = lu.solve(b)
        residual = _max_residual(matrix, u, b)
        steps = 0
        while residual > target and steps < REFINEMENT_STEPS:
            u += lu.solve(b - matrix @ u)
            residual = _max_residual(matrix, u, b)
            steps += 1
        if residual > target:
            raise ConvergenceError(
                f"direct solve residual {residual:.3e} above {target:.3e}",
                residual=residual, iterations=steps)
        return u, LinearSolveInfo(residual / b_norm, steps, "direct")

    import pyamg

    if method == "cg":
        ml = pyamg.smoothed_aggregation_solver(matrix, symmetry="symmetric")
        accel = "cg"
    else:
        ml = pyamg.smoothed_aggregation_solver(matrix, symmetry="nonsymmetric")
        accel = "bicgstab"
    u = np.zeros(n)
    iterations = 0
    residual = b_norm
    # pyamg stops on the 2-norm; repeat on the residual until the max norm is met
    for _ in range(REFINEMENT_STEPS + 1):
        history = []
        r = b - matrix @ u
        u += ml.solve(r, x0=np.zeros(n), tol=cfg.tol * 0.1, maxiter=cfg.max_iter,
                      accel=accel, residuals=history)
        iterations += len(history)
        residual = _max_residual(matrix, u, b)
        if residual <= target or iterations >= cfg.max_iter:
            break
    if residual > target:
        raise ConvergenceError(
            f"{method} stopped after {iterations} iterations with residual "
            f"{residual / b_norm:.3e}", residual=residual / b_norm, iterations=iterations)
    return u, LinearSolveInfo(residual / b_norm, iterations, method)


def solve_linear(op, b, cfg=None, return_info=False):
    """Solve ``op @ u = b`` for nodal masses ``b``."""
    dimension = op.grid.dimension if op.grid is not None else 3
    u, info = solve_sparse(op.matrix, np.asarray(b, dtype=float), cfg,
                           symmetric=op.symmetric, dimension=dimension)
    return (u, info) if return_info else u


def duality_check(op, mu, g, cfg=None, h=None):
    """``|sum u_mu g h^N - sum u*_g mu|`` with ``adjoint(op) @ u*_g = g h^N``."""
    if h is None:
        if op.grid is None:
            raise ValueError("grid spacing is needed when the operator has no grid")
        volume = op.grid.node_volume
    else:
        dimension = op.grid.dimension if op.grid is not None else 1
        volume = h ** dimension
    mu = np.asarray(mu, dtype=float)
    g = np.asarray(g, dtype=float)
    u_mu = solve_linear(op, mu, cfg)
    u_star = solve_linear(adjoint(op), g * volume, cfg)
    return abs(float(np.dot(u_mu, g)) * volume - float(np.dot(u_star, mu)))


class SobolevNorms(NamedTuple):
    lq: float
    w1q: float
    q: float
    in_range: bool


def default_q(dimension):
    return 1.1


def sobolev_norms(u, grid, q=None):
    """Discrete L^q norm and W^{1,q} seminorm of a grid function.

    Differences run over every lattice edge with an interior endpoint; the
    eliminated boundary value is zero.  Exponents outside (1, N/(N-1)) are
    accepted with a warning and ``in_range=False``.
    """
    n_dim = grid.dimension
    q = default_q(n_dim) if q is None else float(q)
    if q <= 1:
        raise ValueError(f"exponent q must exceed 1, got {q}")
    upper = np.inf if n_dim == 1 else n_dim / (n_dim - 1)
    in_range = q < upper
    if not in_range:
        warnings.warn(f"q={q} lies outside (1, {upper:g}); norms are reported anyway",
                      stacklevel=2)
    u = np.asarray(u, dtype=float)
    volume = grid.node_volume
    lq = _scaled_norm(u, q, volume)

    lattice = grid.to_lattice(u)
    interior = grid.classification == INTERIOR
    slopes = []
    for axis in range(n_dim):
        lo = [slice(None)] * n_dim
        hi = [slice(None)] * n_dim
        lo[axis] = slice(0, -1)
        hi[axis] = slice(1, None)
        lo, hi = tuple(lo), tuple(hi)
        touching = interior[lo] | interior[hi]
        slopes.append((lattice[hi] - lattice[lo])[touching] / grid.h)
    w1q = _scaled_norm(np.concatenate(slopes), q, volume)
    return SobolevNorms(lq, w1q, q, in_range)


def _scaled_norm(values, p, volume):
    """``(volume * sum |v|^p)^(1/p)`` without underflow or overflow in the powers."""
    peak = float(np.abs(values).max(initial=0.0))
    if peak == 0.0:
        return 0.0
    return peak * float((np.abs(values / peak) ** p).sum() * volume) ** (1 / p)


def lp_norm(u, grid, p):
    """Plain discrete L^p norm, used for the Green-function growth check."""
    return _scaled_norm(np.asarray(u, dtype=float), p, grid.node_volume)
