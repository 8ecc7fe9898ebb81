"""Capacities, capacitary potentials and generators for named examples."""

import ast
import math
from dataclasses import dataclass, field
from itertools import product

import numpy as np

from .elliptic import solve_linear, solve_sparse
from .errors import ResolutionError, SymmetryError
from .expressions import Expression
from .grid import assemble, build_grid
from .measure import NodalMeasure, atom, load_vector
from .obstacle import ViConfig, _finish, solve_vi

BALL_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class GridSet:
    """A set of interior nodes of ``grid`` (sorted, unique row indices)."""

    grid: object
    indices: np.ndarray

    def __post_init__(self):
        idx = np.unique(np.asarray(self.indices, dtype=np.int64))
        if idx.size and (idx[0] < 0 or idx[-1] >= self.grid.n_interior):
            raise ValueError("grid set indices must address interior nodes")
        object.__setattr__(self, "indices", idx)

    def __len__(self):
        return int(self.indices.size)

    def __or__(self, other):
        return GridSet(self.grid, np.concatenate([self.indices, other.indices]))

    def __le__(self, other):
        return bool(np.isin(self.indices, other.indices).all())

    @property
    def mask(self):
        out = np.zeros(self.grid.n_interior, dtype=bool)
        out[self.indices] = True
        return out


def grid_ball(grid, centre, radius, include_centre_node=False):
    """Interior nodes with ``|x - c| <= r``; optionally add the node nearest c."""
    pts = grid.interior_points
    c = np.asarray(centre, dtype=float).reshape(-1, 1)
    dist = np.sqrt(((pts - c) ** 2).sum(axis=0))
    idx = np.nonzero(dist <= radius * (1 + BALL_TOL) + BALL_TOL)[0]
    if include_centre_node and pts.shape[1]:
        idx = np.append(idx, int(np.argmin(dist)))
    return GridSet(grid, idx)


def grid_box(grid, lo, hi):
    pts = grid.interior_points
    lo = np.asarray(lo, dtype=float).reshape(-1, 1) - BALL_TOL
    hi = np.asarray(hi, dtype=float).reshape(-1, 1) + BALL_TOL
    return GridSet(grid, np.nonzero(((pts >= lo) & (pts <= hi)).all(axis=0))[0])


def grid_points(grid, points):
    """The interior node nearest to each given point."""
    return GridSet(grid, [grid.nearest_node(np.atleast_1d(p)) for p in points])


def _literal(node):
    return ast.literal_eval(node)


def parse_grid_set(text, grid):
    """Parse ``ball(c, r) | box(lo, hi) | points([...])`` into a GridSet."""
    try:
        tree = ast.parse(text.strip(), mode="eval").body
    except SyntaxError as exc:
        raise ValueError(f"malformed set literal {text!r}: {exc.msg}") from None

    def walk(node):
        if isinstance(node, ast.BinOp) and isinstance(node.op, ast.BitOr):
            return walk(node.left) | walk(node.right)
        if isinstance(node, ast.Call) and isinstance(node.func, ast.Name) and not node.keywords:
            name = node.func.id
            try:
                args = [_literal(a) for a in node.args]
            except ValueError:
                raise ValueError(f"set literal arguments must be numbers: {ast.unparse(node)}")
            if name == "ball" and len(args) == 2:
                return grid_ball(grid, np.atleast_1d(args[0]), float(args[1]))
            if name == "box" and len(args) == 2:
                return grid_box(grid, np.atleast_1d(args[0]), np.atleast_1d(args[1]))
            if name == "points" and len(args) == 1:
                return grid_points(grid, args[0])
        raise ValueError(f"unsupported set literal {ast.unparse(node)!r}")

    return walk(tree)


def capacitary_potential(op, E, cfg=None):
    """Smallest supersolution with ``u >= 1`` on E and no constraint elsewhere."""
    n = op.n
    if len(E) == 0:
        return _finish(op, np.zeros(n), np.full(n, -np.inf), np.zeros(n), 0, "trivial",
                       (cfg or ViConfig()).tol)
    psi = np.full(n, -np.inf)
    psi[E.indices] = 1.0
    return solve_vi(op, np.zeros(n), psi, cfg)


def capacity(op, E, cfg=None, return_potential=False):
    """Dirichlet energy ``<A w, w>`` of the capacitary potential of E."""
    if not op.symmetric:
        raise SymmetryError(
            "capacity needs a symmetric operator; use the adjoint potential instead")
    sol = capacitary_potential(op, E, cfg)
    energy = float(np.dot(op @ sol.u, sol.u))
    return (energy, sol) if return_potential else energy


@dataclass
class PointCapacityTable:
    levels: list
    h: list
    capacities: list
    decreasing: bool
    model_values: list
    model_target: float
    passed: bool


def point_capacity_decay(ops, x0, rel_tol=0.25):
    """Capacity of the node nearest ``x0`` across a family of refined operators.

    For N = 2 the model is ``1/cap ~ log(1/h) / (2 pi)``, so successive
    differences of ``1/cap`` approach ``log(2) / (2 pi)``; for N = 3 the
    capacity scales like ``h`` and successive ratios approach 1/2.  The last
    three model values must match within ``rel_tol``.
    """
    dims = {op.grid.dimension for op in ops}
    if len(dims) != 1:
        raise ValueError("all operators must share one dimension")
    dim = dims.pop()
    if dim < 2:
        raise ValueError("points have positive capacity in one dimension")
    levels, hs, caps = [], [], []
    for op in ops:
        node = op.grid.nearest_node(np.asarray(x0, dtype=float))
        caps.append(capacity(op, GridSet(op.grid, [node])))
        levels.append(op.grid.level)
        hs.append(op.grid.h)
    decreasing = all(b < a for a, b in zip(caps, caps[1:]))
    if dim == 2:
        model = [1 / b - 1 / a for a, b in zip(caps, caps[1:])]
        target = math.log(2) / (2 * math.pi)
    else:
        model = [b / a for a, b in zip(caps, caps[1:])]
        target = 0.5
    tail = model[-3:]
    fits = bool(tail) and all(abs(m - target) <= rel_tol * target for m in tail)
    return PointCapacityTable(levels, hs, caps, decreasing, model, target,
                              decreasing and fits)


def _resolution_level(r, base=1.0):
    """Smallest level with ``h < r``."""
    return max(0, int(math.floor(math.log2(base / r))) + 1)


@dataclass(eq=False)
class CMScenario:
    """Perforation data for one n: potential ``w``, data ``mu = -op w``."""

    n: int
    radius: float
    grid: object
    op: object
    w: np.ndarray
    mu: NodalMeasure
    psi: np.ndarray
    holes: GridSet = field(repr=False)


def cm_radius(n, dimension=3):
    return (1.0 / (2 * n)) ** (dimension / (dimension - 2))


def cm_scenario(n, dimension=3, level=6, strict=True, op=None):
    """Periodic perforation of the unit cube by n**N small balls.

    Each cube of side 1/n carries the capacitary potential of its ball of
    radius ``r_n = (1/2n)**(N/(N-2))`` relative to the inscribed ball,
    extended by zero.  The data is ``mu_n = Delta_h w_n = -op @ w_n``.

    With ``strict`` a grid coarser than ``r_n`` raises ResolutionError;
    otherwise every hole also contains the node nearest its centre.
    """
    if dimension != 3:
        raise ValueError("the perforation example needs N = 3")
    if n < 1:
        raise ValueError("n must be a positive integer")
    r = cm_radius(n, dimension)
    if op is not None:
        level = op.grid.level
    needed = _resolution_level(r)
    if strict and level < needed:
        raise ResolutionError(
            f"h = 2^-{level} does not resolve r_n = {r:.6g}; level {needed} is required",
            required_level=needed)
    if op is None:
        grid = build_grid([(0.0, 1.0)] * dimension, level)
        op = assemble(grid)
    grid = op.grid
    pts = grid.interior_points
    outer = 1.0 / (2 * n)
    w = np.zeros(grid.n_interior)
    holes = []
    matrix = op.matrix
    for cell in product(range(n), repeat=dimension):
        centre = (np.asarray(cell, dtype=float) + 0.5) / n
        hole = grid_ball(grid, centre, r, include_centre_node=not strict)
        holes.append(hole.indices)
        dist = np.sqrt(((pts - centre.reshape(-1, 1)) ** 2).sum(axis=0))
        ring = (dist < outer * (1 - BALL_TOL)) & ~hole.mask
        w[hole.indices] = 1.0
        if ring.any():
            rhs = -matrix[ring][:, hole.indices] @ np.ones(len(hole))
            w[ring], _ = solve_sparse(matrix[ring][:, ring], rhs, symmetric=True,
                                      dimension=dimension)
    mu = NodalMeasure(-(op @ w), grid)
    holes = GridSet(grid, np.concatenate(holes))
    psi = np.zeros(grid.n_interior)
    psi[holes.indices] = 1.0
    return CMScenario(n, r, grid, op, w, mu, psi, holes)


LOG_OBSTACLE = "(1-abs(x))*(1-log(1-abs(x)))"
LOG_REACTION_DENSITY = "1/(1-abs(x))"


@dataclass
class NamedObstacle:
    psi: np.ndarray
    reference: dict


def named_obstacles(kind, grid, op=None, **params):
    """Obstacles used by the experiments.

    kinds: ``log-obstacle-1d``, ``green-pole`` (params ``x0``, needs ``op``),
    ``constant`` (param ``value``), ``custom-expression`` (param ``expr``).
    """
    pts = grid.interior_points
    if kind == "log-obstacle-1d":
        if grid.dimension != 1:
            raise ValueError("the log obstacle lives on a 1-D grid")
        psi = Expression(LOG_OBSTACLE, 1)(pts)
        density = Expression(LOG_REACTION_DENSITY, 1)
        return NamedObstacle(psi, {"reaction_density": density,
                                   "reaction_density_nodal": density(pts)})
    if kind == "green-pole":
        if op is None:
            op = assemble(grid)
        x0 = np.atleast_1d(np.asarray(params.get("x0", [0.5] * grid.dimension), dtype=float))
        pole = atom(tuple(x0), 1.0)
        psi = solve_linear(op, load_vector(pole, grid))
        return NamedObstacle(psi, {"pole": tuple(x0), "pole_measure": pole})
    if kind == "constant":
        value = float(params.get("value", -1.0))
        return NamedObstacle(np.full(grid.n_interior, value), {"value": value})
    if kind == "custom-expression":
        expr = params.get("expr")
        if expr is None:
            raise ValueError("custom-expression needs expr")
        if not isinstance(expr, Expression):
            expr = Expression(expr, grid.dimension)
        return NamedObstacle(expr(pts), {"expr": expr.source})
    raise ValueError(f"unknown obstacle kind {kind!r}")
