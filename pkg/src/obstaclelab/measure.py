"""Bounded measures on the grid: atoms, densities and divergence-form data.

A :class:`GridMeasure` is grid independent; :func:`load_vector` projects it
onto the interior nodes of a particular grid as a :class:`NodalMeasure`
(one mass per node), which is also the native form of obstacle reactions.
"""

from itertools import product
import numpy as np

from .errors import PlacementError
from .grid import EXTERIOR, INTERIOR, truncate

NODE_SNAP = 1e-12


class NodalMeasure:
    """One real mass per interior node.  Immutable."""

    __slots__ = ("_values", "grid")

    def __init__(self, values, grid=None):
        values = np.array(values, dtype=float)
        if values.ndim != 1:
            raise ValueError("nodal masses must be a 1-D array")
        if grid is not None and values.shape[0] != grid.n_interior:
            raise ValueError(
                f"expected {grid.n_interior} nodal masses, got {values.shape[0]}")
        values.flags.writeable = False
        self._values = values
        self.grid = grid

    @property
    def values(self):
        return self._values

    def __array__(self, dtype=None, copy=None):
        if dtype is None:
            return self._values.copy() if copy else self._values
        return self._values.astype(dtype)

    def __len__(self):
        return self._values.shape[0]

    def _wrap(self, values):
        return NodalMeasure(values, self.grid)

    def __add__(self, other):
        return self._wrap(self._values + np.asarray(other, dtype=float))

    __radd__ = __add__

    def __sub__(self, other):
        return self._wrap(self._values - np.asarray(other, dtype=float))

    def __rsub__(self, other):
        return self._wrap(np.asarray(other, dtype=float) - self._values)

    def __mul__(self, scalar):
        return self._wrap(float(scalar) * self._values)

    __rmul__ = __mul__

    def __neg__(self):
        return self._wrap(-self._values)

    def __repr__(self):
        return f"NodalMeasure(n={len(self)}, tv={total_variation(self):.6g})"

    @property
    def total_variation(self):
        return float(np.abs(self._values).sum())

    @property
    def mass(self):
        return float(self._values.sum())


def _as_flux(flux, dimension):
    if flux is None:
        return None
    if callable(flux):
        return flux
    parts = list(flux)
    if len(parts) != dimension:
        raise ValueError(f"flux needs {dimension} components, got {len(parts)}")

    def stacked(points):
        points = np.asarray(points, dtype=float)
        return np.stack([np.broadcast_to(np.asarray(p(points) if callable(p) else p,
                                                    dtype=float), points.shape[1:])
                         for p in parts])
    stacked.components = parts
    return stacked


class GridMeasure:
    """Atoms, an integrable density and a divergence-form part ``-div G``.

    ``atoms`` is a sequence of ``(location, weight)`` with ``location`` an
    N-tuple.  ``density`` is a callable on coordinate arrays (mass per unit
    volume) or an array of nodal values for one fixed grid.  ``flux`` is a
    callable returning the N components of ``G`` or a sequence of N
    callables, one per axis; ``G_i`` is sampled at edge midpoints.
    """

    def __init__(self, dimension, atoms=(), density=None, flux=None, box=None):
        if dimension not in (1, 2, 3):
            raise ValueError("dimension must be 1, 2 or 3")
        self.dimension = dimension
        merged = {}
        for location, weight in atoms:
            loc = tuple(float(c) for c in np.atleast_1d(location))
            if len(loc) != dimension:
                raise ValueError(f"atom location {loc} is not {dimension}-dimensional")
            if box is not None:
                for c, (lo, hi) in zip(loc, box):
                    if not lo <= c <= hi:
                        raise PlacementError(f"atom at {loc} lies outside the domain box")
            merged[loc] = merged.get(loc, 0.0) + float(weight)
        self.atoms = tuple((loc, w) for loc, w in merged.items() if w != 0.0)
        self.density = density
        self.flux = _as_flux(flux, dimension)
        self.box = box

    @property
    def is_m0b(self):
        """Diffuse data only (density plus divergence part, no atoms)."""
        return not self.atoms

    def __add__(self, other):
        if not isinstance(other, GridMeasure) or other.dimension != self.dimension:
            return NotImplemented
        return GridMeasure(
            self.dimension,
            self.atoms + other.atoms,
            _combine(self.density, other.density, 1.0, 1.0),
            _combine(self.flux, other.flux, 1.0, 1.0),
            self.box,
        )

    def __mul__(self, scalar):
        scalar = float(scalar)
        return GridMeasure(
            self.dimension,
            tuple((loc, scalar * w) for loc, w in self.atoms),
            _combine(self.density, None, scalar, 0.0),
            _combine(self.flux, None, scalar, 0.0),
            self.box,
        )

    __rmul__ = __mul__

    def __neg__(self):
        return self * -1.0

    def __sub__(self, other):
        return self + (-other)

    def __repr__(self):
        parts = [f"atoms={len(self.atoms)}"]
        if self.density is not None:
            parts.append("density")
        if self.flux is not None:
            parts.append("flux")
        return f"GridMeasure(N={self.dimension}, {', '.join(parts)})"


def _combine(f, g, a, b):
    if f is None and g is None:
        return None
    if isinstance(f, np.ndarray) or isinstance(g, np.ndarray):
        fa = 0.0 if f is None else np.asarray(f)
        gb = 0.0 if g is None else np.asarray(g)
        return a * fa + b * gb

    def combined(points):
        out = 0.0
        if f is not None:
            out = out + a * np.asarray(f(points))
        if g is not None:
            out = out + b * np.asarray(g(points))
        return out
    return combined


def atom(location, weight, dimension=None):
    location = tuple(np.atleast_1d(location))
    return GridMeasure(dimension or len(location), [(location, weight)])


def dirac(location, weight=1.0):
    return atom(location, weight)


# -- projections ---------------------------------------------------------------

def _density_nodal(m, grid):
    if m.density is None:
        return np.zeros(grid.n_interior)
    if isinstance(m.density, np.ndarray):
        values = np.asarray(m.density, dtype=float)
        if values.shape != (grid.n_interior,):
            raise ValueError("nodal density does not match the grid")
    else:
        with np.errstate(divide="ignore", invalid="ignore"):
            values = np.broadcast_to(np.asarray(m.density(grid.interior_points), dtype=float),
                                     (grid.n_interior,))
    if not np.all(np.isfinite(values)):
        raise ValueError("density is not finite at some interior node")
    return values * grid.node_volume


def _flux_nodal(m, grid):
    """Nodal masses of ``-div G``: sum over axes of G(p - h/2) - G(p + h/2)."""
    out = np.zeros(grid.n_interior)
    if m.flux is None:
        return out
    pts = grid.interior_points
    area = grid.h ** (grid.dimension - 1)
    for axis in range(grid.dimension):
        step = np.zeros((grid.dimension, 1))
        step[axis] = grid.h / 2
        g_minus = np.asarray(m.flux(pts - step), dtype=float)[axis]
        g_plus = np.asarray(m.flux(pts + step), dtype=float)[axis]
        out += area * (g_minus - g_plus)
    if not np.all(np.isfinite(out)):
        raise ValueError("flux is not finite at some edge midpoint")
    return out


def _atom_nodal(m, grid):
    out = np.zeros(grid.n_interior)
    lower = np.asarray(grid.lower)
    shape = np.asarray(grid.shape)
    for loc, weight in m.atoms:
        x = np.asarray(loc)
        if np.any(x < lower - NODE_SNAP * grid.h) or np.any(x > np.asarray(grid.upper) + NODE_SNAP * grid.h):
            raise PlacementError(f"atom at {loc} lies outside the domain box")
        s = (x - lower) / grid.h
        snapped = np.round(s)
        s = np.where(np.abs(s - snapped) < NODE_SNAP * np.maximum(1.0, np.abs(s)), snapped, s)
        cell = np.clip(np.floor(s).astype(int), 0, shape - 2)
        t = s - cell
        corners = []
        any_interior = False
        for bits in product((0, 1), repeat=grid.dimension):
            node = tuple(int(c + b) for c, b in zip(cell, bits))
            w = float(np.prod([ti if b else 1 - ti for ti, b in zip(t, bits)]))
            cls = grid.classification[node]
            any_interior |= cls == INTERIOR
            if w > 0:
                corners.append((node, w, cls))
        if not any_interior or all(cls == EXTERIOR for _, _, cls in corners):
            raise PlacementError(f"atom at {loc} falls in a cell outside the domain")
        for node, w, cls in corners:
            if cls == INTERIOR:
                out[grid.index[node]] += weight * w
    return out


def load_vector(m, grid):
    """Nodal masses of ``m`` on the interior nodes of ``grid``."""
    if isinstance(m, NodalMeasure):
        return m
    if m.dimension != grid.dimension:
        raise ValueError("measure and grid dimensions differ")
    values = _atom_nodal(m, grid) + _density_nodal(m, grid) + _flux_nodal(m, grid)
    return NodalMeasure(values, grid)


def jordan_decompose(m):
    """Positive and negative parts of a nodal measure."""
    values = np.asarray(m, dtype=float)
    grid = getattr(m, "grid", None)
    return (NodalMeasure(np.maximum(values, 0.0), grid),
            NodalMeasure(np.maximum(-values, 0.0), grid))


def total_variation(m, grid=None):
    """Total variation; a GridMeasure with diffuse parts needs ``grid``."""
    if isinstance(m, GridMeasure):
        tv = float(sum(abs(w) for _, w in m.atoms))
        if m.density is not None or m.flux is not None:
            if grid is None:
                raise ValueError("a grid is needed for densities and fluxes")
            tv += float(np.abs(_density_nodal(m, grid)).sum())
            tv += float(np.abs(_flux_nodal(m, grid)).sum())
        return tv
    return float(np.abs(np.asarray(m, dtype=float)).sum())


def weak_star_pairing(m, phi):
    """``sum_i phi_i m_i``."""
    m = np.asarray(m, dtype=float)
    phi = np.broadcast_to(np.asarray(phi, dtype=float), m.shape)
    return float(np.dot(phi, m))


def regularize_by_truncation(mu, k, op, cfg=None):
    """``op @ T_k(u_mu)`` where ``op @ u_mu = load(mu)``."""
    from .elliptic import solve_linear

    if k <= 0:
        raise ValueError("truncation level must be positive")
    load = load_vector(mu, op.grid) if isinstance(mu, GridMeasure) else np.asarray(mu, float)
    if not np.any(load):
        return NodalMeasure(np.zeros(op.n), op.grid)
    u = solve_linear(op, load, cfg)
    return NodalMeasure(op @ truncate(u, k), op.grid)


# -- test-function panel -------------------------------------------------------

_PANEL_CENTRES = ((0.30, 0.40, 0.60), (0.70, 0.55, 0.35))


def bump_panel(box):
    """Five fixed smooth functions vanishing on the box boundary.

    Returns a list of ``(name, callable)``; each callable maps coordinates of
    shape ``(N, ...)`` to values.  All five are positive inside the box, so
    no pairing vanishes by symmetry alone.
    """
    lower = np.array([lo for lo, _ in box], dtype=float)
    width = np.array([hi - lo for lo, hi in box], dtype=float)
    dim = len(box)

    def unit(points):
        points = np.asarray(points, dtype=float)
        shape = (dim,) + (1,) * (points.ndim - 1)
        return (points - lower.reshape(shape)) / width.reshape(shape)

    def sines(t):
        return np.prod(np.sin(np.pi * np.clip(t, 0, 1)), axis=0)

    def gauss(centre, beta):
        c = np.array(centre[:dim])

        def f(points):
            t = unit(points)
            shape = (dim,) + (1,) * (t.ndim - 1)
            r2 = ((t - c.reshape(shape)) ** 2).sum(axis=0)
            return sines(t) * np.exp(-beta * r2)
        return f

    panel = [
        ("sine_squared", lambda p: sines(unit(p)) ** 2),
        ("sine_tilted", lambda p: sines(unit(p)) ** 2 * (1.0 + unit(p)[0])),
        ("gauss_a", gauss(_PANEL_CENTRES[0], 6.0)),
        ("gauss_b", gauss(_PANEL_CENTRES[1], 10.0)),
        ("sine_cubed_mixed", lambda p: sines(unit(p)) ** 3 * (1.5 + np.cos(np.pi * unit(p)[-1]))),
    ]
    return panel


def panel_pairings(m, grid, panel=None):
    """Pair a nodal measure with every bump of ``panel`` on ``grid``."""
    panel = panel or bump_panel(list(zip(grid.lower, grid.upper)))
    pts = grid.interior_points
    return np.array([weak_star_pairing(m, f(pts)) for _, f in panel])
