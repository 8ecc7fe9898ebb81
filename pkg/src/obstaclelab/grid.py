"""Masked uniform grids and the monotone assembly of -div(A(x) grad u).

The operator is assembled in *measure form*: it maps nodal values to nodal
masses, i.e. the finite-difference stencil multiplied by the node volume
``h**N``.  Measure data therefore enter as plain nodal masses.

The symmetric part of ``A`` is split at every sample into nonnegative weights
along the coordinate axes and the diagonals ``e_i +/- e_j``; each direction
contributes a conservative second difference whose edge weight is the
harmonic mean of the weights at the two endpoints.  The skew part of ``A``
acts as a divergence-free drift (its flux is the discrete curl of the skew
entries sampled at plaquette centres) and is upwinded.  Both pieces keep the
matrix an M-matrix with nonnegative column sums as long as every axis weight
``a_ii - sum_j |sym(a)_ij|`` stays nonnegative.
"""

from dataclasses import dataclass, field
from itertools import combinations, product
from typing import Callable, Optional, Sequence

import numpy as np
import scipy.sparse as sp
from scipy import ndimage

from .errors import (
    EllipticityError,
    EmptyDomainError,
    MonotonicityError,
    RegularityError,
)

EXTERIOR, BOUNDARY, INTERIOR = 0, 1, 2

REGULARITY_RADII = (2, 4, 8)
REGULARITY_MAX_CENTRES = 4096
MONOTONE_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class DomainGrid:
    """Uniform lattice over a box, with an optional mask carving out Omega.

    ``classification`` has the lattice shape and holds EXTERIOR, BOUNDARY or
    INTERIOR per point.  ``index`` maps interior lattice points to dense row
    indices (row-major order) and holds -1 elsewhere.
    """

    dimension: int
    lower: tuple
    upper: tuple
    level: int
    h: float
    alpha: float
    classification: np.ndarray = field(repr=False)
    index: np.ndarray = field(repr=False)
    mask: Optional[Callable] = field(default=None, repr=False)

    @property
    def shape(self):
        return self.classification.shape

    @property
    def n_interior(self):
        return int((self.classification == INTERIOR).sum())

    @property
    def node_volume(self):
        return self.h ** self.dimension

    def lattice_points(self):
        """Coordinates of every lattice point, shape ``(N, *shape)``."""
        axes = [lo + self.h * np.arange(n) for lo, n in zip(self.lower, self.shape)]
        return np.stack(np.meshgrid(*axes, indexing="ij"))

    @property
    def interior_points(self):
        """Coordinates of the interior nodes in row order, shape ``(N, n)``."""
        multi = np.nonzero(self.classification == INTERIOR)
        return np.stack([lo + self.h * m for lo, m in zip(self.lower, multi)])

    @property
    def interior_multi_index(self):
        return np.stack(np.nonzero(self.classification == INTERIOR))

    def contains(self, points):
        """True where points lie strictly inside the box and the mask."""
        points = np.asarray(points, dtype=float)
        inside = np.ones(points.shape[1:], dtype=bool)
        for axis in range(self.dimension):
            inside &= (points[axis] > self.lower[axis]) & (points[axis] < self.upper[axis])
        if self.mask is not None:
            inside &= _mask_values(self.mask, points)
        return inside

    def nearest_node(self, point):
        """Row index of the interior node nearest to ``point`` (-1 if none)."""
        point = np.asarray(point, dtype=float)
        pts = self.interior_points
        if pts.shape[1] == 0:
            return -1
        dist = ((pts - point[:, None]) ** 2).sum(axis=0)
        return int(np.argmin(dist))

    def to_grid_function(self, lattice_values):
        """Restrict a lattice-shaped array to the interior nodes."""
        return np.asarray(lattice_values)[self.classification == INTERIOR]

    def to_lattice(self, values, fill=0.0):
        out = np.full(self.shape, fill, dtype=float)
        out[self.classification == INTERIOR] = values
        return out


def _mask_values(mask, points):
    value = np.asarray(mask(points))
    if value.dtype == bool:
        return value
    return value > 0


def build_grid(box, level, mask=None, alpha=0.1, base=None, check_regularity=True):
    """Classify the lattice of spacing ``base / 2**level`` over ``box``.

    ``box`` is a sequence of ``(lo, hi)`` pairs, one per axis.  ``mask`` is a
    callable on coordinate arrays; points where it is positive (or True) lie
    in Omega.  Lattice points on the mask boundary are not interior, so they
    become Dirichlet boundary nodes.
    """
    box = [tuple(float(v) for v in pair) for pair in box]
    dimension = len(box)
    if dimension not in (1, 2, 3):
        raise ValueError(f"dimension must be 1, 2 or 3, got {dimension}")
    if level < 0:
        raise ValueError("level must be >= 0")
    extents = [hi - lo for lo, hi in box]
    if min(extents) <= 0:
        raise ValueError("box extents must be positive")
    if not 0 < alpha < 1:
        raise ValueError("alpha must lie in (0, 1)")
    if base is None:
        base = min(extents)
    h = base / 2 ** level
    counts = []
    for ext in extents:
        cells = ext / h
        if abs(cells - round(cells)) > 1e-9 * max(1.0, cells):
            raise ValueError(f"extent {ext} is not a multiple of the spacing {h}")
        counts.append(int(round(cells)) + 1)

    lower = tuple(lo for lo, _ in box)
    upper = tuple(hi for _, hi in box)
    axes = [lo + h * np.arange(n) for lo, n in zip(lower, counts)]
    points = np.stack(np.meshgrid(*axes, indexing="ij"))
    inside = np.ones(counts, dtype=bool)
    for axis in range(dimension):
        inside &= (points[axis] > lower[axis]) & (points[axis] < upper[axis])
    if mask is not None:
        inside &= _mask_values(mask, points)
    if not inside.any():
        raise EmptyDomainError("the mask leaves no interior nodes")

    touching = ndimage.binary_dilation(inside, structure=np.ones((3,) * dimension, dtype=bool))
    classification = np.full(counts, EXTERIOR, dtype=np.int8)
    classification[touching] = BOUNDARY
    classification[inside] = INTERIOR
    index = np.full(counts, -1, dtype=np.int64)
    index[inside] = np.arange(int(inside.sum()))

    grid = DomainGrid(dimension, lower, upper, level, h, alpha, classification, index, mask)
    if check_regularity:
        worst = exterior_fraction(grid)
        if worst <= alpha:
            raise RegularityError(
                f"exterior volume fraction {worst:.3f} does not exceed alpha={alpha}")
    return grid


def _ball_offsets(radius, h, dimension):
    step = h / 2
    m = int(np.ceil(radius / step))
    ticks = (np.arange(-m, m) + 0.5) * step
    mesh = np.stack(np.meshgrid(*([ticks] * dimension), indexing="ij")).reshape(dimension, -1)
    return mesh[:, (mesh ** 2).sum(axis=0) <= radius ** 2]


def exterior_fraction(grid, radii=REGULARITY_RADII, max_centres=REGULARITY_MAX_CENTRES):
    """Smallest sampled value of |B_r(x0) \\ Omega| / |B_r(x0)|.

    Balls are centred at boundary nodes (evenly strided down to at most
    ``max_centres`` of them) with radii ``r = k*h`` for ``k`` in ``radii``;
    volumes are counted on a sub-lattice of spacing ``h/2``.
    """
    centres = np.stack(np.nonzero(grid.classification == BOUNDARY)).astype(float)
    if centres.shape[1] == 0:
        return 1.0
    stride = max(1, int(np.ceil(centres.shape[1] / max_centres)))
    centres = centres[:, ::stride]
    centres = np.asarray(grid.lower)[:, None] + grid.h * centres
    worst = 1.0
    for k in radii:
        offsets = _ball_offsets(k * grid.h, grid.h, grid.dimension)
        chunk = max(1, 2_000_000 // offsets.shape[1])
        for start in range(0, centres.shape[1], chunk):
            c = centres[:, start:start + chunk]
            pts = c[:, :, None] + offsets[:, None, :]
            frac = 1.0 - grid.contains(pts).mean(axis=1)
            worst = min(worst, float(frac.min()))
    return worst


class CoefficientField:
    """The matrix field A(x) = (a_ij(x)) with declared ellipticity constant.

    ``func`` maps coordinates of shape ``(N, ...)`` to an array of shape
    ``(N, N, ...)``.
    """

    def __init__(self, func, dimension, gamma=None, symmetric=None, label=None):
        self.func = func
        self.dimension = dimension
        self.gamma = gamma
        self.symmetric = symmetric
        self.label = label

    @classmethod
    def identity(cls, dimension, gamma=1.0):
        def func(points):
            points = np.asarray(points, dtype=float)
            eye = np.eye(dimension).reshape((dimension, dimension) + (1,) * (points.ndim - 1))
            return np.broadcast_to(eye, (dimension, dimension) + points.shape[1:]).copy()
        return cls(func, dimension, gamma=gamma, symmetric=True, label="identity")

    @classmethod
    def scalar(cls, a, dimension, gamma=None):
        """``a(x) * I`` for a callable or constant ``a``."""
        def func(points):
            points = np.asarray(points, dtype=float)
            value = a(points) if callable(a) else np.full(points.shape[1:], float(a))
            out = np.zeros((dimension, dimension) + points.shape[1:])
            for i in range(dimension):
                out[i, i] = value
            return out
        return cls(func, dimension, gamma=gamma, symmetric=True, label="scalar")

    @classmethod
    def matrix(cls, entries, gamma=None):
        """Entries are constants or callables, as a nested N x N list."""
        dimension = len(entries)

        def func(points):
            points = np.asarray(points, dtype=float)
            out = np.empty((dimension, dimension) + points.shape[1:])
            for i in range(dimension):
                for j in range(dimension):
                    e = entries[i][j]
                    out[i, j] = e(points) if callable(e) else float(e)
            return out
        return cls(func, dimension, gamma=gamma, label="matrix")

    def sample(self, points):
        values = np.asarray(self.func(points), dtype=float)
        if not np.all(np.isfinite(values)):
            raise EllipticityError("coefficient samples must be finite")
        return values

    def check_ellipticity(self, samples):
        """Validate the declared gamma on axes and diagonals; return it.

        When no gamma was declared the largest admissible one is returned.
        """
        n = self.dimension
        flat = samples.reshape(n, n, -1)
        quotients = [flat[i, i] for i in range(n)]
        for i, j in combinations(range(n), 2):
            cross = flat[i, j] + flat[j, i]
            quotients.append((flat[i, i] + flat[j, j] + cross) / 2)
            quotients.append((flat[i, i] + flat[j, j] - cross) / 2)
        attained = float(min(q.min() for q in quotients))
        gamma = attained if self.gamma is None else self.gamma
        if gamma <= 0:
            raise EllipticityError(f"ellipticity constant must be positive, got {gamma}")
        if attained < gamma * (1 - 1e-12):
            raise EllipticityError(
                f"declared gamma={gamma} exceeds the sampled lower bound {attained}")
        return gamma


@dataclass(frozen=True, eq=False)
class AssembledOperator:
    """Sparse measure-form operator over the interior nodes of ``grid``."""

    matrix: sp.csr_matrix
    symmetric: bool
    grid: Optional[DomainGrid] = None

    @property
    def shape(self):
        return self.matrix.shape

    @property
    def n(self):
        return self.matrix.shape[0]

    @property
    def diagonal(self):
        return self.matrix.diagonal()

    def __matmul__(self, other):
        return self.matrix @ np.asarray(other, dtype=float)

    def toarray(self):
        return self.matrix.toarray()


def _canonical_csr(matrix):
    matrix = sp.csr_matrix(matrix, dtype=float)
    matrix.sum_duplicates()
    matrix.sort_indices()
    return matrix


def operator_from_matrix(matrix, grid=None):
    """Wrap a hand-built matrix (tests, oracles) as an AssembledOperator."""
    matrix = _canonical_csr(matrix)
    symmetric = (matrix != matrix.T).nnz == 0
    return AssembledOperator(matrix, bool(symmetric), grid)


def _harmonic(a, b):
    total = a + b
    out = np.zeros_like(total)
    np.divide(2 * a * b, total, out=out, where=total != 0)
    return out


def _shifted(array, offset, fill=0.0):
    """``out[p] = array[p + offset]`` with ``fill`` outside the lattice."""
    out = np.full_like(array, fill)
    src, dst = [], []
    for d, n in zip(offset, array.shape):
        if d >= 0:
            src.append(slice(d, n))
            dst.append(slice(0, n - d))
        else:
            src.append(slice(0, n + d))
            dst.append(slice(-d, n))
    out[tuple(dst)] = array[tuple(src)]
    return out


def _direction_weights(samples, dimension):
    """Nonnegative stencil weights per direction from the symmetric part."""
    sym = 0.5 * (samples + np.swapaxes(samples, 0, 1))
    weights = {}
    for i in range(dimension):
        w = sym[i, i].copy()
        for j in range(dimension):
            if j != i:
                w -= np.abs(sym[i, j])
        e = [0] * dimension
        e[i] = 1
        weights[tuple(e)] = w
    for i, j in combinations(range(dimension), 2):
        plus = [0] * dimension
        plus[i] = plus[j] = 1
        minus = [0] * dimension
        minus[i], minus[j] = 1, -1
        weights[tuple(plus)] = np.maximum(sym[i, j], 0.0)
        weights[tuple(minus)] = np.maximum(-sym[i, j], 0.0)
    return weights


def assemble(grid, coeff=None):
    """Assemble the measure-form matrix of -div(A grad .) on ``grid``."""
    n_dim = grid.dimension
    if coeff is None:
        coeff = CoefficientField.identity(n_dim)
    if coeff.dimension != n_dim:
        raise ValueError("coefficient dimension does not match the grid")
    if coeff.gamma is not None and coeff.gamma <= 0:
        raise EllipticityError(f"ellipticity constant must be positive, got {coeff.gamma}")

    points = grid.lattice_points()
    active = grid.classification != EXTERIOR
    samples = coeff.sample(points)
    coeff.check_ellipticity(samples[..., active])
    index = grid.index
    scale = grid.h ** (n_dim - 2)

    rows, cols, vals = [], [], []

    def add(row_idx, col_idx, values):
        keep = (row_idx >= 0) & (col_idx >= 0) & (values != 0)
        rows.append(row_idx[keep])
        cols.append(col_idx[keep])
        vals.append(values[keep])

    for direction, weight in _direction_weights(samples, n_dim).items():
        neighbour = _shifted(weight, direction)
        q_index = _shifted(index, direction, fill=-1)
        q_active = _shifted(active, direction, fill=False)
        edges = active & q_active & ((index >= 0) | (q_index >= 0))
        if sum(direction) == 1 and max(direction) == 1:
            bad = edges & ((weight < 0) | (neighbour < 0))
            if bad.any():
                p = tuple(int(c[0]) for c in np.nonzero(bad))
                q = tuple(a + b for a, b in zip(p, direction))
                raise MonotonicityError(
                    f"negative axis weight on edge {p}->{q}: "
                    "off-diagonal coupling would be positive", edge=(p, q))
        w = scale * _harmonic(weight, neighbour)
        w = np.where(edges, w, 0.0)
        p_idx, q_idx, w = index[edges], q_index[edges], w[edges]
        add(p_idx, p_idx, w)
        add(p_idx, q_idx, -w)
        add(q_idx, q_idx, w)
        add(q_idx, p_idx, -w)

    _assemble_drift(grid, coeff, add)

    matrix = sp.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(grid.n_interior, grid.n_interior))
    return operator_from_matrix(matrix, grid)


def _assemble_drift(grid, coeff, add):
    """Upwinded flux of the skew part of A (a divergence-free drift)."""
    n_dim = grid.dimension
    if n_dim < 2 or coeff.symmetric:
        return
    h = grid.h
    base = grid.lattice_points()
    index = grid.index
    active = grid.classification != EXTERIOR
    face_flux = {axis: np.zeros(grid.shape) for axis in range(n_dim)}
    any_skew = False
    for i, j in combinations(range(n_dim), 2):
        shift = np.zeros((n_dim,) + (1,) * n_dim)
        shift[i] = shift[j] = h / 2
        samples = coeff.sample(base + shift)
        skew = 0.5 * (samples[i, j] - samples[j, i])
        if not np.any(skew):
            continue
        any_skew = True
        e_i = tuple(1 if a == i else 0 for a in range(n_dim))
        e_j = tuple(1 if a == j else 0 for a in range(n_dim))
        minus_j = tuple(-c for c in e_j)
        minus_i = tuple(-c for c in e_i)
        face_flux[i] -= (skew - _shifted(skew, minus_j)) / h
        face_flux[j] += (skew - _shifted(skew, minus_i)) / h
    if not any_skew:
        return
    area = h ** (n_dim - 1)
    for axis in range(n_dim):
        direction = tuple(1 if a == axis else 0 for a in range(n_dim))
        q_index = _shifted(index, direction, fill=-1)
        q_active = _shifted(active, direction, fill=False)
        edges = active & q_active & ((index >= 0) | (q_index >= 0))
        c = area * face_flux[axis][edges]
        p_idx, q_idx = index[edges], q_index[edges]
        out_flow, in_flow = np.maximum(c, 0.0), np.maximum(-c, 0.0)
        add(p_idx, q_idx, -out_flow)
        add(q_idx, q_idx, out_flow)
        add(p_idx, p_idx, in_flow)
        add(q_idx, p_idx, -in_flow)


def adjoint(op):
    """Transpose; applying it twice returns the original arrays exactly."""
    return AssembledOperator(_canonical_csr(op.matrix.T), op.symmetric, op.grid)


@dataclass
class MonotoneReport:
    passed: bool
    worst_offdiagonal: float
    worst_offdiagonal_entry: Optional[tuple]
    worst_column_sum: float
    worst_column: Optional[int]
    diagonal_violations: list


def validate_monotone(op, tol=MONOTONE_TOL):
    """Scan every entry for the M-matrix sign pattern and column sums."""
    matrix = op.matrix if isinstance(op, AssembledOperator) else _canonical_csr(op)
    coo = matrix.tocoo()
    diag = matrix.diagonal()
    diag_scale = float(np.abs(diag).max()) if diag.size else 1.0
    threshold = tol * max(diag_scale, 1e-300)

    off = coo.row != coo.col
    worst_off, worst_entry = 0.0, None
    if off.any():
        k = int(np.argmax(coo.data[off]))
        value = float(coo.data[off][k])
        if value > 0:
            worst_off = value
            worst_entry = (int(coo.row[off][k]), int(coo.col[off][k]))

    col_sums = np.asarray(matrix.sum(axis=0)).ravel()
    worst_col, worst_col_idx = 0.0, None
    if col_sums.size and col_sums.min() < 0:
        worst_col_idx = int(np.argmin(col_sums))
        worst_col = float(col_sums[worst_col_idx])

    diag_bad = [int(i) for i in np.nonzero(diag <= 0)[0]]
    passed = worst_off <= threshold and worst_col >= -threshold and not diag_bad
    return MonotoneReport(passed, worst_off, worst_entry, worst_col, worst_col_idx, diag_bad)


def truncate(v, k):
    """Clamp to [-k, k]."""
    if k < 0:
        raise ValueError(f"truncation level must be >= 0, got {k}")
    return np.clip(np.asarray(v, dtype=float), -k, k)


def as_grid_function(values, n=None):
    values = np.asarray(values, dtype=float)
    if n is not None and values.shape != (n,):
        raise ValueError(f"expected {n} nodal values, got shape {values.shape}")
    if not np.all(np.isfinite(values)):
        raise ValueError("grid function values must be finite")
    return values


def as_extended_grid_function(values, n=None):
    """Like :func:`as_grid_function` but admits -inf (unconstrained nodes)."""
    values = np.asarray(values, dtype=float)
    if n is not None and values.shape != (n,):
        raise ValueError(f"expected {n} nodal values, got shape {values.shape}")
    if np.any(np.isnan(values)) or np.any(values == np.inf):
        raise ValueError("obstacle values must be finite or -inf")
    return values


# -- text serialization -------------------------------------------------------

_CLASS_CHARS = "EBI"


def grid_to_text(grid):
    """Header ``N lo_1 hi_1 ... level alpha h`` then classifications row-major.

    Each following line holds one lattice row along the last axis, one
    character per point (E exterior, B boundary, I interior).
    """
    header = [str(grid.dimension)]
    for lo, hi in zip(grid.lower, grid.upper):
        header += [repr(lo), repr(hi)]
    header += [str(grid.level), repr(grid.alpha), repr(grid.h)]
    lines = [" ".join(header)]
    rows = grid.classification.reshape(-1, grid.shape[-1])
    lines += ["".join(_CLASS_CHARS[c] for c in row) for row in rows]
    return "\n".join(lines) + "\n"


def grid_from_text(text):
    lines = [ln for ln in text.splitlines() if ln.strip()]
    head = lines[0].split()
    dimension = int(head[0])
    lower = tuple(float(head[1 + 2 * a]) for a in range(dimension))
    upper = tuple(float(head[2 + 2 * a]) for a in range(dimension))
    level = int(head[1 + 2 * dimension])
    alpha = float(head[2 + 2 * dimension])
    h = float(head[3 + 2 * dimension])
    shape = tuple(int(round((hi - lo) / h)) + 1 for lo, hi in zip(lower, upper))
    codes = np.array([[_CLASS_CHARS.index(ch) for ch in ln.strip()] for ln in lines[1:]],
                     dtype=np.int8)
    classification = codes.reshape(shape)
    index = np.full(shape, -1, dtype=np.int64)
    inside = classification == INTERIOR
    index[inside] = np.arange(int(inside.sum()))
    return DomainGrid(dimension, lower, upper, level, h, alpha, classification, index)


def operator_to_text(op):
    """Header ``rows cols nnz symmetric`` then ``row col value`` triplets."""
    coo = op.matrix.tocoo()
    order = np.lexsort((coo.col, coo.row))
    lines = [f"{op.shape[0]} {op.shape[1]} {coo.nnz} {int(op.symmetric)}"]
    lines += [f"{coo.row[k]} {coo.col[k]} {float(coo.data[k])!r}" for k in order]
    return "\n".join(lines) + "\n"


def operator_from_text(text, grid=None):
    lines = [ln for ln in text.splitlines() if ln.strip()]
    n_rows, n_cols, nnz, symmetric = (int(v) for v in lines[0].split())
    rows = np.empty(nnz, dtype=np.int64)
    cols = np.empty(nnz, dtype=np.int64)
    vals = np.empty(nnz)
    for k, ln in enumerate(lines[1:1 + nnz]):
        r, c, v = ln.split()
        rows[k], cols[k], vals[k] = int(r), int(c), float(v)
    matrix = _canonical_csr(sp.coo_matrix((vals, (rows, cols)), shape=(n_rows, n_cols)))
    return AssembledOperator(matrix, bool(symmetric), grid)
