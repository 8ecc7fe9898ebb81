"""Scenario files: a flat ``key = value`` format.

Blank lines and ``#`` comments are ignored.  Values are JSON where a
structure is expected (``box``, ``levels``, ``atoms``, ...) and bare
expression strings for fields over coordinates (``density``, ``mask``).
Example::

    name = example7_1
    dimension = 2
    box = [[0, 1], [0, 1]]
    atoms = [[0.5, 0.5, -1.0]]
    obstacle = -1
    levels = [4, 5, 6, 7]

Obstacle literals: a number (constant), ``log-obstacle-1d``,
``green-pole [x0, ...]`` or any expression.  A dominating measure
(``rho_atoms``, ``rho_density``, ``rho_flux``) is required whenever the
obstacle is positive somewhere.
"""

import hashlib
import json
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from ..capacity import named_obstacles
from ..errors import ScenarioError
from ..expressions import Expression, ExpressionError
from ..grid import CoefficientField, assemble, build_grid
from ..measure import GridMeasure
from ..obstacle import ViConfig

KEYS = (
    "name", "experiment", "dimension", "box", "mask", "alpha", "coefficient", "gamma",
    "atoms", "density", "flux", "obstacle", "rho_atoms", "rho_density", "rho_flux",
    "levels", "method", "omega", "tol", "max_iter", "q", "output",
)
REQUIRED = ("dimension", "box", "levels")
OBSTACLE_KINDS = ("log-obstacle-1d", "green-pole")


@dataclass(frozen=True)
class MeasureSpec:
    atoms: tuple = ()
    density: Optional[Expression] = None
    flux: Optional[tuple] = None

    @property
    def empty(self):
        return not self.atoms and self.density is None and self.flux is None

    def build(self, dimension, box=None):
        atoms = [(tuple(a[:-1]), a[-1]) for a in self.atoms]
        return GridMeasure(dimension, atoms, self.density,
                           list(self.flux) if self.flux else None, box)


@dataclass(frozen=True)
class ObstacleSpec:
    kind: str
    value: object = None

    @property
    def positive_somewhere(self):
        if self.kind == "constant":
            return self.value > 0
        return self.kind in OBSTACLE_KINDS

    def literal(self):
        if self.kind == "constant":
            return repr(float(self.value))
        if self.kind == "expression":
            return self.value.source
        if self.kind == "green-pole" and self.value is not None:
            return f"green-pole {json.dumps(list(self.value))}"
        return self.kind

    def values(self, grid, op=None):
        if self.kind == "constant":
            return named_obstacles("constant", grid, value=self.value).psi
        if self.kind == "expression":
            return named_obstacles("custom-expression", grid, expr=self.value).psi
        if self.kind == "green-pole":
            x0 = self.value
            if x0 is None:
                x0 = [(lo + hi) / 2 for lo, hi in zip(grid.lower, grid.upper)]
            return named_obstacles("green-pole", grid, op, x0=x0).psi
        return named_obstacles(self.kind, grid, op).psi


@dataclass(frozen=True)
class Scenario:
    dimension: int
    box: tuple
    levels: tuple
    name: str = "scenario"
    experiment: Optional[str] = None
    mask: Optional[Expression] = None
    alpha: float = 0.1
    coefficient: object = "identity"
    gamma: Optional[float] = None
    mu: MeasureSpec = field(default_factory=MeasureSpec)
    obstacle: ObstacleSpec = field(default_factory=lambda: ObstacleSpec("constant", -1.0))
    rho: Optional[MeasureSpec] = None
    method: str = "activeset"
    omega: float = 1.5
    tol: float = 1e-10
    max_iter: int = 200_000
    q: float = 1.1
    output: Optional[str] = None

    # -- builders --------------------------------------------------------------

    def grid(self, level):
        return build_grid(self.box, level, mask=self.mask, alpha=self.alpha)

    def coefficient_field(self):
        if self.coefficient == "identity":
            return CoefficientField.identity(self.dimension, gamma=self.gamma or 1.0)
        return CoefficientField.matrix([list(row) for row in self.coefficient], gamma=self.gamma)

    def operator(self, level):
        return assemble(self.grid(level), self.coefficient_field())

    def measure(self):
        return self.mu.build(self.dimension, self.box)

    def rho_measure(self):
        return None if self.rho is None else self.rho.build(self.dimension, self.box)

    def vi_config(self):
        return ViConfig(method=self.method, omega=self.omega, tol=self.tol,
                        max_iter=self.max_iter)

    def with_overrides(self, **changes):
        changes = {k: v for k, v in changes.items() if v is not None}
        if "levels" in changes:
            changes["levels"] = tuple(int(v) for v in changes["levels"])
        return replace(self, **changes)

    @property
    def hash(self):
        return hashlib.sha256(serialize_scenario(self).encode()).hexdigest()[:16]


# -- parsing -----------------------------------------------------------------------

def _json(raw, line, key):
    try:
        return json.loads(raw)
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"malformed value: {exc.msg}", line=line, field=key) from None


def _number(raw, line, key, kind=float):
    value = _json(raw, line, key)
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ScenarioError("expected a number", line=line, field=key)
    if kind is int:
        if int(value) != value:
            raise ScenarioError("expected an integer", line=line, field=key)
        return int(value)
    return float(value)


def _expr(raw, line, key, dimension):
    text = raw
    if raw.startswith('"'):
        text = _json(raw, line, key)
    try:
        return Expression(text, dimension)
    except ExpressionError as exc:
        raise ScenarioError(str(exc), line=line, field=key) from None


def _expr_list(raw, line, key, dimension):
    items = _json(raw, line, key)
    if not isinstance(items, list):
        raise ScenarioError("expected a list", line=line, field=key)
    try:
        return tuple(Expression(i, dimension) for i in items)
    except ExpressionError as exc:
        raise ScenarioError(str(exc), line=line, field=key) from None


def _atoms(raw, line, key, dimension):
    items = _json(raw, line, key)
    if not isinstance(items, list) or any(
            not isinstance(a, list) or len(a) != dimension + 1 for a in items):
        raise ScenarioError(f"atoms are [coordinates..., weight] lists of length "
                            f"{dimension + 1}", line=line, field=key)
    return tuple(tuple(float(v) for v in a) for a in items)


def _obstacle(raw, line, key, dimension):
    text = raw.strip()
    try:
        value = json.loads(text)
        if isinstance(value, (int, float)) and not isinstance(value, bool):
            return ObstacleSpec("constant", float(value))
    except json.JSONDecodeError:
        pass
    if text == "log-obstacle-1d":
        if dimension != 1:
            raise ScenarioError("log-obstacle-1d needs dimension 1", line=line, field=key)
        return ObstacleSpec("log-obstacle-1d")
    if text.startswith("green-pole"):
        rest = text[len("green-pole"):].strip()
        if not rest:
            return ObstacleSpec("green-pole")
        x0 = _json(rest, line, key)
        if not isinstance(x0, list) or len(x0) != dimension:
            raise ScenarioError("green-pole takes a point", line=line, field=key)
        return ObstacleSpec("green-pole", tuple(float(v) for v in x0))
    return ObstacleSpec("expression", _expr(text, line, key, dimension))


def parse_scenario(text):
    """Parse scenario text; errors carry the offending line and field."""
    raw, lines = {}, {}
    for number, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ScenarioError("expected 'key = value'", line=number)
        key, value = (part.strip() for part in stripped.split("=", 1))
        if key not in KEYS:
            raise ScenarioError("unknown key", line=number, field=key)
        if key in raw:
            raise ScenarioError("duplicate key", line=number, field=key)
        raw[key], lines[key] = value, number
    for key in REQUIRED:
        if key not in raw:
            raise ScenarioError("missing required key", field=key)

    dimension = _number(raw["dimension"], lines["dimension"], "dimension", int)
    if dimension not in (1, 2, 3):
        raise ScenarioError("dimension must be 1, 2 or 3", line=lines["dimension"],
                            field="dimension")
    kwargs = {"dimension": dimension}

    box = _json(raw["box"], lines["box"], "box")
    if (not isinstance(box, list) or len(box) != dimension
            or any(not isinstance(b, list) or len(b) != 2 for b in box)):
        raise ScenarioError(f"box needs {dimension} [lo, hi] pairs", line=lines["box"],
                            field="box")
    kwargs["box"] = tuple((float(lo), float(hi)) for lo, hi in box)

    levels = _json(raw["levels"], lines["levels"], "levels")
    if not isinstance(levels, list) or not levels or any(
            not isinstance(v, int) or v < 0 for v in levels):
        raise ScenarioError("levels must be a list of nonnegative integers",
                            line=lines["levels"], field="levels")
    if any(b <= a for a, b in zip(levels, levels[1:])):
        raise ScenarioError("levels must be strictly increasing", line=lines["levels"],
                            field="levels")
    kwargs["levels"] = tuple(levels)

    def get(key, convert):
        if key in raw:
            kwargs[key] = convert(raw[key], lines[key], key)

    get("name", lambda r, ln, k: r)
    get("experiment", lambda r, ln, k: r)
    get("output", lambda r, ln, k: r)
    get("method", lambda r, ln, k: r)
    get("mask", lambda r, ln, k: _expr(r, ln, k, dimension))
    get("alpha", _number)
    get("gamma", _number)
    get("omega", _number)
    get("tol", _number)
    get("q", _number)
    get("max_iter", lambda r, ln, k: _number(r, ln, k, int))
    get("obstacle", lambda r, ln, k: _obstacle(r, ln, k, dimension))

    if "coefficient" in raw:
        value = raw["coefficient"]
        if value == "identity":
            kwargs["coefficient"] = "identity"
        else:
            rows = _json(value, lines["coefficient"], "coefficient")
            if (not isinstance(rows, list) or len(rows) != dimension
                    or any(not isinstance(r, list) or len(r) != dimension for r in rows)):
                raise ScenarioError(f"coefficient needs a {dimension}x{dimension} matrix",
                                    line=lines["coefficient"], field="coefficient")
            try:
                kwargs["coefficient"] = tuple(tuple(Expression(e, dimension) for e in r)
                                              for r in rows)
            except ExpressionError as exc:
                raise ScenarioError(str(exc), line=lines["coefficient"],
                                    field="coefficient") from None

    def measure(prefix):
        parts = {}
        if prefix + "atoms" in raw:
            k = prefix + "atoms"
            parts["atoms"] = _atoms(raw[k], lines[k], k, dimension)
        if prefix + "density" in raw:
            k = prefix + "density"
            parts["density"] = _expr(raw[k], lines[k], k, dimension)
        if prefix + "flux" in raw:
            k = prefix + "flux"
            flux = _expr_list(raw[k], lines[k], k, dimension)
            if len(flux) != dimension:
                raise ScenarioError(f"flux needs {dimension} components", line=lines[k],
                                    field=k)
            parts["flux"] = flux
        return MeasureSpec(**parts) if parts else None

    kwargs["mu"] = measure("") or MeasureSpec()
    kwargs["rho"] = measure("rho_")

    try:
        scn = Scenario(**kwargs)
        scn.vi_config()
    except ValueError as exc:
        raise ScenarioError(str(exc)) from None
    _require_rho(scn, lines)
    return scn


def _require_rho(scn, lines):
    if scn.rho is not None:
        return
    positive = scn.obstacle.positive_somewhere
    if scn.obstacle.kind == "expression":
        try:
            grid = scn.grid(scn.levels[0])
        except Exception as exc:
            raise ScenarioError(f"cannot build the grid: {exc}") from None
        positive = bool(np.any(scn.obstacle.value(grid.interior_points) > 0))
    if positive:
        raise ScenarioError("dominating measure required (obstacle is positive somewhere)",
                            line=lines.get("obstacle"), field="obstacle")


# -- serialization -------------------------------------------------------------------

def _fmt(value):
    return json.dumps(value)


def serialize_scenario(scn):
    out = [f"name = {scn.name}"]
    if scn.experiment:
        out.append(f"experiment = {scn.experiment}")
    out.append(f"dimension = {scn.dimension}")
    out.append(f"box = {_fmt([list(b) for b in scn.box])}")
    if scn.mask is not None:
        out.append(f"mask = {scn.mask.source}")
    out.append(f"alpha = {scn.alpha!r}")
    if scn.coefficient == "identity":
        out.append("coefficient = identity")
    else:
        out.append(f"coefficient = {_fmt([[e.source for e in r] for r in scn.coefficient])}")
    if scn.gamma is not None:
        out.append(f"gamma = {scn.gamma!r}")

    def measure(prefix, spec):
        if spec is None:
            return
        if spec.atoms:
            out.append(f"{prefix}atoms = {_fmt([list(a) for a in spec.atoms])}")
        if spec.density is not None:
            out.append(f"{prefix}density = {spec.density.source}")
        if spec.flux is not None:
            out.append(f"{prefix}flux = {_fmt([e.source for e in spec.flux])}")

    measure("", scn.mu)
    out.append(f"obstacle = {scn.obstacle.literal()}")
    measure("rho_", scn.rho)
    out.append(f"levels = {_fmt(list(scn.levels))}")
    out.append(f"method = {scn.method}")
    out.append(f"omega = {scn.omega!r}")
    out.append(f"tol = {scn.tol!r}")
    out.append(f"max_iter = {scn.max_iter}")
    out.append(f"q = {scn.q!r}")
    if scn.output:
        out.append(f"output = {scn.output}")
    return "\n".join(out) + "\n"


def load_scenario(path):
    with open(path, encoding="utf-8") as fh:
        return parse_scenario(fh.read())


def shipped_scenario_path(name):
    from importlib import resources

    return resources.files("obstaclelab") / "scenarios" / f"{name}.scn"


def load_shipped(name):
    return parse_scenario(shipped_scenario_path(name).read_text(encoding="utf-8"))
