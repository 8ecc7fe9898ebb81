"""Whitelisted arithmetic expressions over grid coordinates.

Scenario files describe coefficients, densities, fluxes, masks and obstacles
as strings such as ``"(1-abs(x))*(1-log(1-abs(x)))"``.  They are parsed with
:mod:`ast` and evaluated on numpy coordinate arrays; nothing outside the
whitelist below can be reached.
"""

import ast
import math

import numpy as np

COORDINATES = ("x", "y", "z")

CONSTANTS = {"pi": math.pi, "e": math.e, "inf": math.inf}

FUNCTIONS = {
    "abs": np.abs,
    "log": np.log,
    "exp": np.exp,
    "sqrt": np.sqrt,
    "sin": np.sin,
    "cos": np.cos,
    "min": np.minimum,
    "max": np.maximum,
    "where": np.where,
}

_BINOPS = {
    ast.Add: np.add,
    ast.Sub: np.subtract,
    ast.Mult: np.multiply,
    ast.Div: np.divide,
    ast.Pow: np.power,
}

_CMPOPS = {
    ast.Lt: np.less,
    ast.LtE: np.less_equal,
    ast.Gt: np.greater,
    ast.GtE: np.greater_equal,
}


class ExpressionError(ValueError):
    pass


def _check(node, dimension):
    if isinstance(node, ast.Expression):
        return _check(node.body, dimension)
    if isinstance(node, ast.Constant):
        if not isinstance(node.value, (int, float)) or isinstance(node.value, bool):
            raise ExpressionError(f"unsupported literal {node.value!r}")
        return
    if isinstance(node, ast.Name):
        if node.id in CONSTANTS:
            return
        if node.id in COORDINATES:
            if COORDINATES.index(node.id) >= dimension:
                raise ExpressionError(
                    f"coordinate {node.id!r} not available in dimension {dimension}")
            return
        raise ExpressionError(f"unknown name {node.id!r}")
    if isinstance(node, ast.UnaryOp) and isinstance(node.op, (ast.USub, ast.UAdd)):
        return _check(node.operand, dimension)
    if isinstance(node, ast.BinOp) and type(node.op) in _BINOPS:
        _check(node.left, dimension)
        return _check(node.right, dimension)
    if isinstance(node, ast.Compare) and len(node.ops) == 1 and type(node.ops[0]) in _CMPOPS:
        _check(node.left, dimension)
        return _check(node.comparators[0], dimension)
    if isinstance(node, ast.Call) and isinstance(node.func, ast.Name):
        if node.func.id not in FUNCTIONS or node.keywords:
            raise ExpressionError(f"unsupported function {ast.unparse(node.func)!r}")
        for arg in node.args:
            _check(arg, dimension)
        return
    raise ExpressionError(f"unsupported syntax {ast.unparse(node)!r}")


def _eval(node, env):
    if isinstance(node, ast.Constant):
        return float(node.value)
    if isinstance(node, ast.Name):
        return env[node.id]
    if isinstance(node, ast.UnaryOp):
        value = _eval(node.operand, env)
        return -value if isinstance(node.op, ast.USub) else value
    if isinstance(node, ast.BinOp):
        return _BINOPS[type(node.op)](_eval(node.left, env), _eval(node.right, env))
    if isinstance(node, ast.Compare):
        op = _CMPOPS[type(node.ops[0])]
        return op(_eval(node.left, env), _eval(node.comparators[0], env)).astype(float)
    if isinstance(node, ast.Call):
        return FUNCTIONS[node.func.id](*(_eval(a, env) for a in node.args))
    raise ExpressionError(f"cannot evaluate {ast.unparse(node)!r}")  # pragma: no cover


class Expression:
    """A compiled scalar field ``f(x, y, z)``.

    Calling it with an array of shape ``(N, ...)`` returns an array of shape
    ``(...)``.
    """

    def __init__(self, source, dimension=3):
        if isinstance(source, (int, float)):
            source = repr(float(source))
        self.source = str(source).strip()
        self.dimension = dimension
        try:
            tree = ast.parse(self.source.replace("^", "**"), mode="eval")
        except SyntaxError as exc:
            raise ExpressionError(f"malformed expression {self.source!r}: {exc.msg}") from None
        _check(tree, dimension)
        self._tree = tree.body

    def __call__(self, coords):
        coords = np.asarray(coords, dtype=float)
        env = dict(CONSTANTS)
        for axis in range(min(coords.shape[0], 3)):
            env[COORDINATES[axis]] = coords[axis]
        with np.errstate(divide="ignore", invalid="ignore"):
            value = _eval(self._tree, env)
        return np.broadcast_to(np.asarray(value, dtype=float), coords.shape[1:]).copy()

    def __eq__(self, other):
        return isinstance(other, Expression) and self.source == other.source

    def __hash__(self):
        return hash(self.source)

    def __repr__(self):
        return f"Expression({self.source!r})"
