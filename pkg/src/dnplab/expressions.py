"""Closed-form coefficient expressions over (x1, x2).

Grammar: numbers, ``x1``, ``x2``, ``pi``, ``e``, the operators
``+ - * / **`` and the functions ``exp``, ``sin``, ``cos``, ``sqrt``, ``log``.
"""
from __future__ import annotations

import ast
import math

import numpy as np

_FUNCS = {"exp": np.exp, "sin": np.sin, "cos": np.cos, "sqrt": np.sqrt, "log": np.log}
_CONSTS = {"pi": math.pi, "e": math.e}
_BINOPS = {
    ast.Add: np.add,
    ast.Sub: np.subtract,
    ast.Mult: np.multiply,
    ast.Div: np.divide,
    ast.Pow: np.power,
}


class ExpressionError(ValueError):
    pass


class Expression:
    """Parsed expression; call with coordinate arrays ``x1, x2``."""

    def __init__(self, source: str):
        self.source = str(source)
        try:
            tree = ast.parse(self.source, mode="eval")
        except SyntaxError as exc:
            raise ExpressionError(f"cannot parse {self.source!r}: {exc.msg}") from None
        self._check(tree.body)
        self._tree = tree.body

    def _check(self, node):
        if isinstance(node, ast.Constant):
            if isinstance(node.value, bool) or not isinstance(node.value, (int, float)):
                raise ExpressionError(f"unsupported constant {node.value!r} in {self.source!r}")
        elif isinstance(node, ast.Name):
            if node.id not in ("x1", "x2") and node.id not in _CONSTS:
                raise ExpressionError(f"unknown name {node.id!r} in {self.source!r}")
        elif isinstance(node, ast.BinOp):
            if type(node.op) not in _BINOPS:
                raise ExpressionError(f"unsupported operator in {self.source!r}")
            self._check(node.left)
            self._check(node.right)
        elif isinstance(node, ast.UnaryOp):
            if not isinstance(node.op, (ast.UAdd, ast.USub)):
                raise ExpressionError(f"unsupported unary operator in {self.source!r}")
            self._check(node.operand)
        elif isinstance(node, ast.Call):
            if not isinstance(node.func, ast.Name) or node.func.id not in _FUNCS:
                raise ExpressionError(f"unsupported function call in {self.source!r}")
            if len(node.args) != 1 or node.keywords:
                raise ExpressionError(f"functions take exactly one argument in {self.source!r}")
            self._check(node.args[0])
        else:
            raise ExpressionError(f"unsupported syntax {type(node).__name__} in {self.source!r}")

    def _eval(self, node, env):
        if isinstance(node, ast.Constant):
            return float(node.value)
        if isinstance(node, ast.Name):
            return env[node.id] if node.id in env else _CONSTS[node.id]
        if isinstance(node, ast.BinOp):
            return _BINOPS[type(node.op)](self._eval(node.left, env), self._eval(node.right, env))
        if isinstance(node, ast.UnaryOp):
            val = self._eval(node.operand, env)
            return -val if isinstance(node.op, ast.USub) else val
        return _FUNCS[node.func.id](self._eval(node.args[0], env))

    def __call__(self, x1, x2):
        x1 = np.asarray(x1, dtype=float)
        x2 = np.asarray(x2, dtype=float)
        with np.errstate(all="ignore"):
            out = self._eval(self._tree, {"x1": x1, "x2": x2})
        return np.broadcast_to(np.asarray(out, dtype=float), np.broadcast(x1, x2).shape)

    def __repr__(self):
        return f"Expression({self.source!r})"


def nodal(mesh, spec) -> np.ndarray:
    """Nodal values from a number, an expression string or a per-node list."""
    if isinstance(spec, bool):
        raise ExpressionError("booleans are not coefficient values")
    if isinstance(spec, (int, float)):
        return np.full(mesh.n_nodes, float(spec))
    if isinstance(spec, str):
        vals = mesh.interpolate(Expression(spec))
    else:
        vals = np.asarray(spec, dtype=float)
        if vals.shape != (mesh.n_nodes,):
            raise ExpressionError(f"nodal array has {vals.size} values, mesh has {mesh.n_nodes} nodes")
    if not np.all(np.isfinite(vals)):
        raise ExpressionError(f"expression {spec!r} is not finite at every node")
    return vals
