"""Tiny arithmetic expression language for user-supplied kernels.

Supported: numbers, the variables named at construction, ``+ - * / ^``
(``**`` is accepted too), unary minus and the functions ``ln`` and ``exp``.
Expressions are parsed with :mod:`ast` against a whitelist; nothing is ever
passed to ``eval``.

Evaluation is vectorised over numpy arrays.  With ``exact=True`` integer and
:class:`fractions.Fraction` inputs are combined in rational arithmetic as long
as the expression stays rational (no ``ln``/``exp``, integer powers only).
"""
from __future__ import annotations

import ast
import operator
from fractions import Fraction

import numpy as np

from .errors import ExpressionError

_BINOPS = {
    ast.Add: operator.add,
    ast.Sub: operator.sub,
    ast.Mult: operator.mul,
    ast.Div: operator.truediv,
    ast.Pow: operator.pow,
}
_FUNCS = {"ln": np.log, "exp": np.exp}


class _NotRational(Exception):
    pass


class Expression:
    """A parsed expression over a fixed set of variable names."""

    def __init__(self, source: str, variables=("x",)):
        if not isinstance(source, str) or not source.strip():
            raise ExpressionError("expression must be a non-empty string")
        self.source = source
        self.variables = tuple(variables)
        try:
            tree = ast.parse(source.replace("^", "**"), mode="eval")
        except SyntaxError as exc:
            raise ExpressionError(f"cannot parse {source!r}: {exc.msg}") from None
        self._check(tree.body)
        self._tree = tree.body

    def _check(self, node):
        if isinstance(node, ast.BinOp):
            if type(node.op) not in _BINOPS:
                raise ExpressionError(f"operator {type(node.op).__name__} not allowed in {self.source!r}")
            self._check(node.left)
            self._check(node.right)
        elif isinstance(node, ast.UnaryOp):
            if not isinstance(node.op, (ast.USub, ast.UAdd)):
                raise ExpressionError(f"unary operator not allowed in {self.source!r}")
            self._check(node.operand)
        elif isinstance(node, ast.Constant):
            if isinstance(node.value, bool) or not isinstance(node.value, (int, float)):
                raise ExpressionError(f"constant {node.value!r} not allowed")
        elif isinstance(node, ast.Name):
            if node.id not in self.variables:
                raise ExpressionError(
                    f"unknown name {node.id!r} in {self.source!r}; allowed: {', '.join(self.variables)}"
                )
        elif isinstance(node, ast.Call):
            if not isinstance(node.func, ast.Name) or node.func.id not in _FUNCS:
                raise ExpressionError(f"only ln(...) and exp(...) may be called in {self.source!r}")
            if len(node.args) != 1 or node.keywords:
                raise ExpressionError(f"{node.func.id} takes exactly one argument")
            self._check(node.args[0])
        else:
            raise ExpressionError(f"syntax {type(node).__name__} not allowed in {self.source!r}")

    def __call__(self, **values):
        missing = set(self.variables) - values.keys()
        if missing:
            raise ExpressionError(f"missing values for {sorted(missing)}")
        env = {k: np.asarray(v, dtype=float) for k, v in values.items()}
        with np.errstate(all="ignore"):
            out = self._eval(self._tree, env)
        out = np.asarray(out, dtype=float)
        shape = np.broadcast_shapes(out.shape, *(v.shape for v in env.values()))
        return np.array(np.broadcast_to(out, shape))

    def exact(self, **values):
        """Evaluate in rational arithmetic; falls back to float if not rational."""
        env = {k: Fraction(v) for k, v in values.items()}
        try:
            return self._eval_exact(self._tree, env)
        except _NotRational:
            return Fraction(float(self(**values)))
        except ZeroDivisionError:
            raise ExpressionError(f"division by zero evaluating {self.source!r} at {values}") from None

    def _eval(self, node, env):
        if isinstance(node, ast.BinOp):
            return _BINOPS[type(node.op)](self._eval(node.left, env), self._eval(node.right, env))
        if isinstance(node, ast.UnaryOp):
            v = self._eval(node.operand, env)
            return -v if isinstance(node.op, ast.USub) else v
        if isinstance(node, ast.Constant):
            return float(node.value)
        if isinstance(node, ast.Name):
            return env[node.id]
        return _FUNCS[node.func.id](self._eval(node.args[0], env))

    def _eval_exact(self, node, env):
        if isinstance(node, ast.BinOp):
            left = self._eval_exact(node.left, env)
            right = self._eval_exact(node.right, env)
            if isinstance(node.op, ast.Pow):
                if right.denominator != 1:
                    raise _NotRational
                if left == 0 and right < 0:
                    raise ZeroDivisionError
                return left ** int(right)
            return _BINOPS[type(node.op)](left, right)
        if isinstance(node, ast.UnaryOp):
            v = self._eval_exact(node.operand, env)
            return -v if isinstance(node.op, ast.USub) else v
        if isinstance(node, ast.Constant):
            return Fraction(node.value)
        if isinstance(node, ast.Name):
            return env[node.id]
        raise _NotRational

    def __repr__(self):
        return f"Expression({self.source!r}, variables={self.variables})"

    def __eq__(self, other):
        return isinstance(other, Expression) and (self.source, self.variables) == (other.source, other.variables)

    def __hash__(self):
        return hash((self.source, self.variables))
