"""Cost-model expressions for simulator scenarios.

Grammar (a subset of Python expression syntax)::

    expr    := expr op expr | '-' expr | '(' expr ')' | call | cond | NAME | NUMBER
    op      := '+' | '-' | '*' | '/' | '**'
    call    := FUNC '(' expr {',' expr} ')'
    FUNC    := max | min | log | exp | sqrt | abs | step
    cond    := expr 'if' test 'else' expr
    test    := expr CMP expr          CMP in  < <= > >=

``step(x)`` is 1 when x > 0 and 0 otherwise. Expressions compile to numpy
code, so the same formula evaluates a single configuration or a whole grid.
"""

from __future__ import annotations

import ast
from functools import reduce
from typing import Mapping

import numpy as np


class ExpressionError(ValueError):
    pass


_BINOPS = (ast.Add, ast.Sub, ast.Mult, ast.Div, ast.Pow)
_CMPOPS = (ast.Lt, ast.LtE, ast.Gt, ast.GtE)
_FUNCS = {
    "max": lambda *a: reduce(np.maximum, a),
    "min": lambda *a: reduce(np.minimum, a),
    "log": np.log,
    "exp": np.exp,
    "sqrt": np.sqrt,
    "abs": np.abs,
    "step": lambda x: np.where(np.asarray(x) > 0, 1.0, 0.0),
}
_WHERE = "__where__"


class _Check(ast.NodeVisitor):
    def __init__(self, text: str):
        self.text = text
        self.names: set[str] = set()

    def generic_visit(self, node):
        allowed = (
            ast.Expression, ast.BinOp, ast.UnaryOp, ast.USub, ast.UAdd, ast.Compare,
            ast.IfExp, ast.Call, ast.Name, ast.Constant, ast.Load, *_BINOPS, *_CMPOPS,
        )
        if not isinstance(node, allowed):
            raise ExpressionError(f"{type(node).__name__} not allowed in {self.text!r}")
        super().generic_visit(node)

    def visit_Constant(self, node):
        if isinstance(node.value, bool) or not isinstance(node.value, (int, float)):
            raise ExpressionError(f"only numeric constants allowed in {self.text!r}")

    def visit_Compare(self, node):
        if len(node.ops) != 1:
            raise ExpressionError(f"chained comparisons not allowed in {self.text!r}")
        self.generic_visit(node)

    def visit_Call(self, node):
        if not isinstance(node.func, ast.Name) or node.func.id not in _FUNCS or node.keywords or not node.args:
            raise ExpressionError(f"unsupported call in {self.text!r}")
        for arg in node.args:
            self.visit(arg)

    def visit_Name(self, node):
        self.names.add(node.id)


class _Vectorize(ast.NodeTransformer):
    def visit_IfExp(self, node):
        self.generic_visit(node)
        call = ast.Call(ast.Name(_WHERE, ast.Load()), [node.test, node.body, node.orelse], [])
        return ast.copy_location(call, node)


class Expression:
    def __init__(self, text: str):
        self.text = text
        try:
            tree = ast.parse(text.strip(), mode="eval")
        except SyntaxError as exc:
            raise ExpressionError(f"cannot parse {text!r}: {exc.msg}") from None
        check = _Check(text)
        check.visit(tree)
        self.names = frozenset(check.names - set(_FUNCS))
        tree = ast.fix_missing_locations(_Vectorize().visit(tree))
        self._code = compile(tree, "<scenario>", "eval")

    def __call__(self, env: Mapping[str, object]):
        missing = self.names - env.keys()
        if missing:
            raise ExpressionError(f"unbound names {sorted(missing)} in {self.text!r}")
        scope = {"__builtins__": {}, _WHERE: np.where, **_FUNCS}
        with np.errstate(divide="ignore", invalid="ignore"):
            return eval(self._code, scope, dict(env))

    def __repr__(self) -> str:
        return f"Expression({self.text!r})"
