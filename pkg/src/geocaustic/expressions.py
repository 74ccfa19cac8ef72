"""Small arithmetic-expression language for user metrics and curves.

Expressions use ``+ - * / ^``, parentheses, the functions
``sin cos tan exp log sqrt cosh sinh`` and the constants ``pi`` and ``e``.
Text is validated against a whitelist of syntax nodes before it is handed
to sympy, so nothing but arithmetic ever gets evaluated.
"""

from __future__ import annotations

import ast

import numpy as np
import sympy as sp

FUNCTIONS = {
    "sin": sp.sin,
    "cos": sp.cos,
    "tan": sp.tan,
    "exp": sp.exp,
    "log": sp.log,
    "sqrt": sp.sqrt,
    "cosh": sp.cosh,
    "sinh": sp.sinh,
}
CONSTANTS = {"pi": sp.pi, "e": sp.E}

_BINOPS = {
    ast.Add: lambda a, b: a + b,
    ast.Sub: lambda a, b: a - b,
    ast.Mult: lambda a, b: a * b,
    ast.Div: lambda a, b: a / b,
    ast.Pow: lambda a, b: a**b,
}


class ExpressionError(ValueError):
    """Malformed expression; carries a 1-based line and column."""

    def __init__(self, message, line=1, column=1, source=None):
        self.line = line
        self.column = column
        self.source = source
        super().__init__(f"{message} (line {line}, column {column})")


def _build(node, symbols, text):
    if isinstance(node, ast.Expression):
        return _build(node.body, symbols, text)
    if isinstance(node, ast.BinOp) and type(node.op) in _BINOPS:
        return _BINOPS[type(node.op)](
            _build(node.left, symbols, text), _build(node.right, symbols, text)
        )
    if isinstance(node, ast.UnaryOp) and isinstance(node.op, (ast.USub, ast.UAdd)):
        operand = _build(node.operand, symbols, text)
        return -operand if isinstance(node.op, ast.USub) else operand
    if isinstance(node, ast.Constant) and isinstance(node.value, (int, float)) \
            and not isinstance(node.value, bool):
        return sp.Float(node.value) if isinstance(node.value, float) else sp.Integer(node.value)
    if isinstance(node, ast.Name):
        if node.id in symbols:
            return symbols[node.id]
        if node.id in CONSTANTS:
            return CONSTANTS[node.id]
        raise ExpressionError(f"unknown name {node.id!r}", node.lineno,
                              node.col_offset + 1, text)
    if isinstance(node, ast.Call) and isinstance(node.func, ast.Name):
        name = node.func.id
        if name not in FUNCTIONS:
            raise ExpressionError(f"unknown function {name!r}", node.lineno,
                                  node.col_offset + 1, text)
        if len(node.args) != 1 or node.keywords:
            raise ExpressionError(f"{name} takes exactly one argument",
                                  node.lineno, node.col_offset + 1, text)
        return FUNCTIONS[name](_build(node.args[0], symbols, text))
    line = getattr(node, "lineno", 1)
    col = getattr(node, "col_offset", 0) + 1
    raise ExpressionError(f"unsupported syntax {type(node).__name__}", line, col, text)


def parse_expression(text: str, variables: dict[str, sp.Symbol]) -> sp.Expr:
    """Parse ``text`` into a sympy expression over ``variables``.

    ``^`` is exponentiation.  Raises :class:`ExpressionError` with the
    position of the first offending token.
    """
    if not isinstance(text, str):
        if isinstance(text, (int, float)) and not isinstance(text, bool):
            return sp.Float(text)
        raise ExpressionError(f"expected an expression string, got {type(text).__name__}")
    source, origin = [], []
    for i, ch in enumerate(text):
        piece = "**" if ch == "^" else ch
        source.append(piece)
        origin.extend([i] * len(piece))
    source = "".join(source)
    try:
        tree = ast.parse(source, mode="eval")
    except SyntaxError as exc:
        line = exc.lineno or 1
        col = exc.offset or 0
        msg = exc.msg
        if col == 0:
            # Python reports no offset when the input ends too early
            col = len(text.rstrip()) + 1
            msg = "unexpected end of expression"
        elif line == 1 and col <= len(origin):
            col = origin[col - 1] + 1
        raise ExpressionError(f"syntax error: {msg}", line, col, text) from None
    return _build(tree, variables, text)


def compile_expression(text: str, names: tuple[str, ...]):
    """Parse and lambdify ``text`` as a numpy function of ``names``."""
    symbols = {n: sp.Symbol(n, real=True) for n in names}
    expr = parse_expression(text, symbols)
    return lambdify_broadcast([symbols[n] for n in names], expr)


def lambdify_broadcast(args, expr):
    """Lambdify ``expr`` so constant results still broadcast to the inputs."""
    fn = sp.lambdify(args, expr, modules="numpy", cse=True)

    def evaluate(*values):
        shape = np.broadcast(*values).shape
        return np.broadcast_to(np.asarray(fn(*values), dtype=float), shape).copy()

    return evaluate


def lambdify_tuple(args, exprs):
    """Lambdify a list of expressions into a function returning a tuple of
    arrays, each broadcast to the shape of the inputs."""
    fn = sp.lambdify(args, list(exprs), modules="numpy", cse=True)

    def evaluate(*values):
        shape = np.broadcast(*values).shape
        return tuple(np.broadcast_to(np.asarray(x, dtype=float), shape) for x in fn(*values))

    return evaluate
