#!/usr/bin/env python3
#
############################################################################
#
# MODULE:      expressions
# AUTHOR(S):   isct.treatment developers
#
# PURPOSE:     Parses and compiles the arithmetic expressions of model
#              definition files
# COPYRIGHT:   (C) 2026 by the isct.treatment developers
#
# This program is free software; you can redistribute it and/or modify
# it under the terms of the GNU General Public License as published by
# the Free Software Foundation; either version 2 of the License, or
# (at your option) any later version.
#
# This program is distributed in the hope that it will be useful,
# but WITHOUT ANY WARRANTY; without even the implied warranty of
# MERCHANTABILITY or FITNESS FOR A PARTICULAR PURPOSE.  See the
# GNU General Public License for more details.
#
############################################################################

import keyword
import math
import re

import sympy
from sympy.core.sympify import SympifyError

from .errors import ModelError


def hill(x, k, n):
    """Hill term x^n / (x^n + k^n)"""
    xn = math.pow(x, n)
    return xn / (xn + math.pow(k, n))


# the Hill term stays an opaque function for sympy and is bound at
# compilation
_HILL = sympy.Function("h")
# real powers with a non-integer exponent go through math.pow, which raises
# on a negative base instead of returning a complex number
_REAL_POW = sympy.Function("real_pow")

FUNCTIONS = {
    "exp": sympy.exp,
    "log": sympy.log,
    "sqrt": sympy.sqrt,
    "pow": sympy.Pow,
    "h": _HILL,
    "min": sympy.Min,
    "max": sympy.Max,
    "abs": sympy.Abs,
}

# errors a compiled expression may raise on degenerate input
EVALUATION_ERRORS = (ArithmeticError, ValueError)

_ALLOWED = re.compile(r"^[\w\s.+\-*/^(),]*$")
_IDENTIFIER = re.compile(r"(?<![\w.])([A-Za-z_]\w*)(\s*\()?")
_ATTRIBUTE = re.compile(r"\.\s*[A-Za-z_]")


def identifiers(text):
    """Variable names of an expression in order of first appearance

    Raises ModelError for characters, keywords, attribute access or calls
    outside the supported arithmetic.
    """
    text = str(text)
    if not _ALLOWED.match(text) or "__" in text or _ATTRIBUTE.search(text):
        raise ModelError(f"unsupported syntax in <{text}>")
    names = []
    for match in _IDENTIFIER.finditer(text):
        name, call = match.groups()
        if keyword.iskeyword(name):
            raise ModelError(f"unsupported keyword <{name}> in <{text}>")
        if call:
            if name not in FUNCTIONS:
                raise ModelError(f"unsupported function call <{name}> in <{text}>")
        elif name not in names:
            names.append(name)
    return names


def parse(text, functions=True):
    """Parse and check an expression

    Args:
        text (str): Expression source, e.g. "-k_d*D + h(D, K, 2)"
        functions (bool): Whether the function calls of FUNCTIONS are
                          allowed

    Returns:
        sympy.Expr: The expression, every name a sympy Symbol
    """
    names = identifiers(text)
    if not functions and re.search(r"\w\s*\(", str(text)):
        raise ModelError(f"function calls are not allowed in <{text}>")
    local = {name: sympy.Symbol(name) for name in names}
    if functions:
        local.update(FUNCTIONS)
    try:
        expr = sympy.sympify(str(text).strip(), locals=local, convert_xor=True)
    except (SympifyError, SyntaxError, TypeError, ValueError) as err:
        raise ModelError(f"cannot parse expression <{text}>: {err}")
    if not isinstance(expr, sympy.Expr):
        raise ModelError(f"<{text}> is not an arithmetic expression")
    return expr


def referenced_names(text):
    """Return the variable names an expression refers to"""
    return {symbol.name for symbol in parse(text).free_symbols}


def compile_vector(texts, slots, argnames):
    """Compile expressions into one function returning a tuple

    Args:
        texts (list): Expression sources
        slots (dict): Variable name -> (argument name, index or None)
        argnames (tuple): Argument names of the compiled function

    Returns:
        function: f(*args) -> tuple of values, one per expression
    """
    exprs = [parse(text) for text in texts]
    for expr in exprs:
        unknown = {s.name for s in expr.free_symbols} - set(slots)
        if unknown:
            raise ModelError(f"unknown names {sorted(unknown)} in expression")
    args = []
    for argname in argnames:
        entries = sorted(
            (index, name)
            for name, (vector, index) in slots.items()
            if vector == argname
        )
        if not entries:
            args.append(sympy.Dummy(argname))
        elif len(entries) == 1 and entries[0][0] is None:
            args.append(sympy.Symbol(entries[0][1]))
        else:
            args.append([sympy.Symbol(name) for _index, name in entries])
    exprs = [
        expr.replace(
            lambda node: node.is_Pow and not node.exp.is_Integer,
            lambda node: _REAL_POW(node.base, node.exp),
        )
        for expr in exprs
    ]
    namespace = {"h": hill, "real_pow": math.pow}
    return sympy.lambdify(args, tuple(exprs), modules=[namespace, "math"])
