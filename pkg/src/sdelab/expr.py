"""Expression parsing and forward-mode automatic differentiation.

Coefficient fields (matrix entries, drift components, densities, test
functions) are written as text in the variables x1..xd and parsed into an
immutable AST. The grammar:

    expr   := term (("+"|"-") term)*
    term   := factor (("*"|"/") factor)*
    factor := base ("^" factor)?          (power is right-associative)
    base   := number | "x"digits | func "(" expr ("," expr)* ")"
            | "(" expr ")" | "-" base

Functions: exp, ln, sqrt, abs, sin, cos, min, max, norm2, pow. min and max
take two or more arguments; norm2 takes one or more and returns the Euclidean
norm of its argument vector; pow(a, b) is a^b.

Note that unary minus lives at the base level, so "-x1^2" parses as
"(-x1)^2". Write "-(x1^2)" for the negation of a square.

Evaluation is strict at scalar points (domain violations raise DomainError)
and lenient on arrays (domain violations become NaN, which callers treat as
evaluation faults). Derivatives are exact forward-mode dual-number sweeps,
nested once for second order; abs, min and max are differentiated one-sidedly
at their kinks (the branch containing the right limit wins, ties go to the
first argument).
"""

from __future__ import annotations

import math

import numpy as np

FUNCTIONS = ("exp", "ln", "sqrt", "abs", "sin", "cos", "min", "max", "norm2", "pow")

_UNARY_FUNCS = ("exp", "ln", "sqrt", "abs", "sin", "cos")


class ParseError(ValueError):
    """Syntax or validation error in an expression source string."""

    def __init__(self, message, line=1, col=None):
        self.line = line
        self.col = col
        if col is not None:
            message = f"{message} (line {line}, column {col})"
        super().__init__(message)


class DomainError(ArithmeticError):
    """Evaluation left the mathematical domain (log of a non-positive
    number, division by zero, fractional power of a negative base)."""


# ---------------------------------------------------------------------------
# AST nodes


class Node:
    __slots__ = ()


class Num(Node):
    __slots__ = ("value",)

    def __init__(self, value):
        object.__setattr__(self, "value", float(value))

    def __setattr__(self, *a):
        raise AttributeError("AST nodes are immutable")

    def __eq__(self, other):
        return type(other) is Num and (
            self.value == other.value
            or (math.isnan(self.value) and math.isnan(other.value))
        )

    def __hash__(self):
        return hash(("num", self.value))


class Var(Node):
    """Variable x<index>, index is 1-based."""

    __slots__ = ("index",)

    def __init__(self, index):
        object.__setattr__(self, "index", int(index))

    def __setattr__(self, *a):
        raise AttributeError("AST nodes are immutable")

    def __eq__(self, other):
        return type(other) is Var and self.index == other.index

    def __hash__(self):
        return hash(("var", self.index))


class Neg(Node):
    __slots__ = ("child",)

    def __init__(self, child):
        object.__setattr__(self, "child", child)

    def __setattr__(self, *a):
        raise AttributeError("AST nodes are immutable")

    def __eq__(self, other):
        return type(other) is Neg and self.child == other.child

    def __hash__(self):
        return hash(("neg", self.child))


class Bin(Node):
    __slots__ = ("op", "left", "right")

    def __init__(self, op, left, right):
        object.__setattr__(self, "op", op)
        object.__setattr__(self, "left", left)
        object.__setattr__(self, "right", right)

    def __setattr__(self, *a):
        raise AttributeError("AST nodes are immutable")

    def __eq__(self, other):
        return (
            type(other) is Bin
            and self.op == other.op
            and self.left == other.left
            and self.right == other.right
        )

    def __hash__(self):
        return hash(("bin", self.op, self.left, self.right))


class Call(Node):
    __slots__ = ("func", "args")

    def __init__(self, func, args):
        object.__setattr__(self, "func", func)
        object.__setattr__(self, "args", tuple(args))

    def __setattr__(self, *a):
        raise AttributeError("AST nodes are immutable")

    def __eq__(self, other):
        return type(other) is Call and self.func == other.func and self.args == other.args

    def __hash__(self):
        return hash(("call", self.func, self.args))


class Expr:
    """An immutable parsed expression in dim variables."""

    __slots__ = ("root", "dim")

    def __init__(self, root, dim):
        if dim < 1:
            raise ParseError("dimension must be a positive integer")
        object.__setattr__(self, "root", root)
        object.__setattr__(self, "dim", int(dim))

    def __setattr__(self, *a):
        raise AttributeError("Expr is immutable")

    def __eq__(self, other):
        return isinstance(other, Expr) and self.dim == other.dim and self.root == other.root

    def __hash__(self):
        return hash((self.root, self.dim))

    def __repr__(self):
        return f"Expr({to_source(self)!r}, dim={self.dim})"


# ---------------------------------------------------------------------------
# Tokenizer


class _Token:
    __slots__ = ("kind", "text", "line", "col")

    def __init__(self, kind, text, line, col):
        self.kind = kind
        self.text = text
        self.line = line
        self.col = col


def _tokenize(source):
    tokens = []
    i, n = 0, len(source)
    line, col = 1, 1
    while i < n:
        c = source[i]
        if c == "\n":
            line += 1
            col = 1
            i += 1
            continue
        if c in " \t\r":
            i += 1
            col += 1
            continue
        if c in "+-*/^(),":
            tokens.append(_Token(c, c, line, col))
            i += 1
            col += 1
            continue
        if c.isdigit() or (c == "." and i + 1 < n and source[i + 1].isdigit()):
            j = i
            while j < n and source[j].isdigit():
                j += 1
            if j < n and source[j] == ".":
                j += 1
                while j < n and source[j].isdigit():
                    j += 1
            if j < n and source[j] in "eE":
                k = j + 1
                if k < n and source[k] in "+-":
                    k += 1
                if k < n and source[k].isdigit():
                    j = k
                    while j < n and source[j].isdigit():
                        j += 1
            text = source[i:j]
            tokens.append(_Token("num", text, line, col))
            col += j - i
            i = j
            continue
        if c.isalpha() or c == "_":
            j = i
            while j < n and (source[j].isalnum() or source[j] == "_"):
                j += 1
            tokens.append(_Token("ident", source[i:j], line, col))
            col += j - i
            i = j
            continue
        raise ParseError(f"unexpected character {c!r}", line, col)
    tokens.append(_Token("end", "", line, col))
    return tokens


# ---------------------------------------------------------------------------
# Parser


class _Parser:
    def __init__(self, tokens, dim):
        self.tokens = tokens
        self.pos = 0
        self.dim = dim

    def peek(self):
        return self.tokens[self.pos]

    def take(self, kind=None):
        tok = self.tokens[self.pos]
        if kind is not None and tok.kind != kind:
            raise ParseError(
                f"expected {kind!r}, found {tok.text or 'end of input'!r}", tok.line, tok.col
            )
        self.pos += 1
        return tok

    def parse_expr(self):
        node = self.parse_term()
        while self.peek().kind in ("+", "-"):
            op = self.take().kind
            node = Bin(op, node, self.parse_term())
        return node

    def parse_term(self):
        node = self.parse_factor()
        while self.peek().kind in ("*", "/"):
            op = self.take().kind
            node = Bin(op, node, self.parse_factor())
        return node

    def parse_factor(self):
        node = self.parse_base()
        if self.peek().kind == "^":
            self.take()
            node = Bin("^", node, self.parse_factor())
        return node

    def parse_base(self):
        tok = self.peek()
        if tok.kind == "-":
            self.take()
            return Neg(self.parse_base())
        if tok.kind == "num":
            self.take()
            return Num(float(tok.text))
        if tok.kind == "(":
            self.take()
            node = self.parse_expr()
            self.take(")")
            return node
        if tok.kind == "ident":
            self.take()
            name = tok.text
            if self.peek().kind == "(":
                if name not in FUNCTIONS:
                    raise ParseError(f"unknown function {name!r}", tok.line, tok.col)
                self.take("(")
                args = [self.parse_expr()]
                while self.peek().kind == ",":
                    self.take()
                    args.append(self.parse_expr())
                self.take(")")
                self._check_arity(name, len(args), tok)
                return Call(name, args)
            if len(name) > 1 and name[0] == "x" and name[1:].isdigit():
                index = int(name[1:])
                if not 1 <= index <= self.dim:
                    raise ParseError(
                        f"variable index out of range: {name} with dimension {self.dim}",
                        tok.line,
                        tok.col,
                    )
                return Var(index)
            raise ParseError(f"unknown identifier {name!r}", tok.line, tok.col)
        raise ParseError(
            f"expected a value, found {tok.text or 'end of input'!r}", tok.line, tok.col
        )

    @staticmethod
    def _check_arity(name, count, tok):
        if name in _UNARY_FUNCS and count != 1:
            raise ParseError(f"{name} takes exactly 1 argument, got {count}", tok.line, tok.col)
        if name == "pow" and count != 2:
            raise ParseError(f"pow takes exactly 2 arguments, got {count}", tok.line, tok.col)
        if name in ("min", "max") and count < 2:
            raise ParseError(f"{name} takes at least 2 arguments, got {count}", tok.line, tok.col)
        # norm2 takes any positive number of arguments


def parse(source: str, dim: int) -> Expr:
    """Parse source text into an Expr over variables x1..x<dim>.

    Raises ParseError with line/column on syntax errors, unknown
    identifiers, and variable indices above dim.
    """
    parser = _Parser(_tokenize(source), dim)
    root = parser.parse_expr()
    end = parser.peek()
    if end.kind != "end":
        raise ParseError(f"unexpected trailing input {end.text!r}", end.line, end.col)
    return Expr(root, dim)


def to_source(e: Expr) -> str:
    """Pretty-print with full parenthesization; reparsing the result gives a
    structurally equal AST."""
    return _print(e.root)


def _print(node):
    if type(node) is Num:
        v = node.value
        if v == int(v) and abs(v) < 1e16:
            return str(int(v))
        return repr(v)
    if type(node) is Var:
        return f"x{node.index}"
    if type(node) is Neg:
        return f"(-{_print(node.child)})"
    if type(node) is Bin:
        return f"({_print(node.left)} {node.op} {_print(node.right)})"
    if type(node) is Call:
        return f"{node.func}({', '.join(_print(a) for a in node.args)})"
    raise TypeError(f"not an AST node: {node!r}")


# ---------------------------------------------------------------------------
# Dual numbers (forward mode)


class Dual:
    """Value together with one directional derivative. val and dot are
    floats, arrays, or (for second order) Duals themselves."""

    __slots__ = ("val", "dot")
    __array_ufunc__ = None  # keep numpy from absorbing us into object arrays

    def __init__(self, val, dot):
        self.val = val
        self.dot = dot

    def __add__(self, other):
        if isinstance(other, Dual):
            return Dual(self.val + other.val, self.dot + other.dot)
        return Dual(self.val + other, self.dot)

    __radd__ = __add__

    def __sub__(self, other):
        if isinstance(other, Dual):
            return Dual(self.val - other.val, self.dot - other.dot)
        return Dual(self.val - other, self.dot)

    def __rsub__(self, other):
        return Dual(other - self.val, -self.dot)

    def __mul__(self, other):
        if isinstance(other, Dual):
            return Dual(self.val * other.val, self.dot * other.val + self.val * other.dot)
        return Dual(self.val * other, self.dot * other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Dual):
            q = self.val / other.val
            return Dual(q, (self.dot - q * other.dot) / other.val)
        return Dual(self.val / other, self.dot / other)

    def __rtruediv__(self, other):
        q = other / self.val
        return Dual(q, -q * self.dot / self.val)

    def __neg__(self):
        return Dual(-self.val, -self.dot)


def _value_of(v):
    while isinstance(v, Dual):
        v = v.val
    return v


def _zero_like(v):
    if isinstance(v, Dual):
        return Dual(_zero_like(v.val), _zero_like(v.dot))
    if isinstance(v, np.ndarray):
        return np.zeros_like(v)
    return 0.0


# Elementary functions over float | ndarray | Dual. strict=True raises
# DomainError at violations, strict=False leaves NaN propagation to numpy.


def _exp(v, strict):
    if isinstance(v, Dual):
        e = _exp(v.val, strict)
        return Dual(e, e * v.dot)
    if isinstance(v, np.ndarray):
        return np.exp(v)
    return math.exp(v) if v < 709.0 else math.inf


def _ln(v, strict):
    if isinstance(v, Dual):
        return Dual(_ln(v.val, strict), v.dot / v.val)
    if isinstance(v, np.ndarray):
        return np.log(v)
    if v <= 0.0:
        if strict:
            raise DomainError(f"ln of non-positive value {v}")
        return math.nan
    return math.log(v)


def _sqrt(v, strict):
    if isinstance(v, Dual):
        s = _sqrt(v.val, strict)
        return Dual(s, v.dot / (2.0 * s))
    if isinstance(v, np.ndarray):
        return np.sqrt(v)
    if v < 0.0:
        if strict:
            raise DomainError(f"sqrt of negative value {v}")
        return math.nan
    return math.sqrt(v)


def _sin(v, strict):
    if isinstance(v, Dual):
        return Dual(_sin(v.val, strict), _cos(v.val, strict) * v.dot)
    if isinstance(v, np.ndarray):
        return np.sin(v)
    return math.sin(v)


def _cos(v, strict):
    if isinstance(v, Dual):
        return Dual(_cos(v.val, strict), -_sin(v.val, strict) * v.dot)
    if isinstance(v, np.ndarray):
        return np.cos(v)
    return math.cos(v)


def _abs(v, strict):
    if isinstance(v, Dual):
        inner = _value_of(v.val)
        if isinstance(inner, np.ndarray):
            sign = np.where(inner >= 0.0, 1.0, -1.0)
        else:
            sign = 1.0 if inner >= 0.0 else -1.0
        return Dual(_abs(v.val, strict), v.dot * sign)
    if isinstance(v, np.ndarray):
        return np.abs(v)
    return abs(v)


def _select(cond, a, b):
    """Branchless select for floats, arrays and Duals; cond is boolean or a
    boolean array."""
    if isinstance(a, Dual) or isinstance(b, Dual):
        av, ad = (a.val, a.dot) if isinstance(a, Dual) else (a, _zero_like(b.dot))
        bv, bd = (b.val, b.dot) if isinstance(b, Dual) else (b, _zero_like(a.dot))
        return Dual(_select(cond, av, bv), _select(cond, ad, bd))
    if isinstance(cond, np.ndarray):
        return np.where(cond, a, b)
    return a if cond else b


def _min2(a, b):
    av = _value_of(a)
    bv = _value_of(b)
    if isinstance(av, np.ndarray) or isinstance(bv, np.ndarray):
        return _select(av <= bv, a, b)
    return a if av <= bv else b


def _max2(a, b):
    av = _value_of(a)
    bv = _value_of(b)
    if isinstance(av, np.ndarray) or isinstance(bv, np.ndarray):
        return _select(av >= bv, a, b)
    return a if av >= bv else b


def _is_integer_constant(node):
    return type(node) is Num and float(node.value).is_integer()


def _int_pow(base, n):
    if n == 0:
        if isinstance(base, Dual):
            return Dual(_int_pow(base.val, 0), _zero_like(base.dot))
        if isinstance(base, np.ndarray):
            return np.ones_like(base)
        return 1.0
    if n < 0:
        return 1.0 / _int_pow(base, -n)
    result = base
    for _ in range(n - 1):
        result = result * base
    return result


def _pow(base, expo, strict):
    bv = _value_of(base)
    ev = _value_of(expo)
    if not isinstance(expo, Dual):
        ev_scalar = ev if not isinstance(ev, np.ndarray) else None
        if ev_scalar is not None and float(ev_scalar).is_integer() and abs(ev_scalar) <= 64:
            return _int_pow(base, int(ev_scalar))
    # general a^b via exp(b ln a), domain a > 0
    if strict and not isinstance(bv, np.ndarray):
        if bv < 0.0:
            raise DomainError(f"fractional power of negative base {bv}")
        if bv == 0.0:
            evs = ev if not isinstance(ev, np.ndarray) else None
            if evs is not None and evs <= 0.0:
                raise DomainError("zero base with non-positive exponent")
            if not isinstance(base, Dual) and not isinstance(expo, Dual):
                return 0.0
    if isinstance(base, Dual) or isinstance(expo, Dual):
        return _exp(expo * _ln(base, strict), strict)
    if isinstance(bv, np.ndarray) or isinstance(ev, np.ndarray):
        return np.power(base, expo)
    try:
        return math.pow(base, expo)
    except (ValueError, OverflowError) as exc:
        if strict:
            raise DomainError(f"pow({base}, {expo}) undefined") from exc
        return math.nan


def _div(a, b, strict):
    if strict and not isinstance(b, Dual):
        bv = b
        if not isinstance(bv, np.ndarray) and bv == 0.0:
            raise DomainError("division by zero")
    if strict and isinstance(b, Dual):
        bv = _value_of(b)
        if not isinstance(bv, np.ndarray) and bv == 0.0:
            raise DomainError("division by zero")
    return a / b


_FUNC_TABLE = {
    "exp": _exp,
    "ln": _ln,
    "sqrt": _sqrt,
    "sin": _sin,
    "cos": _cos,
    "abs": _abs,
}


def _eval_node(node, env, strict):
    kind = type(node)
    if kind is Num:
        return node.value
    if kind is Var:
        return env[node.index - 1]
    if kind is Neg:
        return -_eval_node(node.child, env, strict)
    if kind is Bin:
        left = _eval_node(node.left, env, strict)
        if node.op == "^":
            # keep integer-exponent fast path without evaluating twice
            if _is_integer_constant(node.right) and abs(node.right.value) <= 64:
                return _int_pow(left, int(node.right.value))
            right = _eval_node(node.right, env, strict)
            return _pow(left, right, strict)
        right = _eval_node(node.right, env, strict)
        if node.op == "+":
            return left + right
        if node.op == "-":
            return left - right
        if node.op == "*":
            return left * right
        if node.op == "/":
            return _div(left, right, strict)
        raise AssertionError(node.op)
    if kind is Call:
        name = node.func
        if name in _FUNC_TABLE:
            return _FUNC_TABLE[name](_eval_node(node.args[0], env, strict), strict)
        if name == "pow":
            base = _eval_node(node.args[0], env, strict)
            if _is_integer_constant(node.args[1]) and abs(node.args[1].value) <= 64:
                return _int_pow(base, int(node.args[1].value))
            return _pow(base, _eval_node(node.args[1], env, strict), strict)
        if name == "min":
            result = _eval_node(node.args[0], env, strict)
            for a in node.args[1:]:
                result = _min2(result, _eval_node(a, env, strict))
            return result
        if name == "max":
            result = _eval_node(node.args[0], env, strict)
            for a in node.args[1:]:
                result = _max2(result, _eval_node(a, env, strict))
            return result
        if name == "norm2":
            acc = None
            for a in node.args:
                v = _eval_node(a, env, strict)
                sq = v * v
                acc = sq if acc is None else acc + sq
            return _sqrt(acc, strict)
        raise AssertionError(name)
    raise TypeError(f"not an AST node: {node!r}")


def _check_point(e, coords):
    if len(coords) != e.dim:
        raise ValueError(f"point has {len(coords)} coordinates, expression has dim {e.dim}")


def eval_at(e: Expr, coords) -> float:
    """Evaluate at a single point (strict: domain violations raise
    DomainError)."""
    _check_point(e, coords)
    env = [float(c) for c in coords]
    result = _eval_node(e.root, env, True)
    return float(result)


def eval_many(e: Expr, X) -> np.ndarray:
    """Evaluate at an (N, dim) array of points. Domain violations yield NaN
    in the corresponding slots; infinities are mapped to NaN as well so NaN
    is the single fault marker."""
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[None, :]
    if X.shape[1] != e.dim:
        raise ValueError(f"points have {X.shape[1]} coordinates, expression has dim {e.dim}")
    env = [np.ascontiguousarray(X[:, k]) for k in range(e.dim)]
    with np.errstate(all="ignore"):
        result = _eval_node(e.root, env, False)
    out = np.broadcast_to(np.asarray(result, dtype=float), (X.shape[0],)).copy()
    out[~np.isfinite(out)] = np.nan
    return out


def derive(e: Expr, coords, j: int) -> float:
    """First partial derivative with respect to x<j> (1-based) at a point."""
    _check_point(e, coords)
    if not 1 <= j <= e.dim:
        raise ValueError(f"derivative index {j} out of range 1..{e.dim}")
    env = [Dual(float(c), 1.0 if k == j - 1 else 0.0) for k, c in enumerate(coords)]
    result = _eval_node(e.root, env, True)
    if isinstance(result, Dual):
        return float(result.dot)
    return 0.0


def derive2(e: Expr, coords, i: int, j: int) -> float:
    """Second partial derivative d2/dxi dxj (1-based) at a point, by nested
    dual evaluation."""
    _check_point(e, coords)
    for idx in (i, j):
        if not 1 <= idx <= e.dim:
            raise ValueError(f"derivative index {idx} out of range 1..{e.dim}")
    env = []
    for k, c in enumerate(coords):
        inner = Dual(float(c), 1.0 if k == j - 1 else 0.0)
        outer_dot = Dual(1.0 if k == i - 1 else 0.0, 0.0)
        env.append(Dual(inner, outer_dot))
    result = _eval_node(e.root, env, True)
    if isinstance(result, Dual) and isinstance(result.dot, Dual):
        return float(result.dot.dot)
    return 0.0


def grad_many(e: Expr, X) -> np.ndarray:
    """Gradient at an (N, dim) array of points, returned as (N, dim). NaN
    marks faults."""
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[None, :]
    n, d = X.shape
    if d != e.dim:
        raise ValueError(f"points have {d} coordinates, expression has dim {e.dim}")
    cols = [np.ascontiguousarray(X[:, k]) for k in range(d)]
    out = np.empty((n, d))
    with np.errstate(all="ignore"):
        for j in range(d):
            env = [
                Dual(cols[k], np.ones(n) if k == j else np.zeros(n)) for k in range(d)
            ]
            result = _eval_node(e.root, env, False)
            dot = result.dot if isinstance(result, Dual) else np.zeros(n)
            out[:, j] = np.broadcast_to(np.asarray(dot, dtype=float), (n,))
    out[~np.isfinite(out)] = np.nan
    return out


def hess_many(e: Expr, X) -> np.ndarray:
    """Hessian at an (N, dim) array of points, returned as (N, dim, dim)."""
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[None, :]
    n, d = X.shape
    if d != e.dim:
        raise ValueError(f"points have {d} coordinates, expression has dim {e.dim}")
    cols = [np.ascontiguousarray(X[:, k]) for k in range(d)]
    ones = np.ones(n)
    zeros = np.zeros(n)
    out = np.empty((n, d, d))
    with np.errstate(all="ignore"):
        for i in range(d):
            for j in range(i, d):
                env = []
                for k in range(d):
                    inner = Dual(cols[k], ones if k == j else zeros)
                    outer = Dual(ones if k == i else zeros, zeros)
                    env.append(Dual(inner, outer))
                result = _eval_node(e.root, env, False)
                if isinstance(result, Dual) and isinstance(result.dot, Dual):
                    val = np.broadcast_to(np.asarray(result.dot.dot, dtype=float), (n,))
                else:
                    val = zeros
                out[:, i, j] = val
                out[:, j, i] = val
    out[~np.isfinite(out)] = np.nan
    return out


def variables_used(e: Expr):
    """Set of 1-based variable indices appearing in the expression."""
    found = set()

    def walk(node):
        kind = type(node)
        if kind is Var:
            found.add(node.index)
        elif kind is Neg:
            walk(node.child)
        elif kind is Bin:
            walk(node.left)
            walk(node.right)
        elif kind is Call:
            for a in node.args:
                walk(a)

    walk(e.root)
    return found
