"""Smooth scalar expressions over chart coordinates y1..y9, parameters x1..x9
and the homotopy time variable t.

Expressions are immutable trees supporting parsing, printing, symbolic
differentiation, capture-safe substitution, definite t-integration over
[0, 1], canonical normalization, and numpy-vectorized pointwise evaluation.

Substitution creates shared subtrees (chart components are inserted once and
referenced from every occurrence), and all tree transformations memoize per
node id within a call, so composite charts stay cheap to differentiate and
evaluate. Structural hashes are computed with a fixed mixing function, never
with Python's randomized hash, which keeps orderings identical across
processes.
"""

from __future__ import annotations

import math
import re
import struct

import numpy as np

from .errors import (
    EvaluationError,
    ParseError,
    StepDerivativeError,
    UnknownSymbolError,
)
from .quadrature import integrate_01

FUNCTIONS = ("exp", "log", "sin", "cos", "tan", "atan", "sqrt", "bump", "step")
T = "t"

_EMPTY = frozenset()

_M64 = (1 << 64) - 1
_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3


def _dhash_str(s):
    h = _FNV_OFFSET
    for ch in s:
        h = ((h ^ ord(ch)) * _FNV_PRIME) & _M64
    return h


def _dhash_float(v):
    (bits,) = struct.unpack("<Q", struct.pack("<d", v))
    return _dhash_mix(11, bits)


def _dhash_mix(*parts):
    h = _FNV_OFFSET
    for p in parts:
        h = ((h ^ (p & _M64)) * _FNV_PRIME) & _M64
        h = (h ^ (h >> 29)) & _M64
    return h


class Expr:
    """Base node. Subclasses are immutable; ``free`` is the free-symbol set."""

    __slots__ = ("free", "has_quad", "_hash", "_key")

    def _seal(self, free, has_quad, hash_value):
        object.__setattr__(self, "free", free)
        object.__setattr__(self, "has_quad", has_quad)
        object.__setattr__(self, "_hash", hash_value)
        object.__setattr__(self, "_key", None)

    def __setattr__(self, name, value):
        raise AttributeError("Expr nodes are immutable")

    def __hash__(self):
        return self._hash

    def __repr__(self):
        return to_text(self)

    # arithmetic sugar used throughout the library
    def __add__(self, other):
        return Add((self, as_expr(other)))

    def __radd__(self, other):
        return Add((as_expr(other), self))

    def __sub__(self, other):
        return Sub(self, as_expr(other))

    def __rsub__(self, other):
        return Sub(as_expr(other), self)

    def __mul__(self, other):
        return Mul((self, as_expr(other)))

    def __rmul__(self, other):
        return Mul((as_expr(other), self))

    def __truediv__(self, other):
        return Div(self, as_expr(other))

    def __rtruediv__(self, other):
        return Div(as_expr(other), self)

    def __pow__(self, exponent):
        return Pow(self, exponent)

    def __neg__(self):
        return Neg(self)

    @property
    def sort_key(self):
        key = self._key
        if key is None:
            key = self._make_key()
            object.__setattr__(self, "_key", key)
        return key


def as_expr(value):
    if isinstance(value, Expr):
        return value
    return Num(float(value))


class Num(Expr):
    __slots__ = ("value",)

    def __init__(self, value):
        value = float(value)
        if value == 0.0:
            value = 0.0  # fold -0.0
        object.__setattr__(self, "value", value)
        self._seal(_EMPTY, False, _dhash_float(value))

    def __eq__(self, other):
        return self is other or (isinstance(other, Num) and other.value == self.value)

    __hash__ = Expr.__hash__

    def _make_key(self):
        return (0, self.value, 0)


class Sym(Expr):
    __slots__ = ("name",)

    def __init__(self, name):
        object.__setattr__(self, "name", name)
        self._seal(frozenset((name,)), False, _dhash_mix(13, _dhash_str(name)))

    def __eq__(self, other):
        return self is other or (isinstance(other, Sym) and other.name == self.name)

    __hash__ = Expr.__hash__

    def _make_key(self):
        return (1, self.name, 0)


def _merge_free(parts):
    free = set()
    quad = False
    for p in parts:
        free |= p.free
        quad = quad or p.has_quad
    return frozenset(free), quad


class Add(Expr):
    __slots__ = ("terms",)

    def __init__(self, terms):
        terms = tuple(terms)
        if len(terms) < 2:
            raise ValueError("Add needs at least two terms")
        object.__setattr__(self, "terms", terms)
        free, quad = _merge_free(terms)
        self._seal(free, quad, _dhash_mix(17, *(t._hash for t in terms)))

    def __eq__(self, other):
        if self is other:
            return True
        return (
            isinstance(other, Add)
            and other._hash == self._hash
            and other.terms == self.terms
        )

    __hash__ = Expr.__hash__

    def _make_key(self):
        return (6, len(self.terms), self._hash)


class Sub(Expr):
    __slots__ = ("a", "b")

    def __init__(self, a, b):
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", b)
        free, quad = _merge_free((a, b))
        self._seal(free, quad, _dhash_mix(19, a._hash, b._hash))

    def __eq__(self, other):
        if self is other:
            return True
        return (
            isinstance(other, Sub)
            and other._hash == self._hash
            and other.a == self.a
            and other.b == self.b
        )

    __hash__ = Expr.__hash__

    def _make_key(self):
        return (8, 0, self._hash)


class Neg(Expr):
    __slots__ = ("arg",)

    def __init__(self, arg):
        object.__setattr__(self, "arg", arg)
        self._seal(arg.free, arg.has_quad, _dhash_mix(23, arg._hash))

    def __eq__(self, other):
        if self is other:
            return True
        return (
            isinstance(other, Neg)
            and other._hash == self._hash
            and other.arg == self.arg
        )

    __hash__ = Expr.__hash__

    def _make_key(self):
        return (9, 0, self._hash)


class Mul(Expr):
    __slots__ = ("factors",)

    def __init__(self, factors):
        factors = tuple(factors)
        if len(factors) < 2:
            raise ValueError("Mul needs at least two factors")
        object.__setattr__(self, "factors", factors)
        free, quad = _merge_free(factors)
        self._seal(free, quad, _dhash_mix(29, *(f._hash for f in factors)))

    def __eq__(self, other):
        if self is other:
            return True
        return (
            isinstance(other, Mul)
            and other._hash == self._hash
            and other.factors == self.factors
        )

    __hash__ = Expr.__hash__

    def _make_key(self):
        return (5, len(self.factors), self._hash)


class Div(Expr):
    __slots__ = ("a", "b")

    def __init__(self, a, b):
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", b)
        free, quad = _merge_free((a, b))
        self._seal(free, quad, _dhash_mix(31, a._hash, b._hash))

    def __eq__(self, other):
        if self is other:
            return True
        return (
            isinstance(other, Div)
            and other._hash == self._hash
            and other.a == self.a
            and other.b == self.b
        )

    __hash__ = Expr.__hash__

    def _make_key(self):
        return (10, 0, self._hash)


class Pow(Expr):
    __slots__ = ("base", "exponent")

    def __init__(self, base, exponent):
        if not isinstance(exponent, int):
            raise TypeError("Pow exponent must be a Python int")
        object.__setattr__(self, "base", base)
        object.__setattr__(self, "exponent", exponent)
        self._seal(
            base.free, base.has_quad, _dhash_mix(37, base._hash, exponent & _M64)
        )

    def __eq__(self, other):
        if self is other:
            return True
        return (
            isinstance(other, Pow)
            and other._hash == self._hash
            and other.exponent == self.exponent
            and other.base == self.base
        )

    __hash__ = Expr.__hash__

    def _make_key(self):
        return (4, self.exponent, self.base._hash)


class Call(Expr):
    __slots__ = ("fn", "arg")

    def __init__(self, fn, arg):
        if fn not in FUNCTIONS:
            raise ValueError(f"unknown function {fn!r}")
        object.__setattr__(self, "fn", fn)
        object.__setattr__(self, "arg", arg)
        self._seal(
            arg.free, arg.has_quad, _dhash_mix(41, _dhash_str(fn), arg._hash)
        )

    def __eq__(self, other):
        if self is other:
            return True
        return (
            isinstance(other, Call)
            and other._hash == self._hash
            and other.fn == self.fn
            and other.arg == self.arg
        )

    __hash__ = Expr.__hash__

    def _make_key(self):
        return (2, self.fn, self.arg._hash)


class BumpDeriv(Expr):
    """order-th derivative of bump, kept as a single evaluable node.

    bump and every derivative of it vanish identically for |s| >= 1, so a
    dedicated node is the only representation whose evaluation stays
    continuous across the support boundary.
    """

    __slots__ = ("order", "arg")

    def __init__(self, order, arg):
        if order < 1:
            raise ValueError("BumpDeriv order must be >= 1")
        object.__setattr__(self, "order", order)
        object.__setattr__(self, "arg", arg)
        self._seal(arg.free, arg.has_quad, _dhash_mix(43, order, arg._hash))

    def __eq__(self, other):
        if self is other:
            return True
        return (
            isinstance(other, BumpDeriv)
            and other._hash == self._hash
            and other.order == self.order
            and other.arg == self.arg
        )

    __hash__ = Expr.__hash__

    def _make_key(self):
        return (3, self.order, self.arg._hash)


class TIntegral(Expr):
    """Definite integral of ``body`` over var in [0, 1]; ``var`` is bound."""

    __slots__ = ("var", "body", "_tpoly")

    def __init__(self, var, body):
        object.__setattr__(self, "var", var)
        object.__setattr__(self, "body", body)
        object.__setattr__(self, "_tpoly", False)  # False = not yet checked
        self._seal(body.free - {var}, True, _dhash_mix(47, _dhash_str(var), body._hash))

    def __eq__(self, other):
        if self is other:
            return True
        return (
            isinstance(other, TIntegral)
            and other._hash == self._hash
            and other.var == self.var
            and other.body == self.body
        )

    __hash__ = Expr.__hash__

    def _make_key(self):
        return (7, self.var, self._hash)

    def poly_coefficients(self):
        """Cached coefficient list when the body is polynomial in var."""
        cached = self._tpoly
        if cached is False:
            cached = t_poly(self.body, self.var)
            object.__setattr__(self, "_tpoly", cached)
        return cached


_ZERO = Num(0.0)
_ONE = Num(1.0)


# ---------------------------------------------------------------------------
# parsing
# ---------------------------------------------------------------------------

_TOKEN_RE = re.compile(
    r"(\d+\.\d*(?:[eE][+-]?\d+)?|\.\d+(?:[eE][+-]?\d+)?|\d+(?:[eE][+-]?\d+)?)"
    r"|([A-Za-z_][A-Za-z_0-9]*)"
    r"|([-+*/^()])"
)

_SYMBOL_RE = re.compile(r"([xy])([1-9])$")


class _Lexer:
    def __init__(self, text):
        self.tokens = []
        pos = 0
        n = len(text)
        while pos < n:
            if text[pos].isspace():
                pos += 1
                continue
            m = _TOKEN_RE.match(text, pos)
            if m is None:
                raise ParseError(f"unexpected character {text[pos]!r}", pos)
            if m.group(1) is not None:
                self.tokens.append(("num", m.group(1), pos))
            elif m.group(2) is not None:
                self.tokens.append(("name", m.group(2), pos))
            else:
                self.tokens.append(("op", m.group(3), pos))
            pos = m.end()
        self.tokens.append(("end", "", n))
        self.i = 0

    def peek(self):
        return self.tokens[self.i]

    def next(self):
        tok = self.tokens[self.i]
        self.i += 1
        return tok


class _Parser:
    def __init__(self, text, dim, params, allow_t):
        self.lex = _Lexer(text)
        self.dim = dim
        self.params = params
        self.allow_t = allow_t

    def parse(self):
        e = self.expr()
        kind, text, pos = self.lex.peek()
        if kind != "end":
            raise ParseError(f"unexpected token {text!r}", pos)
        return e

    def expr(self):
        e = self.term()
        while True:
            kind, text, _ = self.lex.peek()
            if kind == "op" and text in "+-":
                self.lex.next()
                rhs = self.term()
                e = Add((e, rhs)) if text == "+" else Sub(e, rhs)
            else:
                return e

    def term(self):
        e = self.factor()
        while True:
            kind, text, _ = self.lex.peek()
            if kind == "op" and text in "*/":
                self.lex.next()
                rhs = self.factor()
                e = Mul((e, rhs)) if text == "*" else Div(e, rhs)
            else:
                return e

    def factor(self):
        e = self.base()
        kind, text, _ = self.lex.peek()
        if kind == "op" and text == "^":
            self.lex.next()
            e = Pow(e, self.integer())
        return e

    def integer(self):
        sign = 1
        kind, text, pos = self.lex.peek()
        if kind == "op" and text == "-":
            self.lex.next()
            sign = -1
            kind, text, pos = self.lex.peek()
        if kind != "num" or not text.isdigit():
            raise ParseError("expected integer exponent", pos)
        self.lex.next()
        return sign * int(text)

    def base(self):
        kind, text, pos = self.lex.next()
        if kind == "num":
            return Num(float(text))
        if kind == "name":
            if text in FUNCTIONS:
                okind, otext, opos = self.lex.next()
                if okind != "op" or otext != "(":
                    raise ParseError(f"expected '(' after {text!r}", opos)
                arg = self.expr()
                ckind, ctext, cpos = self.lex.next()
                if ckind != "op" or ctext != ")":
                    raise ParseError("expected ')'", cpos)
                return Call(text, arg)
            return self.symbol(text, pos)
        if kind == "op" and text == "-":
            return Neg(self.base())
        if kind == "op" and text == "(":
            e = self.expr()
            ckind, ctext, cpos = self.lex.next()
            if ckind != "op" or ctext != ")":
                raise ParseError("expected ')'", cpos)
            return e
        raise ParseError(f"unexpected token {text!r}", pos)

    def symbol(self, text, pos):
        if text == T:
            if not self.allow_t:
                raise UnknownSymbolError("symbol 't' not allowed here", pos)
            return Sym(T)
        m = _SYMBOL_RE.match(text)
        if m is None:
            raise UnknownSymbolError(f"unknown symbol {text!r}", pos)
        kind, idx = m.group(1), int(m.group(2))
        limit = self.dim if kind == "y" else self.params
        if idx > limit:
            raise UnknownSymbolError(
                f"symbol {text!r} outside declared context "
                f"({'d' if kind == 'y' else 'n'}={limit})",
                pos,
            )
        return Sym(text)


def parse(text, dim=9, params=9, allow_t=True):
    """Parse expression text against a (d, n) symbol context."""
    return _Parser(text, dim, params, allow_t).parse()


# ---------------------------------------------------------------------------
# printing
# ---------------------------------------------------------------------------

_PREC_ADD, _PREC_MUL, _PREC_POW, _PREC_ATOM = 1, 2, 3, 4


def _num_text(value):
    if value.is_integer() and abs(value) < 1e16:
        return str(int(value))
    return repr(value)


def _prec(e):
    if isinstance(e, (Add, Sub)):
        return _PREC_ADD
    if isinstance(e, (Mul, Div)):
        return _PREC_MUL
    if isinstance(e, Pow):
        return _PREC_POW
    # Neg and negative literals are 'base'-level productions in the grammar,
    # so they never need parentheses of their own.
    return _PREC_ATOM


def _render(e, min_prec):
    if isinstance(e, Num):
        s = _num_text(e.value)
    elif isinstance(e, Sym):
        s = e.name
    elif isinstance(e, Add):
        parts = [_render(e.terms[0], _PREC_ADD)]
        parts += [_render(t, _PREC_ADD + 1) for t in e.terms[1:]]
        s = " + ".join(parts)
    elif isinstance(e, Sub):
        s = f"{_render(e.a, _PREC_ADD)} - {_render(e.b, _PREC_ADD + 1)}"
    elif isinstance(e, Mul):
        parts = [_render(e.factors[0], _PREC_MUL)]
        parts += [_render(f, _PREC_MUL + 1) for f in e.factors[1:]]
        s = "*".join(parts)
    elif isinstance(e, Div):
        s = f"{_render(e.a, _PREC_MUL)}/{_render(e.b, _PREC_MUL + 1)}"
    elif isinstance(e, Neg):
        s = f"-{_render(e.arg, _PREC_ATOM)}"
    elif isinstance(e, Pow):
        s = f"{_render(e.base, _PREC_ATOM)}^{e.exponent}"
    elif isinstance(e, Call):
        return f"{e.fn}({_render(e.arg, 0)})"
    elif isinstance(e, BumpDeriv):
        return f"bump_d{e.order}({_render(e.arg, 0)})"
    elif isinstance(e, TIntegral):
        return f"int01[{e.var}]({_render(e.body, 0)})"
    else:  # pragma: no cover
        raise TypeError(f"cannot render {type(e).__name__}")
    if _prec(e) < min_prec:
        return f"({s})"
    return s


def to_text(e):
    """Render an expression; parser output round-trips up to whitespace."""
    return _render(e, 0)


# ---------------------------------------------------------------------------
# substitution (capture-safe for bound integration variables)
# ---------------------------------------------------------------------------


def _all_names(e, acc, seen):
    if id(e) in seen:
        return acc
    seen.add(id(e))
    if isinstance(e, Sym):
        acc.add(e.name)
    elif isinstance(e, TIntegral):
        acc.add(e.var)
        _all_names(e.body, acc, seen)
    elif isinstance(e, Num):
        pass
    elif isinstance(e, Add):
        for tnode in e.terms:
            _all_names(tnode, acc, seen)
    elif isinstance(e, Mul):
        for fnode in e.factors:
            _all_names(fnode, acc, seen)
    elif isinstance(e, (Sub, Div)):
        _all_names(e.a, acc, seen)
        _all_names(e.b, acc, seen)
    elif isinstance(e, Neg):
        _all_names(e.arg, acc, seen)
    elif isinstance(e, Pow):
        _all_names(e.base, acc, seen)
    elif isinstance(e, (Call, BumpDeriv)):
        _all_names(e.arg, acc, seen)
    return acc


def _subst(e, mapping, memo):
    if not (mapping.keys() & e.free):
        return e
    out = memo.get(id(e))
    if out is not None:
        return out
    if isinstance(e, Sym):
        out = mapping.get(e.name, e)
    elif isinstance(e, Add):
        out = Add(tuple(_subst(t, mapping, memo) for t in e.terms))
    elif isinstance(e, Mul):
        out = Mul(tuple(_subst(f, mapping, memo) for f in e.factors))
    elif isinstance(e, Sub):
        out = Sub(_subst(e.a, mapping, memo), _subst(e.b, mapping, memo))
    elif isinstance(e, Div):
        out = Div(_subst(e.a, mapping, memo), _subst(e.b, mapping, memo))
    elif isinstance(e, Neg):
        out = Neg(_subst(e.arg, mapping, memo))
    elif isinstance(e, Pow):
        out = Pow(_subst(e.base, mapping, memo), e.exponent)
    elif isinstance(e, Call):
        out = Call(e.fn, _subst(e.arg, mapping, memo))
    elif isinstance(e, BumpDeriv):
        out = BumpDeriv(e.order, _subst(e.arg, mapping, memo))
    elif isinstance(e, TIntegral):
        var, body = e.var, e.body
        live = {k: v for k, v in mapping.items() if k in e.free}
        if any(var in v.free for v in live.values()):
            taken = _all_names(body, set(), set())
            for v in live.values():
                _all_names(v, taken, set())
            k = 2
            while f"t{k}" in taken:
                k += 1
            fresh = f"t{k}"
            body = _subst(body, {var: Sym(fresh)}, {})
            var = fresh
        out = TIntegral(var, _subst(body, live, {}))
    else:
        raise TypeError(f"cannot substitute into {type(e).__name__}")
    memo[id(e)] = out
    return out


def subst(e, mapping):
    """Simultaneous substitution of symbols by expressions.

    Bound integration variables are renamed when a replacement would be
    captured, so substituting t-containing expressions into bodies that
    already hold integrals is safe. Shared subtrees are substituted once.
    """
    live = {k: v for k, v in mapping.items() if k in e.free}
    if not live:
        return e
    memo = {"root": e}  # keep the root referenced so ids stay valid
    return _subst(e, live, memo)


def subst_values(e, point):
    """Substitute numeric values (a partial point) into an expression."""
    return subst(e, {k: Num(v) for k, v in point.items()})


# ---------------------------------------------------------------------------
# differentiation
# ---------------------------------------------------------------------------


def _diff(e, name, memo):
    if name not in e.free:
        return _ZERO
    out = memo.get(id(e))
    if out is not None:
        return out
    if isinstance(e, Sym):
        out = _ONE
    elif isinstance(e, Add):
        out = Add(tuple(_diff(t, name, memo) for t in e.terms))
    elif isinstance(e, Sub):
        out = Sub(_diff(e.a, name, memo), _diff(e.b, name, memo))
    elif isinstance(e, Neg):
        out = Neg(_diff(e.arg, name, memo))
    elif isinstance(e, Mul):
        terms = []
        for i, fnode in enumerate(e.factors):
            if name not in fnode.free:
                continue
            parts = list(e.factors)
            parts[i] = _diff(fnode, name, memo)
            terms.append(Mul(tuple(parts)))
        out = terms[0] if len(terms) == 1 else Add(tuple(terms))
    elif isinstance(e, Div):
        da, db = _diff(e.a, name, memo), _diff(e.b, name, memo)
        out = Div(Sub(Mul((da, e.b)), Mul((e.a, db))), Pow(e.b, 2))
    elif isinstance(e, Pow):
        out = Mul(
            (Num(e.exponent), Pow(e.base, e.exponent - 1), _diff(e.base, name, memo))
        )
    elif isinstance(e, Call):
        u = e.arg
        du = _diff(u, name, memo)
        if e.fn == "exp":
            out = Mul((Call("exp", u), du))
        elif e.fn == "log":
            out = Div(du, u)
        elif e.fn == "sin":
            out = Mul((Call("cos", u), du))
        elif e.fn == "cos":
            out = Neg(Mul((Call("sin", u), du)))
        elif e.fn == "tan":
            out = Mul((Add((_ONE, Pow(Call("tan", u), 2))), du))
        elif e.fn == "atan":
            out = Div(du, Add((_ONE, Pow(u, 2))))
        elif e.fn == "sqrt":
            out = Div(du, Mul((Num(2.0), Call("sqrt", u))))
        elif e.fn == "bump":
            out = Mul((BumpDeriv(1, u), du))
        else:  # step
            raise StepDerivativeError(
                f"cannot differentiate step(...) with respect to {name}"
            )
    elif isinstance(e, BumpDeriv):
        out = Mul((BumpDeriv(e.order + 1, e.arg), _diff(e.arg, name, memo)))
    elif isinstance(e, TIntegral):
        # name != e.var since e.var is not free; bounds are constant
        out = TIntegral(e.var, _diff(e.body, name, memo))
    else:
        raise TypeError(f"cannot differentiate {type(e).__name__}")
    memo[id(e)] = out
    return out


def diff(e, name):
    return _diff(e, name, {"root": e})


# rational prefactors R_n with bump^(n) = R_n(s) * bump(s) on |s| < 1
_BUMP_SYM = Sym("s@")
_BUMP_RATIOS = {0: _ONE}


def _bump_ratio(order):
    ratio = _BUMP_RATIOS.get(order)
    if ratio is None:
        prev = _bump_ratio(order - 1)
        inner = Div(
            Mul((Num(-2.0), _BUMP_SYM)), Pow(Sub(_ONE, Pow(_BUMP_SYM, 2)), 2)
        )
        ratio = normalize(Add((diff(prev, "s@"), Mul((prev, inner)))))
        _BUMP_RATIOS[order] = ratio
    return ratio


# ---------------------------------------------------------------------------
# evaluation
# ---------------------------------------------------------------------------


def _bump_values(s):
    if np.ndim(s) == 0:
        s = float(s)
        return math.exp(-1.0 / (1.0 - s * s)) if abs(s) < 1.0 else 0.0
    out = np.zeros(s.shape, dtype=float)
    mask = np.abs(s) < 1.0
    sm = s[mask]
    out[mask] = np.exp(-1.0 / (1.0 - sm * sm))
    return out


def _bump_deriv_values(order, s):
    ratio = _bump_ratio(order)
    if np.ndim(s) == 0:
        s = float(s)
        if abs(s) >= 1.0:
            return 0.0
        return _eval(ratio, {"s@": s}, {}) * math.exp(-1.0 / (1.0 - s * s))
    out = np.zeros(s.shape, dtype=float)
    mask = np.abs(s) < 1.0
    sm = s[mask]
    out[mask] = _eval(ratio, {"s@": sm}, {}) * np.exp(-1.0 / (1.0 - sm * sm))
    return out


def _broadcast_shape(env):
    shapes = [np.shape(v) for v in env.values() if np.ndim(v) > 0]
    if not shapes:
        return ()
    return np.broadcast_shapes(*shapes)


def _eval_compressed(e, env, keep):
    """Evaluate only where ``keep`` holds; zeros elsewhere."""
    shape = keep.shape
    flat = keep.reshape(-1)
    idx = np.nonzero(flat)[0]
    env2 = {}
    for k, v in env.items():
        if np.ndim(v) > 0:
            env2[k] = np.broadcast_to(v, shape).reshape(-1)[idx]
        else:
            env2[k] = v
    vals = _eval(e, env2, {})
    out = np.zeros(flat.shape, dtype=float)
    out[idx] = vals
    return out.reshape(shape)


def _eval_mul(e, env, memo):
    # Factors that vanish exactly (bumps and their derivatives) come first in
    # canonical order; evaluate expensive integral factors only where the
    # running product is nonzero. Partition-weighted sums rely on this: the
    # weighted term may be undefined outside the weight's support.
    acc = 1.0
    pending = list(e.factors)
    while pending:
        f = pending[0]
        if f.has_quad and np.ndim(acc) > 0 and not np.all(acc != 0.0):
            rest = pending[0] if len(pending) == 1 else Mul(tuple(pending))
            rel = [
                np.shape(env[k])
                for k in rest.free
                if k in env and np.ndim(env[k]) > 0
            ]
            shape = np.broadcast_shapes(np.shape(acc), *rel)
            mask = np.broadcast_to(acc != 0.0, shape)
            if not mask.any():
                return np.zeros(shape, dtype=float)
            return np.broadcast_to(acc, shape) * _eval_compressed(rest, env, mask)
        if f.has_quad and np.ndim(acc) == 0 and acc == 0.0:
            return 0.0
        pending.pop(0)
        acc = acc * _eval(f, env, memo)
    return acc


def _eval(e, env, memo):
    if isinstance(e, Num):
        return e.value
    if isinstance(e, Sym):
        try:
            return env[e.name]
        except KeyError:
            raise EvaluationError(f"symbol {e.name!r} has no assigned value") from None
    out = memo.get(id(e))
    if out is not None:
        return out
    if isinstance(e, Add):
        acc = 0.0
        for tnode in e.terms:
            acc = acc + _eval(tnode, env, memo)
        out = acc
    elif isinstance(e, Sub):
        out = _eval(e.a, env, memo) - _eval(e.b, env, memo)
    elif isinstance(e, Neg):
        out = -_eval(e.arg, env, memo)
    elif isinstance(e, Mul):
        out = _eval_mul(e, env, memo)
    elif isinstance(e, Div):
        num = _eval(e.a, env, memo)
        den = _eval(e.b, env, memo)
        if np.any(den == 0.0):
            raise EvaluationError("division by zero")
        out = num / den
    elif isinstance(e, Pow):
        base = _eval(e.base, env, memo)
        if e.exponent < 0 and np.any(base == 0.0):
            raise EvaluationError("zero base with negative exponent")
        out = base**e.exponent
    elif isinstance(e, Call):
        a = _eval(e.arg, env, memo)
        fn = e.fn
        if fn == "exp":
            out = np.exp(a)
        elif fn == "log":
            if np.any(a <= 0.0):
                raise EvaluationError("log of non-positive value")
            out = np.log(a)
        elif fn == "sin":
            out = np.sin(a)
        elif fn == "cos":
            out = np.cos(a)
        elif fn == "tan":
            out = np.tan(a)
        elif fn == "atan":
            out = np.arctan(a)
        elif fn == "sqrt":
            if np.any(a < 0.0):
                raise EvaluationError("sqrt of negative value")
            out = np.sqrt(a)
        elif fn == "bump":
            out = _bump_values(a)
        else:  # step
            if np.ndim(a) == 0:
                out = 0.0 if a < 0.0 else 1.0
            else:
                out = np.where(a < 0.0, 0.0, 1.0)
    elif isinstance(e, BumpDeriv):
        out = _bump_deriv_values(e.order, _eval(e.arg, env, memo))
    elif isinstance(e, TIntegral):
        coeffs = e.poly_coefficients()
        if coeffs is not None:
            acc = 0.0
            for i, c in enumerate(coeffs):
                acc = acc + _eval(c, env, memo) / (i + 1.0)
            out = acc
        else:
            shape = _broadcast_shape(
                {k: v for k, v in env.items() if k in e.free}
            )
            var, body = e.var, e.body

            def f(tvals):
                tcol = tvals.reshape((len(tvals),) + (1,) * len(shape))
                sub_env = dict(env)
                sub_env[var] = tcol
                vals = _eval(body, sub_env, {})
                return np.broadcast_to(vals, (len(tvals),) + shape)

            out = integrate_01(f)
    else:
        raise TypeError(f"cannot evaluate {type(e).__name__}")
    memo[id(e)] = out
    return out


def evaluate(e, point):
    """Evaluate at a point: mapping from symbol names to floats or arrays."""
    env = {}
    for k, v in point.items():
        env[k] = np.asarray(v, dtype=float) if np.ndim(v) > 0 else float(v)
    out = _eval(e, env, {})
    if not np.all(np.isfinite(out)):
        raise EvaluationError("evaluation produced a non-finite value")
    if np.ndim(out) == 0:
        return float(out)
    return out


def evaluate_many(exprs, point):
    """Evaluate several expressions at one point, sharing subtree work."""
    env = {}
    for k, v in point.items():
        env[k] = np.asarray(v, dtype=float) if np.ndim(v) > 0 else float(v)
    memo = {}
    out = []
    for e in exprs:
        value = _eval(e, env, memo)
        if not np.all(np.isfinite(value)):
            raise EvaluationError("evaluation produced a non-finite value")
        out.append(float(value) if np.ndim(value) == 0 else value)
    return out


# ---------------------------------------------------------------------------
# polynomial structure in the integration variable
# ---------------------------------------------------------------------------


def _eadd(a, b):
    if isinstance(a, Num) and a.value == 0.0:
        return b
    if isinstance(b, Num) and b.value == 0.0:
        return a
    if isinstance(a, Num) and isinstance(b, Num):
        return Num(a.value + b.value)
    return Add((a, b))


def _emul(a, b):
    if isinstance(a, Num):
        if a.value == 0.0:
            return _ZERO
        if a.value == 1.0:
            return b
        if isinstance(b, Num):
            return Num(a.value * b.value)
    if isinstance(b, Num):
        if b.value == 0.0:
            return _ZERO
        if b.value == 1.0:
            return a
    return Mul((a, b))


def _poly_add(p, q):
    out = [_ZERO] * max(len(p), len(q))
    for i, c in enumerate(p):
        out[i] = _eadd(out[i], c)
    for i, c in enumerate(q):
        out[i] = _eadd(out[i], c)
    return out


def _poly_mul(p, q):
    out = [_ZERO] * (len(p) + len(q) - 1)
    for i, a in enumerate(p):
        if isinstance(a, Num) and a.value == 0.0:
            continue
        for j, b in enumerate(q):
            out[i + j] = _eadd(out[i + j], _emul(a, b))
    return out


def t_poly(e, var=T):
    """Coefficient list of e as a polynomial in ``var``, or None."""
    if var not in e.free:
        return [e]
    if isinstance(e, Sym):
        return [_ZERO, _ONE]
    if isinstance(e, Add):
        out = [_ZERO]
        for tnode in e.terms:
            p = t_poly(tnode, var)
            if p is None:
                return None
            out = _poly_add(out, p)
        return out
    if isinstance(e, Sub):
        pa, pb = t_poly(e.a, var), t_poly(e.b, var)
        if pa is None or pb is None:
            return None
        return _poly_add(pa, [_emul(Num(-1.0), c) for c in pb])
    if isinstance(e, Neg):
        p = t_poly(e.arg, var)
        if p is None:
            return None
        return [_emul(Num(-1.0), c) for c in p]
    if isinstance(e, Mul):
        out = [_ONE]
        for fnode in e.factors:
            p = t_poly(fnode, var)
            if p is None:
                return None
            out = _poly_mul(out, p)
        return out
    if isinstance(e, Div):
        if var in e.b.free:
            return None
        p = t_poly(e.a, var)
        if p is None:
            return None
        return [
            Div(c, e.b) if not (isinstance(c, Num) and c.value == 0.0) else c
            for c in p
        ]
    if isinstance(e, Pow):
        if e.exponent < 0:
            return None
        p = t_poly(e.base, var)
        if p is None or e.exponent > 64:
            return None
        out = [_ONE]
        for _ in range(e.exponent):
            out = _poly_mul(out, p)
        return out
    return None  # Call, BumpDeriv with var in arg; other nodes are var-free


def integrate_t(e, var=T):
    """Definite integral over var in [0, 1].

    Exact antidifference when the body is polynomial in var; otherwise the
    integral is kept as a node and resolved by quadrature at evaluation.
    """
    coeffs = t_poly(e, var)
    if coeffs is not None:
        acc = _ZERO
        for i, c in enumerate(coeffs):
            acc = _eadd(acc, _emul(c, Num(1.0 / (i + 1.0))))
        return normalize(acc)
    return TIntegral(var, e)


# ---------------------------------------------------------------------------
# canonical normalization
# ---------------------------------------------------------------------------


def _split_term(term):
    """term -> (coefficient, core) with core None for pure numbers."""
    if isinstance(term, Num):
        return term.value, None
    if isinstance(term, Mul) and isinstance(term.factors[0], Num):
        rest = term.factors[1:]
        core = rest[0] if len(rest) == 1 else Mul(rest)
        return term.factors[0].value, core
    return 1.0, term


def _rebuild_term(coeff, core):
    if core is None:
        return Num(coeff)
    if coeff == 1.0:
        return core
    if isinstance(core, Mul):
        return Mul((Num(coeff),) + core.factors)
    return Mul((Num(coeff), core))


def _norm_add(terms):
    flat = []
    for tnode in terms:
        if isinstance(tnode, Add):
            flat.extend(tnode.terms)
        else:
            flat.append(tnode)
    flat.sort(key=lambda tn: tn.sort_key)
    constant = 0.0
    groups = {}
    for tnode in flat:
        coeff, core = _split_term(tnode)
        if core is None:
            constant += coeff
        elif core in groups:
            groups[core] += coeff
        else:
            groups[core] = coeff
    out = []
    if constant != 0.0:
        out.append(Num(constant))
    for core in sorted(groups, key=lambda c: c.sort_key):
        coeff = groups[core]
        if coeff != 0.0:
            out.append(_rebuild_term(coeff, core))
    if not out:
        return _ZERO
    if len(out) == 1:
        return out[0]
    return Add(tuple(out))


def _norm_mul(factors):
    flat = []
    for fnode in factors:
        if isinstance(fnode, Mul):
            flat.extend(fnode.factors)
        else:
            flat.append(fnode)
    constant = 1.0
    powers = {}
    order = []
    for fnode in flat:
        if isinstance(fnode, Num):
            constant *= fnode.value
            continue
        if isinstance(fnode, Pow):
            base, exp = fnode.base, fnode.exponent
        else:
            base, exp = fnode, 1
        if base in powers:
            powers[base] += exp
        else:
            powers[base] = exp
            order.append(base)
    if constant == 0.0:
        return _ZERO
    built = []
    for base in order:
        exp = powers[base]
        if exp == 0:
            continue
        built.append(base if exp == 1 else _norm_pow(base, exp))
    built.sort(key=lambda fn: fn.sort_key)
    if not built:
        return Num(constant)
    adds = [f for f in built if isinstance(f, Add)]
    if len(adds) == 1:
        # distribute over a single sum factor: linear growth, and exactly
        # what alternating-sum cancellations need. Products of two or more
        # sums stay unexpanded (equality falls back to evaluation).
        add = adds[0]
        if len(built) == 1 and constant == 1.0:
            return add
        others = [f for f in built if f is not add]
        return _norm_add(
            [_norm_mul([Num(constant), term, *others]) for term in add.terms]
        )
    if constant != 1.0:
        built = [Num(constant)] + built
    if len(built) == 1:
        return built[0]
    return Mul(tuple(built))


def _norm_pow(base, exponent):
    if exponent == 0:
        return _ONE
    if exponent == 1:
        return base
    if isinstance(base, Num):
        if base.value != 0.0 or exponent > 0:
            try:
                return Num(base.value**exponent)
            except OverflowError:
                pass
        return Pow(base, exponent)
    if isinstance(base, Mul):
        return _norm_mul([_norm_pow(f, exponent) for f in base.factors])
    if isinstance(base, Pow):
        return _norm_pow(base.base, base.exponent * exponent)
    return Pow(base, exponent)


def _fold_call(fn, value):
    if fn == "exp":
        return math.exp(value)
    if fn == "log":
        if value <= 0.0:
            raise EvaluationError("log of non-positive value")
        return math.log(value)
    if fn == "sin":
        return math.sin(value)
    if fn == "cos":
        return math.cos(value)
    if fn == "tan":
        return math.tan(value)
    if fn == "atan":
        return math.atan(value)
    if fn == "sqrt":
        if value < 0.0:
            raise EvaluationError("sqrt of negative value")
        return math.sqrt(value)
    if fn == "bump":
        return _bump_values(value)
    if fn == "step":
        return 0.0 if value < 0.0 else 1.0
    raise ValueError(fn)  # pragma: no cover


def _negate(e):
    return _norm_mul([Num(-1.0), e])


def _normalize(e, memo):
    if isinstance(e, (Num, Sym)):
        return e
    out = memo.get(id(e))
    if out is not None:
        return out
    if isinstance(e, Add):
        out = _norm_add([_normalize(t, memo) for t in e.terms])
    elif isinstance(e, Sub):
        out = _norm_add([_normalize(e.a, memo), _negate(_normalize(e.b, memo))])
    elif isinstance(e, Neg):
        out = _negate(_normalize(e.arg, memo))
    elif isinstance(e, Mul):
        out = _norm_mul([_normalize(f, memo) for f in e.factors])
    elif isinstance(e, Div):
        out = _norm_mul(
            [_normalize(e.a, memo), _norm_pow(_normalize(e.b, memo), -1)]
        )
    elif isinstance(e, Pow):
        out = _norm_pow(_normalize(e.base, memo), e.exponent)
    elif isinstance(e, Call):
        arg = _normalize(e.arg, memo)
        out = None
        if isinstance(arg, Num):
            try:
                out = Num(_fold_call(e.fn, arg.value))
            except (EvaluationError, OverflowError):
                out = None
        if out is None:
            out = Call(e.fn, arg)
    elif isinstance(e, BumpDeriv):
        arg = _normalize(e.arg, memo)
        if isinstance(arg, Num):
            out = Num(_bump_deriv_values(e.order, arg.value))
        else:
            out = BumpDeriv(e.order, arg)
    elif isinstance(e, TIntegral):
        body = _normalize(e.body, memo)
        if e.var not in body.free:
            out = body
        else:
            out = TIntegral(e.var, body)
    else:
        raise TypeError(f"cannot normalize {type(e).__name__}")
    memo[id(e)] = out
    return out


def normalize(e):
    """Canonical form: sums/products flattened and sorted, constants folded,
    like terms collected, scalars and single atoms distributed over sums.
    Enough for equality testing by compare-plus-eval; not a simplifier."""
    return _normalize(e, {"root": e})


def is_zero(e):
    e = normalize(e)
    return isinstance(e, Num) and e.value == 0.0


def contains_call(e, fn):
    """True when a Call node with the given function name occurs anywhere."""
    stack = [e]
    seen = set()
    while stack:
        node = stack.pop()
        if id(node) in seen:
            continue
        seen.add(id(node))
        if isinstance(node, Call):
            if node.fn == fn:
                return True
            stack.append(node.arg)
        elif isinstance(node, Add):
            stack.extend(node.terms)
        elif isinstance(node, Mul):
            stack.extend(node.factors)
        elif isinstance(node, (Sub, Div)):
            stack.append(node.a)
            stack.append(node.b)
        elif isinstance(node, Neg):
            stack.append(node.arg)
        elif isinstance(node, Pow):
            stack.append(node.base)
        elif isinstance(node, BumpDeriv):
            stack.append(node.arg)
        elif isinstance(node, TIntegral):
            stack.append(node.body)
    return False


def equivalent(a, b, rng=None, samples=40, tol=1e-10, box=(-1.0, 1.0)):
    """Symbolic-first equality: normalize-and-compare, then random points."""
    delta = normalize(Sub(a, b))
    if isinstance(delta, Num):
        return abs(delta.value) <= tol
    if rng is None:
        rng = np.random.default_rng(0)
    names = sorted(delta.free)
    lo, hi = box
    checked = 0
    attempts = 0
    while checked < samples:
        attempts += 1
        if attempts > 20 * samples:
            raise EvaluationError(
                "could not find enough admissible random points for comparison"
            )
        point = {n: float(rng.uniform(lo, hi)) for n in names}
        try:
            val = evaluate(delta, point)
        except EvaluationError:
            continue
        if abs(val) > tol:
            return False
        checked += 1
    return True
