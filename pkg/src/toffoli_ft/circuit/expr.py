"""Classical condition expressions over measurement bits.

Grammar (whitespace ignored)::

    expr  := NAME | "0" | "1" | OP "(" expr ("," expr)* ")"
    OP    := "xor" | "and" | "or" | "not" | "maj"
    NAME  := [A-Za-z_][A-Za-z0-9_.]*

Unwritten bits evaluate to 0.
"""

from __future__ import annotations

import re
from collections.abc import Iterator, Mapping
from dataclasses import dataclass

_OPS = ("xor", "and", "or", "not", "maj")
_TOKEN = re.compile(r"\s*(?:([A-Za-z_][A-Za-z0-9_.]*)|([01])|([(),]))")


class ExprSyntaxError(ValueError):
    pass


@dataclass(frozen=True)
class Expr:
    """A node of a classical boolean expression.

    ``op`` is ``"bit"`` (``name`` set), ``"const"`` (``value`` set) or one of
    the n-ary operators with ``args``.
    """

    op: str
    args: tuple[Expr, ...] = ()
    name: str | None = None
    value: int = 0

    def evaluate(self, bits: Mapping[str, int]) -> int:
        if self.op == "bit":
            return bits.get(self.name, 0) & 1
        if self.op == "const":
            return self.value
        vals = [a.evaluate(bits) for a in self.args]
        if self.op == "xor":
            out = 0
            for v in vals:
                out ^= v
            return out
        if self.op == "and":
            return int(all(vals))
        if self.op == "or":
            return int(any(vals))
        if self.op == "not":
            return 1 - vals[0]
        if self.op == "maj":
            return int(2 * sum(vals) > len(vals))
        raise ValueError(f"unknown operator {self.op!r}")

    def bits(self) -> set[str]:
        if self.op == "bit":
            return {self.name}
        out: set[str] = set()
        for a in self.args:
            out |= a.bits()
        return out

    def __str__(self) -> str:
        if self.op == "bit":
            return self.name
        if self.op == "const":
            return str(self.value)
        return f"{self.op}({','.join(str(a) for a in self.args)})"


def bit(name: str) -> Expr:
    return Expr("bit", name=name)


def const(value: int) -> Expr:
    return Expr("const", value=int(value) & 1)


def _nary(op: str, args) -> Expr:
    args = tuple(bit(a) if isinstance(a, str) else a for a in args)
    if not args:
        raise ValueError(f"{op}() needs at least one argument")
    return Expr(op, args)


def xor(*args) -> Expr:
    return _nary("xor", args)


def and_(*args) -> Expr:
    return _nary("and", args)


def or_(*args) -> Expr:
    return _nary("or", args)


def not_(arg) -> Expr:
    return _nary("not", (arg,))


def maj(*args) -> Expr:
    return _nary("maj", args)


def _tokens(text: str) -> Iterator[str]:
    pos = 0
    text = text.rstrip()
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if not m or m.end() == pos:
            raise ExprSyntaxError(f"unexpected character at {pos} in {text!r}")
        yield m.group(1) or m.group(2) or m.group(3)
        pos = m.end()


def parse_expr(text: str) -> Expr:
    toks = list(_tokens(text))
    pos = 0

    def parse() -> Expr:
        nonlocal pos
        if pos >= len(toks):
            raise ExprSyntaxError(f"unexpected end of expression {text!r}")
        tok = toks[pos]
        pos += 1
        if tok in ("0", "1"):
            return const(int(tok))
        if tok in _OPS and pos < len(toks) and toks[pos] == "(":
            pos += 1
            args = [parse()]
            while pos < len(toks) and toks[pos] == ",":
                pos += 1
                args.append(parse())
            if pos >= len(toks) or toks[pos] != ")":
                raise ExprSyntaxError(f"missing ')' in {text!r}")
            pos += 1
            if tok == "not" and len(args) != 1:
                raise ExprSyntaxError("not() takes one argument")
            return Expr(tok, tuple(args))
        if tok in "(),":
            raise ExprSyntaxError(f"unexpected {tok!r} in {text!r}")
        return bit(tok)

    out = parse()
    if pos != len(toks):
        raise ExprSyntaxError(f"trailing tokens in {text!r}")
    return out
