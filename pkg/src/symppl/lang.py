"""Surface language: AST, patterns, and program representation.

Programs are first-order: a sequence of top-level function declarations
followed by a main expression.  ``fold`` is the only iteration construct
and functions may not recurse.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field


class Annotation(enum.Enum):
    NONE = "none"
    SYMBOLIC = "symbolic"
    SAMPLE = "sample"

    def __str__(self) -> str:
        return "" if self is Annotation.NONE else self.value


# Distribution constructors and their arities.
DIST_ARITIES = {
    "gaussian": 2,
    "invgamma": 2,
    "beta": 2,
    "bernoulli": 1,
    "student_t": 3,
    "delta": 1,
}

# Built-in operators (besides infix arithmetic/comparison) and arities.
BUILTIN_ARITIES = {
    "hd": 1,
    "tl": 1,
    "rev": 1,
    "len": 1,
    "cons": 2,
    "map": 2,
    "range": 2,
    "not": 1,
}


class Expr:
    __slots__ = ()


@dataclass(frozen=True, slots=True)
class EConst(Expr):
    value: float | bool | None  # None is unit


@dataclass(frozen=True, slots=True)
class EVal(Expr):
    """Runtime-substituted value leaf; never produced by the parser."""

    v: object


@dataclass(frozen=True, slots=True)
class EVar(Expr):
    name: str


@dataclass(frozen=True, slots=True)
class ETuple(Expr):
    items: tuple[Expr, ...]


@dataclass(frozen=True, slots=True)
class EList(Expr):
    items: tuple[Expr, ...]


@dataclass(frozen=True, slots=True)
class EOp(Expr):
    """Built-in operator application: arithmetic, comparisons, list ops."""

    op: str
    args: tuple[Expr, ...]


@dataclass(frozen=True, slots=True)
class ECall(Expr):
    """Application of a declared top-level function."""

    func: str
    arg: Expr


@dataclass(frozen=True, slots=True)
class EIf(Expr):
    cond: Expr
    then: Expr
    orelse: Expr


@dataclass(frozen=True, slots=True)
class ELet(Expr):
    pat: "Pattern"
    bound: Expr
    body: Expr


@dataclass(frozen=True, slots=True)
class ELetRV(Expr):
    annotation: Annotation
    name: str
    dist: str
    args: tuple[Expr, ...]
    body: Expr
    site: int = field(default=-1, compare=False)  # source order of the declaration


@dataclass(frozen=True, slots=True)
class EObserve(Expr):
    dist: str
    args: tuple[Expr, ...]
    value: Expr


@dataclass(frozen=True, slots=True)
class EResample(Expr):
    site: int = field(default=-1, compare=False)


@dataclass(frozen=True, slots=True)
class EFold(Expr):
    func: str
    lst: Expr
    init: Expr


class Pattern:
    __slots__ = ()


@dataclass(frozen=True, slots=True)
class PVar(Pattern):
    name: str


@dataclass(frozen=True, slots=True)
class PWild(Pattern):
    pass


@dataclass(frozen=True, slots=True)
class PUnit(Pattern):
    pass


@dataclass(frozen=True, slots=True)
class PTuple(Pattern):
    items: tuple[Pattern, ...]


@dataclass(frozen=True, slots=True)
class FunDecl:
    name: str
    param: Pattern
    body: Expr


@dataclass(frozen=True, slots=True)
class Program:
    functions: tuple[FunDecl, ...]
    main: Expr

    def function(self, name: str) -> FunDecl:
        for f in self.functions:
            if f.name == name:
                return f
        raise KeyError(name)


def pattern_vars(p: Pattern) -> list[str]:
    match p:
        case PVar(name):
            return [name]
        case PTuple(items):
            out: list[str] = []
            for q in items:
                out.extend(pattern_vars(q))
            return out
        case _:
            return []


def walk(e: Expr):
    """Pre-order traversal of an expression."""
    yield e
    match e:
        case ETuple(items) | EList(items) | EOp(_, items):
            for x in items:
                yield from walk(x)
        case ECall(_, arg):
            yield from walk(arg)
        case EIf(c, t, o):
            yield from walk(c)
            yield from walk(t)
            yield from walk(o)
        case ELet(_, b, body):
            yield from walk(b)
            yield from walk(body)
        case ELetRV(_, _, _, args, body):
            for x in args:
                yield from walk(x)
            yield from walk(body)
        case EObserve(_, args, v):
            for x in args:
                yield from walk(x)
            yield from walk(v)
        case EFold(_, lst, init):
            yield from walk(lst)
            yield from walk(init)
        case _:
            pass
