"""Runtime symbolic values, distributions, and the per-particle state.

Values double as symbolic expressions over random variables.  Smart
constructors fold constants and drop arithmetic identities so stored
expressions stay small; ``eval_value`` additionally substitutes realized
random variables.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .lang import Annotation


class EvalError(Exception):
    pass


class Val:
    __slots__ = ()


@dataclass(frozen=True, slots=True)
class VConst(Val):
    v: float | bool | None


@dataclass(frozen=True, slots=True)
class VRV(Val):
    rid: int


@dataclass(frozen=True, slots=True)
class VAdd(Val):
    left: Val
    right: Val


@dataclass(frozen=True, slots=True)
class VSub(Val):
    left: Val
    right: Val


@dataclass(frozen=True, slots=True)
class VMul(Val):
    left: Val
    right: Val


@dataclass(frozen=True, slots=True)
class VDiv(Val):
    left: Val
    right: Val


@dataclass(frozen=True, slots=True)
class VIte(Val):
    cond: Val
    then: Val
    orelse: Val


@dataclass(frozen=True, slots=True)
class VCmp(Val):
    op: str  # "=", "!=", "<", "<="
    left: Val
    right: Val


@dataclass(frozen=True, slots=True)
class VTup(Val):
    items: tuple[Val, ...]


@dataclass(frozen=True, slots=True)
class VLst(Val):
    items: tuple[Val, ...]


UNIT = VConst(None)
TRUE = VConst(True)
FALSE = VConst(False)


def const(v: float | bool | None) -> VConst:
    return VConst(v)


def is_const(v: Val) -> bool:
    return isinstance(v, VConst)


# Hash-consing: the smart constructors intern their results so structurally
# equal subgraphs share identity.  Position-lookup towers built over a
# handful of coin flips then stay polynomial (equal branches unify), and
# identity checks double as structural equality for interned nodes.
_INTERN: dict = {}
_INTERN_LIMIT = 1_000_000


def reset_intern() -> None:
    """Drop the hash-consing table (safe: interning is an optimization)."""
    _INTERN.clear()


def _canon(v: Val) -> Val:
    if isinstance(v, VConst):
        return _intern((VConst, type(v.v).__name__, v.v), v)
    if isinstance(v, VRV):
        return _intern((VRV, v.rid), v)
    return v


def _intern(key, node):
    hit = _INTERN.get(key)
    if hit is not None:
        return hit
    if len(_INTERN) > _INTERN_LIMIT:
        _INTERN.clear()
    _INTERN[key] = node
    return node


def _node2(cls, l: Val, r: Val) -> Val:
    l, r = _canon(l), _canon(r)
    return _intern((cls, id(l), id(r)), cls(l, r))


def _node_cmp(op: str, l: Val, r: Val) -> Val:
    l, r = _canon(l), _canon(r)
    return _intern((VCmp, op, id(l), id(r)), VCmp(op, l, r))


def _node_ite(c: Val, t: Val, o: Val) -> Val:
    c, t, o = _canon(c), _canon(t), _canon(o)
    return _intern((VIte, id(c), id(t), id(o)), VIte(c, t, o))


def _push_ite(make, l: Val, r: Val) -> Val | None:
    """Distribute a strict scalar operation into conditional branches.

    Applied when one operand is a constant or both share the same guard
    node; keeps position-lookup towers (nested selects over constants)
    foldable instead of opaque.
    """
    if isinstance(l, VIte) and isinstance(r, VIte) and l.cond is r.cond:
        return ite(l.cond, make(l.then, r.then), make(l.orelse, r.orelse))
    if isinstance(l, VIte) and isinstance(r, VConst):
        return ite(l.cond, make(l.then, r), make(l.orelse, r))
    if isinstance(r, VIte) and isinstance(l, VConst):
        return ite(r.cond, make(l, r.then), make(l, r.orelse))
    return None


def add(l: Val, r: Val) -> Val:
    if isinstance(l, VConst) and isinstance(r, VConst):
        return VConst(l.v + r.v)
    if isinstance(l, VConst) and l.v == 0:
        return r
    if isinstance(r, VConst) and r.v == 0:
        return l
    pushed = _push_ite(add, l, r)
    return pushed if pushed is not None else _node2(VAdd, l, r)


def sub(l: Val, r: Val) -> Val:
    if isinstance(l, VConst) and isinstance(r, VConst):
        return VConst(l.v - r.v)
    if isinstance(r, VConst) and r.v == 0:
        return l
    pushed = _push_ite(sub, l, r)
    return pushed if pushed is not None else _node2(VSub, l, r)


def mul(l: Val, r: Val) -> Val:
    if isinstance(l, VConst) and isinstance(r, VConst):
        return VConst(l.v * r.v)
    if isinstance(l, VConst):
        if l.v == 1:
            return r
        if l.v == 0:
            return VConst(0.0)
    if isinstance(r, VConst):
        if r.v == 1:
            return l
        if r.v == 0:
            return VConst(0.0)
    pushed = _push_ite(mul, l, r)
    return pushed if pushed is not None else _node2(VMul, l, r)


def div(l: Val, r: Val) -> Val:
    if isinstance(r, VConst):
        if r.v == 0:
            raise EvalError("division by zero")
        if r.v == 1:
            return l
        if isinstance(l, VConst):
            return VConst(l.v / r.v)
    pushed = _push_ite(div, l, r)
    return pushed if pushed is not None else _node2(VDiv, l, r)


_CMP = {
    "=": lambda a, b: a == b,
    "!=": lambda a, b: a != b,
    "<": lambda a, b: a < b,
    "<=": lambda a, b: a <= b,
}


def cmp(op: str, l: Val, r: Val) -> Val:
    if isinstance(l, VConst) and isinstance(r, VConst):
        return VConst(_CMP[op](l.v, r.v))
    pushed = _push_ite(lambda a, b: cmp(op, a, b), l, r)
    return pushed if pushed is not None else _node_cmp(op, l, r)


def ite(c: Val, t: Val, o: Val) -> Val:
    if isinstance(c, VConst):
        return t if c.v else o
    if t is o:  # structural comparison would walk shared sub-DAGs
        return t
    if isinstance(c, VIte) and isinstance(t, VConst) and isinstance(o, VConst):
        return ite(c.cond, ite(c.then, t, o), ite(c.orelse, t, o))
    return _node_ite(c, t, o)


def free_rvs(v: Val) -> list[int]:
    """Random variables referenced by a value, in first-occurrence order.

    Values are routinely shared sub-DAGs (substitution reuses nodes), so
    traversal skips already-visited nodes by identity.
    """
    out: list[int] = []
    seen: set[int] = set()
    visited: set[int] = set()

    def go(x: Val) -> None:
        if id(x) in visited:
            return
        visited.add(id(x))
        match x:
            case VRV(rid):
                if rid not in seen:
                    seen.add(rid)
                    out.append(rid)
            case VAdd(l, r) | VSub(l, r) | VMul(l, r) | VDiv(l, r):
                go(l)
                go(r)
            case VCmp(_, l, r):
                go(l)
                go(r)
            case VIte(c, t, o):
                go(c)
                go(t)
                go(o)
            case VTup(items) | VLst(items):
                for i in items:
                    go(i)
            case _:
                pass

    go(v)
    return out


def subst_rv(v: Val, rid: int, replacement: Val, _memo: dict | None = None) -> Val:
    if _memo is None:
        _memo = {}
    hit = _memo.get(id(v))
    if hit is not None:
        return hit
    match v:
        case VRV(r) if r == rid:
            out = replacement
        case VAdd(l, r):
            out = add(subst_rv(l, rid, replacement, _memo), subst_rv(r, rid, replacement, _memo))
        case VSub(l, r):
            out = sub(subst_rv(l, rid, replacement, _memo), subst_rv(r, rid, replacement, _memo))
        case VMul(l, r):
            out = mul(subst_rv(l, rid, replacement, _memo), subst_rv(r, rid, replacement, _memo))
        case VDiv(l, r):
            out = div(subst_rv(l, rid, replacement, _memo), subst_rv(r, rid, replacement, _memo))
        case VCmp(op, l, r):
            out = cmp(op, subst_rv(l, rid, replacement, _memo), subst_rv(r, rid, replacement, _memo))
        case VIte(c, t, o):
            out = ite(subst_rv(c, rid, replacement, _memo), subst_rv(t, rid, replacement, _memo),
                      subst_rv(o, rid, replacement, _memo))
        case VTup(items):
            out = VTup(tuple(subst_rv(i, rid, replacement, _memo) for i in items))
        case VLst(items):
            out = VLst(tuple(subst_rv(i, rid, replacement, _memo) for i in items))
        case _:
            out = v
    _memo[id(v)] = out
    return out


# --- distributions ---


class Distr:
    __slots__ = ()


@dataclass(frozen=True, slots=True)
class DNormal(Distr):
    mu: Val
    var: Val


@dataclass(frozen=True, slots=True)
class DBernoulli(Distr):
    p: Val


@dataclass(frozen=True, slots=True)
class DInvGamma(Distr):
    a: Val
    b: Val


@dataclass(frozen=True, slots=True)
class DBeta(Distr):
    a: Val
    b: Val


@dataclass(frozen=True, slots=True)
class DStudentT(Distr):
    loc: Val
    dof: Val
    scale: Val


@dataclass(frozen=True, slots=True)
class DDelta(Distr):
    e: Val


@dataclass(frozen=True, slots=True)
class DSampledDelta(Distr):
    v: float | bool


@dataclass(frozen=True, slots=True)
class DMixIte(Distr):
    """Conditional posterior: one of two distributions selected by a guard."""

    cond: Val
    then: Distr
    orelse: Distr


def distr_params(d: Distr) -> tuple[Val, ...]:
    match d:
        case DNormal(mu, var):
            return (mu, var)
        case DBernoulli(p):
            return (p,)
        case DInvGamma(a, b) | DBeta(a, b):
            return (a, b)
        case DStudentT(loc, dof, scale):
            return (loc, dof, scale)
        case DDelta(e):
            return (e,)
        case DSampledDelta(_):
            return ()
        case DMixIte(c, d1, d2):
            return (c,) + distr_params(d1) + distr_params(d2)
    raise TypeError(d)


def distr_rvs(d: Distr) -> list[int]:
    out: list[int] = []
    seen: set[int] = set()
    for p in distr_params(d):
        for rid in free_rvs(p):
            if rid not in seen:
                seen.add(rid)
                out.append(rid)
    return out


def make_dist(name: str, args: tuple[Val, ...]) -> Distr:
    match name:
        case "gaussian":
            return DNormal(args[0], args[1])
        case "bernoulli":
            return DBernoulli(args[0])
        case "invgamma":
            return DInvGamma(args[0], args[1])
        case "beta":
            return DBeta(args[0], args[1])
        case "student_t":
            return DStudentT(args[0], args[1], args[2])
        case "delta":
            return DDelta(args[0])
    raise ValueError(name)


# --- symbolic state ---


@dataclass(frozen=True, slots=True)
class Entry:
    ann: Annotation
    distr: Distr
    node: object | None = None  # backend-specific data


class SymState:
    """Finite map from random-variable ids to entries.

    Entries are immutable; the mapping itself is owned by one particle and
    mutated in place.  ``copy`` is a cheap shallow copy.
    """

    __slots__ = ("entries", "labels", "_next")

    def __init__(self) -> None:
        self.entries: dict[int, Entry] = {}
        self.labels: dict[int, str] = {}
        self._next = 0

    def copy(self) -> "SymState":
        g = SymState.__new__(SymState)
        g.entries = dict(self.entries)
        g.labels = self.labels  # labels only accrete; shared read-only is fine
        g._next = self._next
        return g

    def fresh(self, ann: Annotation, distr: Distr, node: object | None = None,
              label: str = "") -> int:
        for rid in distr_rvs(distr):
            if rid not in self.entries:
                raise EvalError(f"distribution references unknown variable {rid}")
        rid = self._next
        self._next += 1
        self.entries[rid] = Entry(ann, distr, node)
        if label:
            self.labels[rid] = f"{label}#{rid}"
        return rid

    def __contains__(self, rid: int) -> bool:
        return rid in self.entries

    def ann(self, rid: int) -> Annotation:
        return self.entries[rid].ann

    def distr(self, rid: int) -> Distr:
        return self.entries[rid].distr

    def node(self, rid: int):
        return self.entries[rid].node

    def set_distr(self, rid: int, d: Distr) -> None:
        e = self.entries[rid]
        self.entries[rid] = Entry(e.ann, d, e.node)

    def set_node(self, rid: int, node) -> None:
        e = self.entries[rid]
        self.entries[rid] = Entry(e.ann, e.distr, node)

    def realized_value(self, rid: int) -> Val | None:
        match self.entries[rid].distr:
            case DDelta(VConst() as c):
                return c
            case DSampledDelta(v):
                return VConst(v)
            case _:
                return None

    def is_realized(self, rid: int) -> bool:
        return self.realized_value(rid) is not None

    def parents(self, rid: int) -> list[int]:
        """Live random variables referenced by this entry's distribution."""
        d = self.eval_distr(self.entries[rid].distr)
        return [p for p in distr_rvs(d) if p != rid]

    # --- evaluation ---

    def eval_value(self, v: Val, _memo: dict | None = None) -> Val:
        if _memo is None:
            _memo = {}
        hit = _memo.get(id(v))
        if hit is not None:
            return hit
        match v:
            case VConst(_):
                out = v
            case VRV(rid):
                c = self.realized_value(rid)
                out = c if c is not None else v
            case VAdd(l, r):
                out = add(self.eval_value(l, _memo), self.eval_value(r, _memo))
            case VSub(l, r):
                out = sub(self.eval_value(l, _memo), self.eval_value(r, _memo))
            case VMul(l, r):
                out = mul(self.eval_value(l, _memo), self.eval_value(r, _memo))
            case VDiv(l, r):
                out = div(self.eval_value(l, _memo), self.eval_value(r, _memo))
            case VCmp(op, l, r):
                out = cmp(op, self.eval_value(l, _memo), self.eval_value(r, _memo))
            case VIte(c, t, o):
                out = ite(self.eval_value(c, _memo), self.eval_value(t, _memo),
                          self.eval_value(o, _memo))
            case VTup(items):
                out = VTup(tuple(self.eval_value(i, _memo) for i in items))
            case VLst(items):
                out = VLst(tuple(self.eval_value(i, _memo) for i in items))
            case _:
                raise TypeError(v)
        _memo[id(v)] = out
        return out

    def eval_distr(self, d: Distr) -> Distr:
        match d:
            case DNormal(mu, var):
                return DNormal(self.eval_value(mu), self.eval_value(var))
            case DBernoulli(p):
                return DBernoulli(self.eval_value(p))
            case DInvGamma(a, b):
                return DInvGamma(self.eval_value(a), self.eval_value(b))
            case DBeta(a, b):
                return DBeta(self.eval_value(a), self.eval_value(b))
            case DStudentT(loc, dof, scale):
                return DStudentT(self.eval_value(loc), self.eval_value(dof), self.eval_value(scale))
            case DDelta(e):
                return DDelta(self.eval_value(e))
            case DSampledDelta(_):
                return d
            case DMixIte(c, d1, d2):
                c = self.eval_value(c)
                if isinstance(c, VConst):
                    return self.eval_distr(d1) if c.v else self.eval_distr(d2)
                return DMixIte(c, self.eval_distr(d1), self.eval_distr(d2))
        raise TypeError(d)

    def refresh(self, rid: int) -> None:
        """Re-evaluate a stored distribution (delta substitution)."""
        self.set_distr(rid, self.eval_distr(self.entries[rid].distr))

    def check_acyclic(self) -> None:
        color: dict[int, int] = {}

        def visit(rid: int) -> None:
            state = color.get(rid, 0)
            if state == 1:
                raise EvalError(f"dependency cycle through variable {rid}")
            if state == 2:
                return
            color[rid] = 1
            for p in self.parents(rid):
                visit(p)
            color[rid] = 2

        for rid in self.entries:
            visit(rid)


def reachable(roots, *states: SymState) -> set[int]:
    """Transitive closure of variable references through stored distributions."""
    frontier: list[int] = []
    for r in roots:
        if isinstance(r, int):
            frontier.append(r)
        else:
            frontier.extend(free_rvs(r))
    seen: set[int] = set()
    while frontier:
        rid = frontier.pop()
        if rid in seen:
            continue
        seen.add(rid)
        for g in states:
            if rid in g.entries:
                frontier.extend(distr_rvs(g.entries[rid].distr))
    return seen


def weak_eq(g1: SymState, g2: SymState, e: Val) -> bool:
    """States agree on every variable reachable from ``e``."""
    for rid in reachable([e], g1, g2):
        if g1.entries.get(rid) != g2.entries.get(rid):
            return False
    return True


# --- densities and sampling ---


LOG_2PI = math.log(2.0 * math.pi)


def score(d: Distr, value: float | bool) -> float:
    """Natural-log density (or mass) of a constant-parameter distribution."""
    match d:
        case DNormal(VConst(mu), VConst(var)):
            if var <= 0:
                raise EvalError(f"gaussian variance must be positive, got {var}")
            return -0.5 * (LOG_2PI + math.log(var)) - (value - mu) ** 2 / (2.0 * var)
        case DBernoulli(VConst(p)):
            if not 0.0 <= p <= 1.0:
                raise EvalError(f"bernoulli probability out of range: {p}")
            if value:
                return math.log(p) if p > 0 else -math.inf
            return math.log1p(-p) if p < 1 else -math.inf
        case DInvGamma(VConst(a), VConst(b)):
            if a <= 0 or b <= 0:
                raise EvalError("invgamma parameters must be positive")
            if value <= 0:
                return -math.inf
            return a * math.log(b) - math.lgamma(a) - (a + 1.0) * math.log(value) - b / value
        case DBeta(VConst(a), VConst(b)):
            if a <= 0 or b <= 0:
                raise EvalError("beta parameters must be positive")
            if not 0.0 < value < 1.0:
                return -math.inf
            logbeta = math.lgamma(a) + math.lgamma(b) - math.lgamma(a + b)
            return (a - 1.0) * math.log(value) + (b - 1.0) * math.log1p(-value) - logbeta
        case DStudentT(VConst(loc), VConst(dof), VConst(scale)):
            if dof <= 0 or scale <= 0:
                raise EvalError("student_t parameters must be positive")
            z = (value - loc) / scale
            return (
                math.lgamma((dof + 1.0) / 2.0)
                - math.lgamma(dof / 2.0)
                - 0.5 * math.log(dof * math.pi)
                - math.log(scale)
                - (dof + 1.0) / 2.0 * math.log1p(z * z / dof)
            )
        case DDelta(VConst(c)):
            return 0.0 if value == c else -math.inf
        case DSampledDelta(c):
            return 0.0 if value == c else -math.inf
    raise EvalError(f"cannot score {d}")


def draw(d: Distr, rng: np.random.Generator) -> float | bool:
    """Sample from a constant-parameter distribution."""
    match d:
        case DNormal(VConst(mu), VConst(var)):
            if var <= 0:
                raise EvalError(f"gaussian variance must be positive, got {var}")
            return float(rng.normal(mu, math.sqrt(var)))
        case DBernoulli(VConst(p)):
            if not 0.0 <= p <= 1.0:
                raise EvalError(f"bernoulli probability out of range: {p}")
            return bool(rng.random() < p)
        case DInvGamma(VConst(a), VConst(b)):
            return float(1.0 / rng.gamma(a, 1.0 / b))
        case DBeta(VConst(a), VConst(b)):
            return float(rng.beta(a, b))
        case DStudentT(VConst(loc), VConst(dof), VConst(scale)):
            return float(loc + scale * rng.standard_t(dof))
        case DDelta(VConst(c)):
            return c
        case DSampledDelta(c):
            return c
    raise EvalError(f"cannot draw from {d}")


def moments(d: Distr) -> tuple[float, float]:
    """(mean, variance); infinite variance reported as ``inf``."""
    match d:
        case DNormal(VConst(mu), VConst(var)):
            return float(mu), float(var)
        case DBernoulli(VConst(p)):
            return float(p), float(p * (1.0 - p))
        case DInvGamma(VConst(a), VConst(b)):
            mean = b / (a - 1.0) if a > 1 else math.inf
            var = b * b / ((a - 1.0) ** 2 * (a - 2.0)) if a > 2 else math.inf
            return mean, var
        case DBeta(VConst(a), VConst(b)):
            return a / (a + b), a * b / ((a + b) ** 2 * (a + b + 1.0))
        case DStudentT(VConst(loc), VConst(dof), VConst(scale)):
            mean = float(loc) if dof > 1 else math.inf
            var = scale * scale * dof / (dof - 2.0) if dof > 2 else math.inf
            return mean, var
        case DDelta(VConst(c)):
            return float(c), 0.0
        case DSampledDelta(c):
            return float(c), 0.0
    raise EvalError(f"no closed-form moments for {d}")


def distr_to_json(d: Distr):
    match d:
        case DNormal(mu, var):
            return {"dist": "gaussian", "mu": val_to_json(mu), "var": val_to_json(var)}
        case DBernoulli(p):
            return {"dist": "bernoulli", "p": val_to_json(p)}
        case DInvGamma(a, b):
            return {"dist": "invgamma", "a": val_to_json(a), "b": val_to_json(b)}
        case DBeta(a, b):
            return {"dist": "beta", "a": val_to_json(a), "b": val_to_json(b)}
        case DStudentT(loc, dof, scale):
            return {"dist": "student_t", "loc": val_to_json(loc), "dof": val_to_json(dof),
                    "scale": val_to_json(scale)}
        case DDelta(e):
            return {"dist": "delta", "v": val_to_json(e)}
        case DSampledDelta(v):
            return {"dist": "delta", "v": v}
        case DMixIte(c, d1, d2):
            return {"dist": "mixture", "cond": val_to_json(c),
                    "then": distr_to_json(d1), "else": distr_to_json(d2)}
    raise TypeError(d)


def val_to_json(v: Val):
    match v:
        case VConst(x):
            return x
        case VRV(rid):
            return {"rv": rid}
        case VAdd(l, r):
            return {"op": "+", "args": [val_to_json(l), val_to_json(r)]}
        case VSub(l, r):
            return {"op": "-", "args": [val_to_json(l), val_to_json(r)]}
        case VMul(l, r):
            return {"op": "*", "args": [val_to_json(l), val_to_json(r)]}
        case VDiv(l, r):
            return {"op": "/", "args": [val_to_json(l), val_to_json(r)]}
        case VCmp(op, l, r):
            return {"op": op, "args": [val_to_json(l), val_to_json(r)]}
        case VIte(c, t, o):
            return {"op": "ite", "args": [val_to_json(c), val_to_json(t), val_to_json(o)]}
        case VTup(items):
            return {"tuple": [val_to_json(i) for i in items]}
        case VLst(items):
            return [val_to_json(i) for i in items]
    raise TypeError(v)


def state_to_json(g: SymState):
    """Debug dump of a symbolic state."""
    return {
        str(rid): {
            "label": g.labels.get(rid, ""),
            "annotation": str(e.ann) or "none",
            "distribution": distr_to_json(e.distr),
            "node": repr(e.node) if e.node is not None else None,
        }
        for rid, e in sorted(g.entries.items())
    }
