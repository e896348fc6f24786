"""Abstract values, distributions, states, and their lattice operations.

The domain mirrors the runtime forms and adds three unknowns: ``UnkC``
(some constant), ``EUnk(S)`` (some expression over a variable set), and
``TopE`` (any expression); distributions get ``DUnk(S)``/``TopD`` and the
delayed-sampling node lattice gets ``TopN``.  ``UnkC`` counts as a
constant.  Joins recurse through matching heads, collapse mismatches to
``EUnk`` over the free variables of both sides, widen scalar expressions
deeper than ``DEPTH_LIMIT``, and (inside fold fixpoints) widen ``EUnk``
sets with ``SET_LIMIT`` or more variables to ``TopE``.
"""

from __future__ import annotations

from dataclasses import dataclass

from .lang import Annotation

DEPTH_LIMIT = 5
SET_LIMIT = 4


class AnalysisFail(Exception):
    """Aborts the interpretation: some execution may cast a symbolic variable."""

    def __init__(self, witnesses: list[tuple[str, str]]):
        super().__init__(f"plan unsatisfiable: {witnesses}")
        self.witnesses = witnesses


class AbsVal:
    __slots__ = ()


@dataclass(frozen=True, slots=True)
class AConst(AbsVal):
    v: float | bool | None


@dataclass(frozen=True, slots=True)
class AUnkC(AbsVal):
    pass


@dataclass(frozen=True, slots=True)
class ARV(AbsVal):
    rid: int


@dataclass(frozen=True, slots=True)
class AAdd(AbsVal):
    left: AbsVal
    right: AbsVal


@dataclass(frozen=True, slots=True)
class ASub(AbsVal):
    left: AbsVal
    right: AbsVal


@dataclass(frozen=True, slots=True)
class AMul(AbsVal):
    left: AbsVal
    right: AbsVal


@dataclass(frozen=True, slots=True)
class ADiv(AbsVal):
    left: AbsVal
    right: AbsVal


@dataclass(frozen=True, slots=True)
class AIte(AbsVal):
    cond: AbsVal
    then: AbsVal
    orelse: AbsVal


@dataclass(frozen=True, slots=True)
class ACmp(AbsVal):
    op: str
    left: AbsVal
    right: AbsVal


@dataclass(frozen=True, slots=True)
class ATup(AbsVal):
    items: tuple[AbsVal, ...]


@dataclass(frozen=True, slots=True)
class ALst(AbsVal):
    """List with a known prefix; ``tail`` is the variable set of an unknown
    suffix (None means the list is exactly the prefix)."""

    items: tuple[AbsVal, ...]
    tail: frozenset[int] | None = None


@dataclass(frozen=True, slots=True)
class AEUnk(AbsVal):
    fv: frozenset[int]


@dataclass(frozen=True, slots=True)
class ATopE(AbsVal):
    pass


UNK = AUnkC()
TOP_E = ATopE()


class AbsDistr:
    __slots__ = ()


@dataclass(frozen=True, slots=True)
class ADNormal(AbsDistr):
    mu: AbsVal
    var: AbsVal


@dataclass(frozen=True, slots=True)
class ADBernoulli(AbsDistr):
    p: AbsVal


@dataclass(frozen=True, slots=True)
class ADInvGamma(AbsDistr):
    a: AbsVal
    b: AbsVal


@dataclass(frozen=True, slots=True)
class ADBeta(AbsDistr):
    a: AbsVal
    b: AbsVal


@dataclass(frozen=True, slots=True)
class ADStudentT(AbsDistr):
    loc: AbsVal
    dof: AbsVal
    scale: AbsVal


@dataclass(frozen=True, slots=True)
class ADDelta(AbsDistr):
    e: AbsVal


@dataclass(frozen=True, slots=True)
class ADSampledDelta(AbsDistr):
    e: AbsVal


@dataclass(frozen=True, slots=True)
class ADMixIte(AbsDistr):
    cond: AbsVal
    then: AbsDistr
    orelse: AbsDistr


@dataclass(frozen=True, slots=True)
class ADUnk(AbsDistr):
    fv: frozenset[int]


@dataclass(frozen=True, slots=True)
class ATopD(AbsDistr):
    pass


TOP_D = ATopD()


# Delayed-sampling abstract node lattice.


@dataclass(frozen=True, slots=True)
class AMargRoot:
    children: frozenset[int]


@dataclass(frozen=True, slots=True)
class AMarg:
    parent: int
    prior: AbsDistr
    children: frozenset[int]


@dataclass(frozen=True, slots=True)
class AInit:
    parent: int
    children: frozenset[int]


@dataclass(frozen=True, slots=True)
class ARealized:
    pass


@dataclass(frozen=True, slots=True)
class ATopN:
    children: frozenset[int]


AbsNode = AMargRoot | AMarg | AInit | ARealized | ATopN


# --- constructors with folding ---


def _is_constish(v: AbsVal) -> bool:
    return isinstance(v, (AConst, AUnkC))


def _arith(cls, fold, l: AbsVal, r: AbsVal) -> AbsVal:
    if isinstance(l, ATopE) or isinstance(r, ATopE):
        return TOP_E
    if isinstance(l, AConst) and isinstance(r, AConst):
        return AConst(fold(l.v, r.v))
    if _is_constish(l) and _is_constish(r):
        return UNK
    return cls(l, r)


def aadd(l: AbsVal, r: AbsVal) -> AbsVal:
    if isinstance(l, AConst) and l.v == 0:
        return r
    if isinstance(r, AConst) and r.v == 0:
        return l
    return _arith(AAdd, lambda a, b: a + b, l, r)


def asub(l: AbsVal, r: AbsVal) -> AbsVal:
    if isinstance(r, AConst) and r.v == 0:
        return l
    return _arith(ASub, lambda a, b: a - b, l, r)


def amul(l: AbsVal, r: AbsVal) -> AbsVal:
    if isinstance(l, AConst):
        if l.v == 1:
            return r
        if l.v == 0:
            return AConst(0.0)
    if isinstance(r, AConst):
        if r.v == 1:
            return l
        if r.v == 0:
            return AConst(0.0)
    return _arith(AMul, lambda a, b: a * b, l, r)


def adiv(l: AbsVal, r: AbsVal) -> AbsVal:
    if isinstance(r, AConst) and r.v == 1:
        return l
    if isinstance(r, AConst) and r.v == 0:
        return UNK  # a concrete run would fail; keep the analysis total
    return _arith(ADiv, lambda a, b: a / b, l, r)


from .sym import _CMP  # shared comparison table


def acmp(op: str, l: AbsVal, r: AbsVal) -> AbsVal:
    if isinstance(l, ATopE) or isinstance(r, ATopE):
        return TOP_E
    if isinstance(l, AConst) and isinstance(r, AConst):
        return AConst(_CMP[op](l.v, r.v))
    if _is_constish(l) and _is_constish(r):
        return UNK
    return ACmp(op, l, r)


def aite(c: AbsVal, t: AbsVal, o: AbsVal) -> AbsVal:
    # ite over equal abstract branches must not collapse: the branches
    # stand for possibly-different concrete values, and dropping the
    # guard would hide its variables from the forcing analysis.
    if isinstance(c, AConst):
        return t if c.v else o
    if isinstance(c, ATopE):
        return TOP_E
    if _is_constish(c) or (isinstance(c, AEUnk) and not c.fv):
        return join_expr(t, o)
    return AIte(c, t, o)


# --- free variables, substitution, depth ---


def fv(v: AbsVal) -> frozenset[int]:
    match v:
        case ARV(rid):
            return frozenset((rid,))
        case AEUnk(s):
            return s
        case AAdd(l, r) | ASub(l, r) | AMul(l, r) | ADiv(l, r):
            return fv(l) | fv(r)
        case ACmp(_, l, r):
            return fv(l) | fv(r)
        case AIte(c, t, o):
            return fv(c) | fv(t) | fv(o)
        case ATup(items):
            out: frozenset[int] = frozenset()
            for i in items:
                out |= fv(i)
            return out
        case ALst(items, tail):
            out = tail or frozenset()
            for i in items:
                out |= fv(i)
            return out
        case _:
            return frozenset()


def fv_distr(d: AbsDistr) -> frozenset[int]:
    match d:
        case ADUnk(s):
            return s
        case ATopD() | ATopE():
            return frozenset()
        case ADMixIte(c, d1, d2):
            return fv(c) | fv_distr(d1) | fv_distr(d2)
        case _:
            out: frozenset[int] = frozenset()
            for p in _distr_params(d):
                out |= fv(p)
            return out


def _distr_params(d: AbsDistr) -> tuple[AbsVal, ...]:
    match d:
        case ADNormal(mu, var):
            return (mu, var)
        case ADBernoulli(p):
            return (p,)
        case ADInvGamma(a, b) | ADBeta(a, b):
            return (a, b)
        case ADStudentT(loc, dof, scale):
            return (loc, dof, scale)
        case ADDelta(e) | ADSampledDelta(e):
            return (e,)
        case ADMixIte(c, d1, d2):
            return (c,) + _distr_params(d1) + _distr_params(d2)
        case ADUnk(_) | ATopD():
            return ()
    raise TypeError(d)


def contains_top(v: AbsVal) -> bool:
    match v:
        case ATopE():
            return True
        case AAdd(l, r) | ASub(l, r) | AMul(l, r) | ADiv(l, r):
            return contains_top(l) or contains_top(r)
        case ACmp(_, l, r):
            return contains_top(l) or contains_top(r)
        case AIte(c, t, o):
            return contains_top(c) or contains_top(t) or contains_top(o)
        case ATup(items) | ALst(items, _):
            return any(contains_top(i) for i in items)
        case _:
            return False


def distr_contains_top(d: AbsDistr) -> bool:
    if isinstance(d, ATopD):
        return True
    if isinstance(d, ADMixIte):
        return contains_top(d.cond) or distr_contains_top(d.then) or distr_contains_top(d.orelse)
    return any(contains_top(p) for p in _distr_params(d))


def rv_free(v: AbsVal) -> bool:
    """No random variables can hide inside: constant-valued territory."""
    return not fv(v) and not contains_top(v)


def subst(v: AbsVal, rid: int, replacement: AbsVal) -> AbsVal:
    match v:
        case ARV(r) if r == rid:
            return replacement
        case AEUnk(s) if rid in s:
            return AEUnk(s - {rid})
        case AAdd(l, r):
            return aadd(subst(l, rid, replacement), subst(r, rid, replacement))
        case ASub(l, r):
            return asub(subst(l, rid, replacement), subst(r, rid, replacement))
        case AMul(l, r):
            return amul(subst(l, rid, replacement), subst(r, rid, replacement))
        case ADiv(l, r):
            return adiv(subst(l, rid, replacement), subst(r, rid, replacement))
        case ACmp(op, l, r):
            return acmp(op, subst(l, rid, replacement), subst(r, rid, replacement))
        case AIte(c, t, o):
            return aite(subst(c, rid, replacement), subst(t, rid, replacement),
                        subst(o, rid, replacement))
        case ATup(items):
            return ATup(tuple(subst(i, rid, replacement) for i in items))
        case ALst(items, tail):
            new_tail = tail - {rid} if tail is not None else None
            return ALst(tuple(subst(i, rid, replacement) for i in items), new_tail)
        case _:
            return v


def scalar_depth(v: AbsVal) -> int:
    """Depth of the scalar expression tree; containers reset the count."""
    match v:
        case AAdd(l, r) | ASub(l, r) | AMul(l, r) | ADiv(l, r):
            return 1 + max(scalar_depth(l), scalar_depth(r))
        case ACmp(_, l, r):
            return 1 + max(scalar_depth(l), scalar_depth(r))
        case AIte(c, t, o):
            return 1 + max(scalar_depth(c), scalar_depth(t), scalar_depth(o))
        case _:
            return 0


def widen(v: AbsVal) -> AbsVal:
    """Collapse scalar trees deeper than DEPTH_LIMIT to ``EUnk``/``TopE``."""
    match v:
        case ATup(items):
            return ATup(tuple(widen(i) for i in items))
        case ALst(items, tail):
            return ALst(tuple(widen(i) for i in items), tail)
        case _:
            if scalar_depth(v) > DEPTH_LIMIT:
                return TOP_E if contains_top(v) else AEUnk(fv(v))
            return v


def widen_sets(v: AbsVal) -> AbsVal:
    """Fold-fixpoint widening: large ``EUnk`` variable sets become ``TopE``."""
    match v:
        case AEUnk(s) if len(s) >= SET_LIMIT:
            return TOP_E
        case AAdd(l, r):
            return aadd(widen_sets(l), widen_sets(r))
        case ASub(l, r):
            return asub(widen_sets(l), widen_sets(r))
        case AMul(l, r):
            return amul(widen_sets(l), widen_sets(r))
        case ADiv(l, r):
            return adiv(widen_sets(l), widen_sets(r))
        case ACmp(op, l, r):
            return acmp(op, widen_sets(l), widen_sets(r))
        case AIte(c, t, o):
            return aite(widen_sets(c), widen_sets(t), widen_sets(o))
        case ATup(items):
            return ATup(tuple(widen_sets(i) for i in items))
        case ALst(items, tail):
            if tail is not None and len(tail) >= SET_LIMIT:
                return TOP_E
            return ALst(tuple(widen_sets(i) for i in items), tail)
        case _:
            return v


def widen_distr(d: AbsDistr) -> AbsDistr:
    match d:
        case ADNormal(mu, var):
            return ADNormal(widen(mu), widen(var))
        case ADBernoulli(p):
            return ADBernoulli(widen(p))
        case ADInvGamma(a, b):
            return ADInvGamma(widen(a), widen(b))
        case ADBeta(a, b):
            return ADBeta(widen(a), widen(b))
        case ADStudentT(loc, dof, scale):
            return ADStudentT(widen(loc), widen(dof), widen(scale))
        case ADDelta(e):
            return ADDelta(widen(e))
        case ADSampledDelta(e):
            return ADSampledDelta(widen(e))
        case ADMixIte(c, d1, d2):
            return ADMixIte(widen(c), widen_distr(d1), widen_distr(d2))
        case _:
            return d


# --- partial order ---


def leq_expr(a: AbsVal, b: AbsVal) -> bool:
    """Implemented preorder on abstract expressions."""
    if a == b:
        return True
    if isinstance(b, ATopE):
        return True
    if isinstance(a, ATopE):
        return False
    match a, b:
        case (AConst(_), AUnkC()):
            return True
        case (AConst(_) | AUnkC(), ARV(_)):
            return True
        case (AConst(_) | AUnkC(), AEUnk(_)):
            return True
        case (ARV(rid), AEUnk(s)):
            return rid in s
        case (AEUnk(s1), AEUnk(s2)):
            return s1 <= s2
        case (AAdd(l1, r1), AAdd(l2, r2)) | (ASub(l1, r1), ASub(l2, r2)) | \
             (AMul(l1, r1), AMul(l2, r2)) | (ADiv(l1, r1), ADiv(l2, r2)):
            return leq_expr(l1, l2) and leq_expr(r1, r2)
        case (ACmp(o1, l1, r1), ACmp(o2, l2, r2)):
            return o1 == o2 and leq_expr(l1, l2) and leq_expr(r1, r2)
        case (AIte(c1, t1, o1), AIte(c2, t2, o2)):
            return leq_expr(c1, c2) and leq_expr(t1, t2) and leq_expr(o1, o2)
        case (ATup(i1), ATup(i2)):
            return len(i1) == len(i2) and all(leq_expr(x, y) for x, y in zip(i1, i2))
        case (ALst(i1, t1), ALst(i2, t2)):
            if t1 is None and t2 is None:
                return len(i1) == len(i2) and all(leq_expr(x, y) for x, y in zip(i1, i2))
            return False
        case (_, AEUnk(s)):
            return not isinstance(a, (ATup, ALst)) and fv(a) <= s and not contains_top(a)
    return False


# --- join ---


def join_expr(a: AbsVal, b: AbsVal) -> AbsVal:
    if a == b:
        return a
    if isinstance(a, ATopE) or isinstance(b, ATopE):
        return TOP_E
    match a, b:
        case (AConst(x), AConst(y)):
            return a if x == y else UNK
        case (AConst(_) | AUnkC(), AUnkC()) | (AUnkC(), AConst(_)):
            return UNK
        case (ARV(r1), ARV(r2)):
            return a if r1 == r2 else AEUnk(frozenset((r1, r2)))
        case (ARV(_), AConst(_) | AUnkC()):
            return a
        case (AConst(_) | AUnkC(), ARV(_)):
            return b
        case (AEUnk(s1), AEUnk(s2)):
            return AEUnk(s1 | s2)
        case (AEUnk(s), _):
            return TOP_E if contains_top(b) else AEUnk(s | fv(b))
        case (_, AEUnk(s)):
            return TOP_E if contains_top(a) else AEUnk(s | fv(a))
        case (AAdd(l1, r1), AAdd(l2, r2)):
            return widen(aadd(join_expr(l1, l2), join_expr(r1, r2)))
        case (ASub(l1, r1), ASub(l2, r2)):
            return widen(asub(join_expr(l1, l2), join_expr(r1, r2)))
        case (AMul(l1, r1), AMul(l2, r2)):
            return widen(amul(join_expr(l1, l2), join_expr(r1, r2)))
        case (ADiv(l1, r1), ADiv(l2, r2)):
            return widen(adiv(join_expr(l1, l2), join_expr(r1, r2)))
        case (ACmp(o1, l1, r1), ACmp(o2, l2, r2)) if o1 == o2:
            return widen(acmp(o1, join_expr(l1, l2), join_expr(r1, r2)))
        case (AIte(c1, t1, o1), AIte(c2, t2, o2)):
            return widen(aite(join_expr(c1, c2), join_expr(t1, t2), join_expr(o1, o2)))
        case (ATup(i1), ATup(i2)) if len(i1) == len(i2):
            return ATup(tuple(join_expr(x, y) for x, y in zip(i1, i2)))
        case (ALst(_, _), ALst(_, _)):
            return _join_lists(a, b)
    if contains_top(a) or contains_top(b):
        return TOP_E
    return AEUnk(fv(a) | fv(b))


def _join_lists(a: ALst, b: ALst) -> AbsVal:
    if a.tail is None and b.tail is None and len(a.items) == len(b.items):
        return ALst(tuple(join_expr(x, y) for x, y in zip(a.items, b.items)), None)
    n = min(len(a.items), len(b.items), DEPTH_LIMIT)
    prefix = tuple(join_expr(x, y) for x, y in zip(a.items[:n], b.items[:n]))
    rest: frozenset[int] = (a.tail or frozenset()) | (b.tail or frozenset())
    for leftover in (a.items[n:], b.items[n:]):
        for item in leftover:
            rest |= fv(item)
    return ALst(prefix, rest)


def join_distr(a: AbsDistr, b: AbsDistr) -> AbsDistr:
    if a == b:
        return a
    if isinstance(a, ATopD) or isinstance(b, ATopD):
        return TOP_D
    match a, b:
        case (ADUnk(s1), ADUnk(s2)):
            return ADUnk(s1 | s2)
        case (ADUnk(s), _):
            return TOP_D if distr_contains_top(b) else ADUnk(s | fv_distr(b))
        case (_, ADUnk(s)):
            return TOP_D if distr_contains_top(a) else ADUnk(s | fv_distr(a))
        case (ADNormal(m1, v1), ADNormal(m2, v2)):
            return ADNormal(join_expr(m1, m2), join_expr(v1, v2))
        case (ADBernoulli(p1), ADBernoulli(p2)):
            return ADBernoulli(join_expr(p1, p2))
        case (ADInvGamma(a1, b1), ADInvGamma(a2, b2)):
            return ADInvGamma(join_expr(a1, a2), join_expr(b1, b2))
        case (ADBeta(a1, b1), ADBeta(a2, b2)):
            return ADBeta(join_expr(a1, a2), join_expr(b1, b2))
        case (ADStudentT(l1, d1, s1), ADStudentT(l2, d2, s2)):
            return ADStudentT(join_expr(l1, l2), join_expr(d1, d2), join_expr(s1, s2))
        case (ADDelta(e1), ADDelta(e2)):
            return ADDelta(join_expr(e1, e2))
        case (ADSampledDelta(e1), ADSampledDelta(e2)):
            return ADSampledDelta(join_expr(e1, e2))
        case (ADDelta(e1), ADSampledDelta(e2)) | (ADSampledDelta(e1), ADDelta(e2)):
            return ADSampledDelta(join_expr(e1, e2))
    if distr_contains_top(a) or distr_contains_top(b):
        return TOP_D
    return ADUnk(fv_distr(a) | fv_distr(b))


def widen_sets_distr(d: AbsDistr) -> AbsDistr:
    match d:
        case ADUnk(s) if len(s) >= SET_LIMIT:
            return TOP_D
        case ADNormal(mu, var):
            return ADNormal(widen_sets(mu), widen_sets(var))
        case ADBernoulli(p):
            return ADBernoulli(widen_sets(p))
        case ADInvGamma(a, b):
            return ADInvGamma(widen_sets(a), widen_sets(b))
        case ADBeta(a, b):
            return ADBeta(widen_sets(a), widen_sets(b))
        case ADStudentT(loc, dof, scale):
            return ADStudentT(widen_sets(loc), widen_sets(dof), widen_sets(scale))
        case ADDelta(e):
            return ADDelta(widen_sets(e))
        case ADSampledDelta(e):
            return ADSampledDelta(widen_sets(e))
        case ADMixIte(c, d1, d2):
            return ADMixIte(widen_sets(c), widen_sets_distr(d1), widen_sets_distr(d2))
        case _:
            return d


# --- abstract state ---


ANN_ORDER = {Annotation.NONE: 0, Annotation.SAMPLE: 1, Annotation.SYMBOLIC: 2}


def join_ann(a: Annotation, b: Annotation) -> Annotation:
    return a if ANN_ORDER[a] >= ANN_ORDER[b] else b


@dataclass(frozen=True, slots=True)
class AbsEntry:
    ann: Annotation
    distr: AbsDistr
    node: AbsNode | None


class AbsState:
    """Finite map from abstract variable ids to entries.

    Ids are drawn from one global counter per analysis so "ascending id"
    orderings are meaningful; each id remembers its declaration site for
    the rename alignment fallback.
    """

    __slots__ = ("entries", "sites", "labels", "counter")

    def __init__(self, counter: list[int] | None = None,
                 sites: dict[int, str] | None = None,
                 labels: dict[int, str] | None = None):
        self.entries: dict[int, AbsEntry] = {}
        self.counter = counter if counter is not None else [0]
        self.sites = sites if sites is not None else {}
        self.labels = labels if labels is not None else {}

    def copy(self) -> "AbsState":
        g = AbsState(self.counter, self.sites, self.labels)
        g.entries = dict(self.entries)
        return g

    def fresh(self, ann: Annotation, distr: AbsDistr, node: AbsNode | None,
              site: str, label: str = "") -> int:
        rid = self.counter[0]
        self.counter[0] += 1
        self.entries[rid] = AbsEntry(ann, distr, node)
        self.sites[rid] = site
        self.labels[rid] = label or site
        return rid

    def __contains__(self, rid: int) -> bool:
        return rid in self.entries

    def ann(self, rid: int) -> Annotation:
        return self.entries[rid].ann

    def distr(self, rid: int) -> AbsDistr:
        return self.entries[rid].distr

    def node(self, rid: int) -> AbsNode | None:
        return self.entries[rid].node

    def set_distr(self, rid: int, d: AbsDistr) -> None:
        e = self.entries[rid]
        self.entries[rid] = AbsEntry(e.ann, widen_distr(d), e.node)

    def set_node(self, rid: int, node: AbsNode | None) -> None:
        e = self.entries[rid]
        self.entries[rid] = AbsEntry(e.ann, e.distr, node)

    def set_ann(self, rid: int, ann: Annotation) -> None:
        e = self.entries[rid]
        self.entries[rid] = AbsEntry(ann, e.distr, e.node)

    def realized_value(self, rid: int) -> AbsVal | None:
        entry = self.entries.get(rid)
        if entry is None:
            return None
        match entry.distr:
            case ADDelta(e) | ADSampledDelta(e) if rv_free(e):
                return e
            case _:
                return None

    def witness(self, rid: int) -> tuple[str, str]:
        return (self.sites.get(rid, "?"), self.labels.get(rid, str(rid)))

    # --- evaluation (delta substitution, mixture collapse) ---

    def eval_value(self, v: AbsVal) -> AbsVal:
        match v:
            case ARV(rid):
                c = self.realized_value(rid)
                return c if c is not None else v
            case AAdd(l, r):
                return aadd(self.eval_value(l), self.eval_value(r))
            case ASub(l, r):
                return asub(self.eval_value(l), self.eval_value(r))
            case AMul(l, r):
                return amul(self.eval_value(l), self.eval_value(r))
            case ADiv(l, r):
                return adiv(self.eval_value(l), self.eval_value(r))
            case ACmp(op, l, r):
                return acmp(op, self.eval_value(l), self.eval_value(r))
            case AIte(c, t, o):
                return aite(self.eval_value(c), self.eval_value(t), self.eval_value(o))
            case ATup(items):
                return ATup(tuple(self.eval_value(i) for i in items))
            case ALst(items, tail):
                if tail:
                    tail = frozenset(r for r in tail if self.realized_value(r) is None)
                return ALst(tuple(self.eval_value(i) for i in items), tail)
            case AEUnk(s):
                live = frozenset(r for r in s if r not in self.entries or self.realized_value(r) is None)
                return AEUnk(live)
            case _:
                return v

    def eval_distr(self, d: AbsDistr) -> AbsDistr:
        match d:
            case ADNormal(mu, var):
                return ADNormal(self.eval_value(mu), self.eval_value(var))
            case ADBernoulli(p):
                return ADBernoulli(self.eval_value(p))
            case ADInvGamma(a, b):
                return ADInvGamma(self.eval_value(a), self.eval_value(b))
            case ADBeta(a, b):
                return ADBeta(self.eval_value(a), self.eval_value(b))
            case ADStudentT(loc, dof, scale):
                return ADStudentT(self.eval_value(loc), self.eval_value(dof), self.eval_value(scale))
            case ADDelta(e):
                return ADDelta(self.eval_value(e))
            case ADSampledDelta(e):
                return ADSampledDelta(self.eval_value(e))
            case ADMixIte(c, d1, d2):
                c = self.eval_value(c)
                if isinstance(c, AConst):
                    return self.eval_distr(d1) if c.v else self.eval_distr(d2)
                t = self.eval_distr(d1)
                o = self.eval_distr(d2)
                if _is_constish(c) or (isinstance(c, AEUnk) and not c.fv):
                    return join_distr(t, o)
                return ADMixIte(c, t, o)
            case ADUnk(s):
                live = frozenset(r for r in s if r not in self.entries or self.realized_value(r) is None)
                return ADUnk(live)
            case _:
                return d

    def refresh(self, rid: int) -> None:
        self.set_distr(rid, self.eval_distr(self.entries[rid].distr))

    def parents(self, rid: int) -> list[int]:
        d = self.eval_distr(self.entries[rid].distr)
        return sorted(p for p in fv_distr(d) if p != rid and p in self.entries
                      and self.realized_value(p) is None)


def node_fv(node: AbsNode | None) -> frozenset[int]:
    match node:
        case AMarg(parent, prior, _):
            return frozenset((parent,)) | fv_distr(prior)
        case AInit(parent, _):
            return frozenset((parent,))
        case _:
            return frozenset()


def abs_reachable(roots, *states: AbsState) -> set[int]:
    frontier: list[int] = []
    for r in roots:
        if isinstance(r, int):
            frontier.append(r)
        else:
            frontier.extend(fv(r))
    seen: set[int] = set()
    while frontier:
        rid = frontier.pop()
        if rid in seen:
            continue
        seen.add(rid)
        for g in states:
            e = g.entries.get(rid)
            if e is not None:
                frontier.extend(fv_distr(e.distr))
                frontier.extend(node_fv(e.node))
    return seen


def abs_weak_eq(g1: AbsState, g2: AbsState, e: AbsVal) -> bool:
    for rid in abs_reachable([e], g1, g2):
        if g1.entries.get(rid) != g2.entries.get(rid):
            return False
    return True


# --- delayed-sampling node join ---


def _node_children(node: AbsNode) -> frozenset[int]:
    return node.children if not isinstance(node, ARealized) else frozenset()


def join_node(a: AbsNode | None, b: AbsNode | None, escalate: list[int]) -> AbsNode | None:
    """Join per the node lattice; mismatches become TopN and are queued for
    escalation (parents and marginalized children must be topped too)."""
    if a == b:
        return a
    if a is None or b is None:
        return a if b is None else b
    match a, b:
        case (AMargRoot(c1), AMargRoot(c2)):
            return AMargRoot(c1 | c2)
        case (AInit(p1, c1), AInit(p2, c2)) if p1 == p2:
            return AInit(p1, c1 | c2)
        case (AMarg(p1, d1, c1), AMarg(p2, d2, c2)) if p1 == p2:
            return AMarg(p1, join_distr(d1, d2), c1 | c2)
        case (ATopN(c1), ATopN(c2)):
            return ATopN(c1 | c2)
        case (ARealized(), ATopN(c)) | (ATopN(c), ARealized()):
            return ATopN(c)
        case (ATopN(c1), other) | (other, ATopN(c1)):
            escalate.extend(node_fv(other))
            return ATopN(c1 | _node_children(other))
    escalate.extend(node_fv(a))
    escalate.extend(node_fv(b))
    return ATopN(_node_children(a) | _node_children(b))


def _escalate_topn(g: AbsState, worklist: list[int]) -> None:
    """TopN spreads to parents and marginalized children; a symbolic
    annotation anywhere in the blast radius is a failure."""
    seen: set[int] = set()
    while worklist:
        rid = worklist.pop()
        if rid in seen or rid not in g.entries:
            continue
        seen.add(rid)
        entry = g.entries[rid]
        if entry.ann is Annotation.SYMBOLIC:
            raise AnalysisFail([g.witness(rid)])
        node = entry.node
        if node is None or isinstance(node, ATopN):
            continue
        children = _node_children(node)
        worklist.extend(node_fv(node))
        for c in children:
            cn = g.entries.get(c)
            if cn is not None and isinstance(cn.node, AMarg):
                worklist.append(c)
        g.set_node(rid, ATopN(children))


def join_states(g1: AbsState, g2: AbsState, in_fold: bool) -> AbsState:
    out = g1.copy()
    escalate: list[int] = []
    changed_to_top: list[int] = []
    for rid, e2 in g2.entries.items():
        e1 = out.entries.get(rid)
        if e1 is None:
            out.entries[rid] = e2
            continue
        if e1 == e2:
            continue
        d = join_distr(g1.eval_distr(e1.distr), g2.eval_distr(e2.distr))
        if e1.distr != e2.distr:
            _check_joined_entry(out, d)
        d = widen_distr(d)
        if in_fold:
            d = widen_sets_distr(d)
        local: list[int] = []
        node = join_node(e1.node, e2.node, local)
        if local or (isinstance(node, ATopN) and not isinstance(e1.node, ATopN)):
            changed_to_top.append(rid)
            escalate.extend(local)
        out.entries[rid] = AbsEntry(join_ann(e1.ann, e2.ann), d, node)
    for rid in changed_to_top:
        if out.entries[rid].ann is Annotation.SYMBOLIC:
            raise AnalysisFail([out.witness(rid)])
    _escalate_topn(out, escalate)
    return out


# --- rename-join ---


def _collect_rvs(v: AbsVal, acc: list[int], seen: set[int]) -> None:
    match v:
        case ARV(rid):
            if rid not in seen:
                seen.add(rid)
                acc.append(rid)
        case AEUnk(s):
            for rid in sorted(s):
                if rid not in seen:
                    seen.add(rid)
                    acc.append(rid)
        case AAdd(l, r) | ASub(l, r) | AMul(l, r) | ADiv(l, r):
            _collect_rvs(l, acc, seen)
            _collect_rvs(r, acc, seen)
        case ACmp(_, l, r):
            _collect_rvs(l, acc, seen)
            _collect_rvs(r, acc, seen)
        case AIte(c, t, o):
            _collect_rvs(c, acc, seen)
            _collect_rvs(t, acc, seen)
            _collect_rvs(o, acc, seen)
        case ATup(items):
            for i in items:
                _collect_rvs(i, acc, seen)
        case ALst(items, tail):
            for i in items:
                _collect_rvs(i, acc, seen)
            if tail:
                for rid in sorted(tail):
                    if rid not in seen:
                        seen.add(rid)
                        acc.append(rid)
        case _:
            pass


def ordered_rvs(v: AbsVal) -> list[int]:
    acc: list[int] = []
    _collect_rvs(v, acc, set())
    return acc


def _align(a: AbsVal, b: AbsVal, sigma: dict[int, int], taken: set[int]) -> None:
    """Structural lockstep walk recording which of b's variables should be
    renamed onto a's variables."""
    match a, b:
        case (ARV(x), ARV(y)):
            if x != y and y not in sigma and x not in taken:
                sigma[y] = x
                taken.add(x)
        case (AAdd(l1, r1), AAdd(l2, r2)) | (ASub(l1, r1), ASub(l2, r2)) | \
             (AMul(l1, r1), AMul(l2, r2)) | (ADiv(l1, r1), ADiv(l2, r2)):
            _align(l1, l2, sigma, taken)
            _align(r1, r2, sigma, taken)
        case (ACmp(o1, l1, r1), ACmp(o2, l2, r2)) if o1 == o2:
            _align(l1, l2, sigma, taken)
            _align(r1, r2, sigma, taken)
        case (AIte(c1, t1, o1), AIte(c2, t2, o2)):
            _align(c1, c2, sigma, taken)
            _align(t1, t2, sigma, taken)
            _align(o1, o2, sigma, taken)
        case (ATup(i1), ATup(i2)):
            for x, y in zip(i1, i2):
                _align(x, y, sigma, taken)
        case (ALst(i1, _), ALst(i2, _)):
            for x, y in zip(i1, i2):
                _align(x, y, sigma, taken)
        case _:
            pass


def build_sigma(e1: AbsVal, e2: AbsVal, g1: AbsState, g2: AbsState) -> dict[int, int]:
    """Renaming of g2's variables that maximizes structural agreement.

    A structural pass aligns same-position variables; a fallback pass then
    pairs leftover variables that came from the same declaration site.
    """
    sigma: dict[int, int] = {}
    taken: set[int] = set()
    _align(e1, e2, sigma, taken)
    by_site: dict[str, list[int]] = {}
    for r in ordered_rvs(e1):
        if r not in taken:
            by_site.setdefault(g1.sites.get(r, "?"), []).append(r)
    leftover2: dict[str, list[int]] = {}
    for r in ordered_rvs(e2):
        if r not in sigma and r not in taken:
            leftover2.setdefault(g2.sites.get(r, "?"), []).append(r)
    for site, sources in leftover2.items():
        targets = by_site.get(site, [])
        # variables present on both sides keep their name and do not
        # consume an alignment target
        spare = [s for s in sources if s not in targets]
        for y, x in zip(spare, targets):
            if x != y and y not in sigma and x not in taken:
                sigma[y] = x
                taken.add(x)
    return {k: v for k, v in sigma.items() if k != v}


def rename_apply(v: AbsVal, sigma: dict[int, int]) -> AbsVal:
    if not sigma:
        return v
    match v:
        case ARV(rid):
            return ARV(sigma.get(rid, rid))
        case AEUnk(s):
            return AEUnk(frozenset(sigma.get(r, r) for r in s))
        case AAdd(l, r):
            return AAdd(rename_apply(l, sigma), rename_apply(r, sigma))
        case ASub(l, r):
            return ASub(rename_apply(l, sigma), rename_apply(r, sigma))
        case AMul(l, r):
            return AMul(rename_apply(l, sigma), rename_apply(r, sigma))
        case ADiv(l, r):
            return ADiv(rename_apply(l, sigma), rename_apply(r, sigma))
        case ACmp(op, l, r):
            return ACmp(op, rename_apply(l, sigma), rename_apply(r, sigma))
        case AIte(c, t, o):
            return AIte(rename_apply(c, sigma), rename_apply(t, sigma), rename_apply(o, sigma))
        case ATup(items):
            return ATup(tuple(rename_apply(i, sigma) for i in items))
        case ALst(items, tail):
            t = frozenset(sigma.get(r, r) for r in tail) if tail is not None else None
            return ALst(tuple(rename_apply(i, sigma) for i in items), t)
        case _:
            return v


def rename_distr(d: AbsDistr, sigma: dict[int, int]) -> AbsDistr:
    if not sigma:
        return d
    match d:
        case ADNormal(mu, var):
            return ADNormal(rename_apply(mu, sigma), rename_apply(var, sigma))
        case ADBernoulli(p):
            return ADBernoulli(rename_apply(p, sigma))
        case ADInvGamma(a, b):
            return ADInvGamma(rename_apply(a, sigma), rename_apply(b, sigma))
        case ADBeta(a, b):
            return ADBeta(rename_apply(a, sigma), rename_apply(b, sigma))
        case ADStudentT(loc, dof, scale):
            return ADStudentT(rename_apply(loc, sigma), rename_apply(dof, sigma),
                              rename_apply(scale, sigma))
        case ADDelta(e):
            return ADDelta(rename_apply(e, sigma))
        case ADSampledDelta(e):
            return ADSampledDelta(rename_apply(e, sigma))
        case ADMixIte(c, d1, d2):
            return ADMixIte(rename_apply(c, sigma), rename_distr(d1, sigma), rename_distr(d2, sigma))
        case ADUnk(s):
            return ADUnk(frozenset(sigma.get(r, r) for r in s))
        case _:
            return d


def rename_node(node: AbsNode | None, sigma: dict[int, int]) -> AbsNode | None:
    if node is None or not sigma:
        return node
    match node:
        case AMargRoot(c):
            return AMargRoot(frozenset(sigma.get(r, r) for r in c))
        case AMarg(p, d, c):
            return AMarg(sigma.get(p, p), rename_distr(d, sigma), frozenset(sigma.get(r, r) for r in c))
        case AInit(p, c):
            return AInit(sigma.get(p, p), frozenset(sigma.get(r, r) for r in c))
        case ARealized():
            return node
        case ATopN(c):
            return ATopN(frozenset(sigma.get(r, r) for r in c))
    raise TypeError(node)


def subst_distr(d: AbsDistr, rid: int, replacement: AbsVal) -> AbsDistr:
    match d:
        case ADNormal(mu, var):
            return ADNormal(subst(mu, rid, replacement), subst(var, rid, replacement))
        case ADBernoulli(p):
            return ADBernoulli(subst(p, rid, replacement))
        case ADInvGamma(a, b):
            return ADInvGamma(subst(a, rid, replacement), subst(b, rid, replacement))
        case ADBeta(a, b):
            return ADBeta(subst(a, rid, replacement), subst(b, rid, replacement))
        case ADStudentT(loc, dof, scale):
            return ADStudentT(subst(loc, rid, replacement), subst(dof, rid, replacement),
                              subst(scale, rid, replacement))
        case ADDelta(e):
            return ADDelta(subst(e, rid, replacement))
        case ADSampledDelta(e):
            return ADSampledDelta(subst(e, rid, replacement))
        case ADMixIte(c, d1, d2):
            return ADMixIte(subst(c, rid, replacement), subst_distr(d1, rid, replacement),
                            subst_distr(d2, rid, replacement))
        case ADUnk(s):
            return ADUnk(s - {rid})
        case _:
            return d


def _drop_self(d: AbsDistr, rid: int) -> AbsDistr:
    """A merged variable may not condition on itself; the lost dependence
    degrades to an unknown constant."""
    if rid in fv_distr(d):
        return subst_distr(d, rid, UNK)
    return d


def _param_unknown_sets(d: AbsDistr):
    match d:
        case ADUnk(s):
            yield s
        case ADMixIte(c, d1, d2):
            yield from _expr_unknown_sets(c)
            yield from _param_unknown_sets(d1)
            yield from _param_unknown_sets(d2)
        case ATopD():
            pass
        case _:
            for p in _distr_params(d):
                yield from _expr_unknown_sets(p)


def _expr_unknown_sets(v: AbsVal):
    match v:
        case AEUnk(s):
            yield s
        case AAdd(l, r) | ASub(l, r) | AMul(l, r) | ADiv(l, r):
            yield from _expr_unknown_sets(l)
            yield from _expr_unknown_sets(r)
        case ACmp(_, l, r):
            yield from _expr_unknown_sets(l)
            yield from _expr_unknown_sets(r)
        case AIte(c, t, o):
            yield from _expr_unknown_sets(c)
            yield from _expr_unknown_sets(t)
            yield from _expr_unknown_sets(o)
        case ATup(items) | ALst(items, _):
            for i in items:
                yield from _expr_unknown_sets(i)
        case _:
            pass


def _check_joined_entry(g: AbsState, d: AbsDistr) -> None:
    """A join that degrades a parameter to an unknown expression over a
    live symbolic variable hides a conjugacy the runtime may depend on;
    reject conservatively (mirrors the syntactic-join precision loss)."""
    for s in _param_unknown_sets(d):
        for rid in s:
            entry = g.entries.get(rid)
            if entry is not None and entry.ann is Annotation.SYMBOLIC \
                    and g.realized_value(rid) is None:
                raise AnalysisFail([g.witness(rid)])


def rename_state(g: AbsState, sigma: dict[int, int]) -> AbsState:
    """Apply a (possibly merging) renaming; colliding entries are joined."""
    if not sigma:
        return g
    out = AbsState(g.counter, g.sites, g.labels)
    escalate: list[int] = []
    for rid, e in g.entries.items():
        new_rid = sigma.get(rid, rid)
        d = _drop_self(rename_distr(g.eval_distr(e.distr), sigma), new_rid)
        renamed = AbsEntry(e.ann, d, rename_node(e.node, sigma))
        prev = out.entries.get(new_rid)
        if prev is None:
            out.entries[new_rid] = renamed
        else:
            d = join_distr(_drop_self(prev.distr, new_rid), d)
            _check_joined_entry(g, d)
            node = join_node(prev.node, renamed.node, escalate)
            out.entries[new_rid] = AbsEntry(join_ann(prev.ann, renamed.ann), widen_distr(d), node)
            if isinstance(node, ATopN) and out.entries[new_rid].ann is Annotation.SYMBOLIC:
                raise AnalysisFail([out.witness(new_rid)])
    _escalate_topn(out, escalate)
    return out


def rename_join(e1: AbsVal, e2: AbsVal, g1: AbsState, g2: AbsState,
                in_fold: bool = False) -> tuple[AbsVal, AbsState]:
    """Align g2's fresh variables with g1's, then take least upper bounds."""
    sigma = build_sigma(e1, e2, g1, g2)
    e3 = rename_apply(e2, sigma)
    g3 = rename_state(g2, sigma)
    joined = widen(join_expr(e1, e3))
    if in_fold:
        joined = widen_sets(joined)
    return joined, join_states(g1, g3, in_fold)


def abs_expr_to_json(v: AbsVal):
    match v:
        case AConst(x):
            return x
        case AUnkC():
            return {"unk": "const"}
        case ATopE():
            return {"top": "expr"}
        case AEUnk(s):
            return {"unk": "expr", "over": sorted(s)}
        case ARV(rid):
            return {"rv": rid}
        case AAdd(l, r):
            return {"op": "+", "args": [abs_expr_to_json(l), abs_expr_to_json(r)]}
        case ASub(l, r):
            return {"op": "-", "args": [abs_expr_to_json(l), abs_expr_to_json(r)]}
        case AMul(l, r):
            return {"op": "*", "args": [abs_expr_to_json(l), abs_expr_to_json(r)]}
        case ADiv(l, r):
            return {"op": "/", "args": [abs_expr_to_json(l), abs_expr_to_json(r)]}
        case ACmp(op, l, r):
            return {"op": op, "args": [abs_expr_to_json(l), abs_expr_to_json(r)]}
        case AIte(c, t, o):
            return {"op": "ite", "args": [abs_expr_to_json(c), abs_expr_to_json(t), abs_expr_to_json(o)]}
        case ATup(items):
            return {"tuple": [abs_expr_to_json(i) for i in items]}
        case ALst(items, tail):
            out = {"list": [abs_expr_to_json(i) for i in items]}
            if tail is not None:
                out["tail_over"] = sorted(tail)
            return out
    raise TypeError(v)


def abs_distr_to_json(d: AbsDistr):
    match d:
        case ATopD():
            return {"top": "distr"}
        case ADUnk(s):
            return {"unk": "distr", "over": sorted(s)}
        case ADMixIte(c, d1, d2):
            return {"dist": "mixture", "cond": abs_expr_to_json(c),
                    "then": abs_distr_to_json(d1), "else": abs_distr_to_json(d2)}
        case _:
            name = type(d).__name__.removeprefix("AD").lower()
            return {"dist": name,
                    "params": [abs_expr_to_json(p) for p in _distr_params(d)]}


def abs_state_to_json(g: AbsState):
    """Debug dump of an abstract state for analysis traces."""
    return {
        str(rid): {
            "site": g.sites.get(rid, ""),
            "label": g.labels.get(rid, ""),
            "annotation": str(e.ann) or "none",
            "distribution": abs_distr_to_json(e.distr),
            "node": repr(e.node) if e.node is not None else None,
        }
        for rid, e in sorted(g.entries.items())
    }
