"""Semi-symbolic backend: swap-based conjugacy with hoisting.

``hoist`` makes a variable a root by recursively hoisting its parents in
topological order and then reversing each parent edge with ``swap``.  A
failed swap forces the offending parent to a sample and retries; forcing a
symbolic-annotated variable is a dynamic encoding cast.
"""

from __future__ import annotations

import numpy as np

from . import conjugacy
from .interface import CastLog
from .lang import Annotation
from .sym import (
    DDelta,
    DSampledDelta,
    Distr,
    EvalError,
    SymState,
    VConst,
    VRV,
    draw,
    reachable,
    score,
)


class SwapFailed(Exception):
    def __init__(self, parent: int, child: int):
        super().__init__(f"no conjugacy between {parent} and {child}")
        self.parent = parent
        self.child = child


def topo_sort(rids: list[int], g: SymState) -> list[int]:
    """Ancestors-first order over a set of variables, ids breaking ties."""
    anc = {r: reachable(g.parents(r), g) for r in rids}
    remaining = sorted(rids)
    out: list[int] = []
    while remaining:
        for r in remaining:
            if not any(q in anc[r] for q in remaining if q != r):
                out.append(r)
                remaining.remove(r)
                break
        else:
            raise EvalError("cycle among parents")
    return out


def swap(x1: int, x2: int, g: SymState) -> bool:
    """Reverse the dependency of ``x2`` on ``x1``, preserving the joint.

    On success ``x2`` holds the marginal and ``x1`` the conditional given
    ``x2``; returns False (state untouched) when no conjugacy applies.
    """
    prior = g.eval_distr(g.distr(x1))
    cond = g.eval_distr(g.distr(x2))
    marg = conjugacy.marginal(prior, cond, x1)
    if marg is None:
        return False
    post = conjugacy.posterior(prior, cond, x1, VRV(x2))
    if post is None:
        return False
    g.set_distr(x2, marg)
    g.set_distr(x1, post)
    return True


def intervene(rid: int, d: Distr, g: SymState) -> None:
    """Replace a root's distribution with a (sampled) delta."""
    if g.parents(rid):
        raise EvalError(f"intervene on non-root variable {rid}")
    g.set_distr(rid, d)


class SsiBackend:
    name = "ssi"

    def assume(self, ann: Annotation, dist: Distr, g: SymState,
               rng: np.random.Generator, casts: CastLog, label: str = "") -> int:
        return g.fresh(ann, g.eval_distr(dist), node=None, label=label)

    def value(self, rid: int, g: SymState,
              rng: np.random.Generator, casts: CastLog) -> VConst:
        c = g.realized_value(rid)
        if c is not None:
            return c
        if g.ann(rid) is Annotation.SYMBOLIC:
            casts.record(rid, g.labels.get(rid, ""))
        self.hoist(rid, g, rng, casts)
        v = draw(g.eval_distr(g.distr(rid)), rng)
        intervene(rid, DSampledDelta(v), g)
        return VConst(v)

    def observe(self, rid: int, value: float | bool, g: SymState,
                rng: np.random.Generator, casts: CastLog) -> float:
        self.hoist(rid, g, rng, casts)
        w = score(g.eval_distr(g.distr(rid)), value)
        intervene(rid, DDelta(VConst(value)), g)
        return w

    def marginal_of(self, rid: int, g: SymState,
                    rng: np.random.Generator, casts: CastLog) -> Distr:
        c = g.realized_value(rid)
        if c is not None:
            return DDelta(c)
        self.hoist(rid, g, rng, casts)
        return g.eval_distr(g.distr(rid))

    def hoist(self, rid: int, g: SymState,
              rng: np.random.Generator, casts: CastLog) -> None:
        while True:
            try:
                self._hoist_helper(rid, [], g)
                return
            except SwapFailed as fail:
                self.value(fail.parent, g, rng, casts)
                g.refresh(fail.child)

    def _hoist_helper(self, cur: int, roots: list[int], g: SymState) -> None:
        parents = topo_sort(g.parents(cur), g)
        inner_roots = list(roots)
        for p in parents:
            if p not in roots:
                self._hoist_helper(p, inner_roots, g)
                inner_roots.append(p)
        for p in reversed(parents):
            if p not in roots:
                if not swap(p, cur, g):
                    raise SwapFailed(p, cur)
