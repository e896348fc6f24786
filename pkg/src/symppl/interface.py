"""The backend contract shared by the inference algorithms.

A backend provides ``assume``/``observe``/``value``; the particle runtime is
written against this interface only.  ``value_star`` forces an expression to
a constant; ``distribution`` extracts per-output marginals at termination.
"""

from __future__ import annotations

from typing import Protocol

import numpy as np

from .lang import Annotation
from .sym import (
    DDelta,
    Distr,
    EvalError,
    SymState,
    Val,
    VConst,
    VLst,
    VRV,
    VTup,
    free_rvs,
)


class CastError(Exception):
    """A symbolic-annotated variable had to be sampled under strict mode."""


class CastLog:
    """Append-only record of dynamic encoding casts within a particle."""

    __slots__ = ("events", "strict")

    def __init__(self, strict: bool = False):
        self.events: list[tuple[int, str]] = []
        self.strict = strict

    def record(self, rid: int, label: str) -> None:
        if self.strict:
            raise CastError(f"unsatisfiable annotation on {label or rid}")
        self.events.append((rid, label))

    def __len__(self) -> int:
        return len(self.events)


class Backend(Protocol):
    name: str

    def assume(self, ann: Annotation, dist: Distr, g: SymState,
               rng: np.random.Generator, casts: CastLog, label: str = "") -> int: ...

    def observe(self, rid: int, value: float | bool, g: SymState,
                rng: np.random.Generator, casts: CastLog) -> float: ...

    def value(self, rid: int, g: SymState,
              rng: np.random.Generator, casts: CastLog) -> VConst: ...

    def marginal_of(self, rid: int, g: SymState,
                    rng: np.random.Generator, casts: CastLog) -> Distr: ...


def value_star(v: Val, g: SymState, backend: Backend,
               rng: np.random.Generator, casts: CastLog) -> VConst:
    """Force every random variable in ``v`` (ascending id), then fold."""
    e = g.eval_value(v)
    for rid in sorted(free_rvs(e)):
        backend.value(rid, g, rng, casts)
    e = g.eval_value(e)
    if not isinstance(e, VConst):
        raise EvalError(f"expression did not reduce to a constant: {e}")
    return e


def distribution(v: Val, g: SymState, backend: Backend,
                 rng: np.random.Generator, casts: CastLog):
    """Distribution of a terminated particle's output value.

    Returns a tree mirroring the value: tuples/lists of ``Distr``.  Any
    sampling needed to extract output marginals is recorded in ``casts``,
    which callers keep separate from the semantic cast log.
    """
    match v:
        case VConst(_):
            return DDelta(v)
        case VTup(items):
            return tuple(distribution(x, g, backend, rng, casts) for x in items)
        case VLst(items):
            return [distribution(x, g, backend, rng, casts) for x in items]
        case VRV(rid):
            return backend.marginal_of(rid, g, rng, casts)
        case _:
            c = value_star(v, g, backend, rng, casts)
            return DDelta(c)
