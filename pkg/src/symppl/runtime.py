"""Particle evaluation with resample checkpoints, particle sets, mixtures.

Evaluation is substitution-based and follows big-step rules: a particle
runs until it terminates with a value or pauses at a ``resample`` with a
residual expression.  Sequencing positions (``let`` bodies, fold steps) are
iterated rather than recursed so long folds do not grow the Python stack.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .checker import impure_functions, is_pure
from .interface import Backend, CastLog, distribution, value_star
from .lang import (
    Annotation,
    ECall,
    EConst,
    EFold,
    EIf,
    EList,
    ELet,
    ELetRV,
    EObserve,
    EOp,
    EResample,
    ETuple,
    EVal,
    EVar,
    Expr,
    Pattern,
    Program,
    PTuple,
    PUnit,
    PVar,
    PWild,
    pattern_vars,
)
from .sym import (
    Distr,
    EvalError,
    SymState,
    VConst,
    VLst,
    VRV,
    VTup,
    Val,
    add,
    cmp,
    div,
    ite,
    make_dist,
    moments,
    mul,
    sub,
)


class DegenerateWeights(Exception):
    """Every particle's weight collapsed to zero."""


def subst(e: Expr, bindings: dict[str, Val]) -> Expr:
    if not bindings:
        return e
    match e:
        case EVar(name):
            return EVal(bindings[name]) if name in bindings else e
        case EConst(_) | EVal(_) | EResample():
            return e
        case ETuple(items):
            return ETuple(tuple(subst(x, bindings) for x in items))
        case EList(items):
            return EList(tuple(subst(x, bindings) for x in items))
        case EOp(op, args):
            return EOp(op, tuple(subst(x, bindings) for x in args))
        case ECall(f, arg):
            return ECall(f, subst(arg, bindings))
        case EIf(c, t, o):
            return EIf(subst(c, bindings), subst(t, bindings), subst(o, bindings))
        case ELet(pat, bound, body):
            inner = {k: v for k, v in bindings.items() if k not in pattern_vars(pat)}
            return ELet(pat, subst(bound, bindings), subst(body, inner))
        case ELetRV(ann, name, dist, args, body, site):
            inner = {k: v for k, v in bindings.items() if k != name}
            return ELetRV(ann, name, dist, tuple(subst(x, bindings) for x in args),
                          subst(body, inner), site=site)
        case EObserve(dist, args, value):
            return EObserve(dist, tuple(subst(x, bindings) for x in args), subst(value, bindings))
        case EFold(f, lst, init):
            return EFold(f, subst(lst, bindings), subst(init, bindings))
    raise TypeError(e)


def match_pattern(pat: Pattern, v: Val) -> dict[str, Val]:
    match pat:
        case PVar(name):
            return {name: v}
        case PWild() | PUnit():
            return {}
        case PTuple(items):
            if not isinstance(v, VTup) or len(v.items) != len(items):
                raise EvalError(f"pattern arity mismatch: {pat} vs {v}")
            out: dict[str, Val] = {}
            for q, x in zip(items, v.items):
                out.update(match_pattern(q, x))
            return out
    raise TypeError(pat)


@dataclass
class Particle:
    cont: Expr
    state: SymState
    logw: float
    flag: bool
    casts: CastLog
    rng: np.random.Generator
    checkpoint: int | None = None  # site of the resample that paused us
    value: Val | None = None

    def copy_for_resample(self, rng: np.random.Generator) -> "Particle":
        casts = CastLog(self.casts.strict)
        casts.events = list(self.casts.events)
        return Particle(self.cont, self.state.copy(), 0.0, False, casts, rng,
                        self.checkpoint, self.value)


class Evaluator:
    """Evaluates particles of one program under one backend."""

    def __init__(self, program: Program, backend: Backend):
        self.program = program
        self.backend = backend
        self.impure = impure_functions(program)
        self._fresh = 0

    # --- helpers ---

    def _fresh_name(self) -> str:
        self._fresh += 1
        return f"__t{self._fresh}"

    def _eval_op(self, op: str, args: list[Val], p: Particle) -> Val:
        g = p.state
        a = [g.eval_value(x) for x in args]
        match op:
            case "+":
                return add(a[0], a[1])
            case "-":
                return sub(a[0], a[1])
            case "*":
                return mul(a[0], a[1])
            case "/":
                return div(a[0], a[1])
            case "=" | "!=" | "<" | "<=":
                return cmp(op, a[0], a[1])
            case "not":
                return ite(a[0], VConst(False), VConst(True))
            case "cons":
                if not isinstance(a[1], VLst):
                    raise EvalError("cons onto a non-list")
                return VLst((a[0],) + a[1].items)
            case "hd":
                if not isinstance(a[0], VLst) or not a[0].items:
                    raise EvalError("hd of an empty or non-list value")
                return a[0].items[0]
            case "tl":
                if not isinstance(a[0], VLst) or not a[0].items:
                    raise EvalError("tl of an empty or non-list value")
                return VLst(a[0].items[1:])
            case "rev":
                if not isinstance(a[0], VLst):
                    raise EvalError("rev of a non-list value")
                return VLst(tuple(reversed(a[0].items)))
            case "len":
                if not isinstance(a[0], VLst):
                    raise EvalError("len of a non-list value")
                return VConst(float(len(a[0].items)))
            case "range":
                lo, hi = a[0], a[1]
                if not (isinstance(lo, VConst) and isinstance(hi, VConst)):
                    raise EvalError("range bounds must be constants")
                return VLst(tuple(VConst(float(i)) for i in range(int(lo.v), int(hi.v))))
        raise EvalError(f"unknown operator {op}")

    def _apply_map(self, fname: str, lst: Val, p: Particle) -> Val:
        if not isinstance(lst, VLst):
            raise EvalError("map over a non-list value")
        out = []
        for el in lst.items:
            r, interrupted = self._run(ECall(fname, EVal(el)), p)
            if interrupted:
                raise EvalError("resample inside map is not supported")
            out.append(r)
        return VLst(tuple(out))

    # --- particle evaluation ---

    def eval_particle(self, p: Particle) -> None:
        """Run until the next checkpoint or termination."""
        if p.flag:
            raise EvalError("particle already paused")
        r, interrupted = self._run(p.cont, p)
        if interrupted:
            p.cont = r
            p.flag = True
        else:
            p.value = r
            p.cont = EVal(r)
            p.flag = False

    def _run(self, e: Expr, p: Particle):
        """Returns ``(value, False)`` or ``(residual_expr, True)``."""
        while True:
            match e:
                case EVal(v):
                    return v, False
                case EConst(c):
                    return VConst(c), False
                case EVar(name):
                    raise EvalError(f"unbound variable {name}")
                case ETuple(items):
                    vals = []
                    for x in items:
                        v, interrupted = self._run(x, p)
                        if interrupted:
                            raise EvalError("resample in tuple position")
                        vals.append(v)
                    return VTup(tuple(vals)), False
                case EList(items):
                    vals = []
                    for x in items:
                        v, _ = self._run(x, p)
                        vals.append(v)
                    return VLst(tuple(vals)), False
                case EOp("map", (EVar(fname), lst_e)):
                    lst, _ = self._run(lst_e, p)
                    return self._apply_map(fname, lst, p), False
                case EOp(op, args):
                    vals = []
                    for x in args:
                        v, _ = self._run(x, p)
                        vals.append(v)
                    return self._eval_op(op, vals, p), False
                case ECall(fname, arg):
                    v, _ = self._run(arg, p)
                    f = self.program.function(fname)
                    e = subst(f.body, match_pattern(f.param, v))
                case EIf(ce, te, oe):
                    cv, _ = self._run(ce, p)
                    cv = p.state.eval_value(cv)
                    if not isinstance(cv, VConst) and is_pure(te, self.impure) and is_pure(oe, self.impure):
                        tv, _ = self._run(te, p)
                        ov, _ = self._run(oe, p)
                        return ite(cv, tv, ov), False
                    c = value_star(cv, p.state, self.backend, p.rng, p.casts)
                    e = te if c.v else oe
                case ELet(pat, bound, body):
                    r, interrupted = self._run(bound, p)
                    if interrupted:
                        return ELet(pat, r, body), True
                    e = subst(body, match_pattern(pat, r))
                case ELetRV(ann, name, dist, args, body):
                    argv = []
                    for x in args:
                        v, _ = self._run(x, p)
                        argv.append(p.state.eval_value(v))
                    d = make_dist(dist, tuple(argv))
                    rid = self.backend.assume(ann, d, p.state, p.rng, p.casts, label=name)
                    if ann is Annotation.SAMPLE:
                        bound_v: Val = self.backend.value(rid, p.state, p.rng, p.casts)
                    else:
                        bound_v = VRV(rid)
                    e = subst(body, {name: bound_v})
                case EObserve(dist, args, value_e):
                    argv = []
                    for x in args:
                        v, _ = self._run(x, p)
                        argv.append(p.state.eval_value(v))
                    d = make_dist(dist, tuple(argv))
                    rid = self.backend.assume(Annotation.NONE, d, p.state, p.rng, p.casts,
                                              label="obs")
                    ve, _ = self._run(value_e, p)
                    c = value_star(ve, p.state, self.backend, p.rng, p.casts)
                    w = self.backend.observe(rid, c.v, p.state, p.rng, p.casts)
                    p.logw += w
                    return VConst(None), False
                case EResample(site):
                    p.checkpoint = site
                    return EVal(VConst(None)), True
                case EFold(fname, lst_e, init_e):
                    lst, _ = self._run(lst_e, p)
                    lst = p.state.eval_value(lst)
                    init, interrupted = self._run(init_e, p)
                    if interrupted:
                        raise EvalError("resample in fold initializer")
                    if not isinstance(lst, VLst):
                        raise EvalError("fold over a non-list value")
                    if not lst.items:
                        return init, False
                    acc = self._fresh_name()
                    e = ELet(
                        PVar(acc),
                        ECall(fname, ETuple((EVal(lst.items[0]), EVal(init)))),
                        EFold(fname, EVal(VLst(lst.items[1:])), EVar(acc)),
                    )
                case _:
                    raise TypeError(e)


@dataclass
class Mixture:
    """Normalized per-particle output distributions."""

    components: list[tuple[float, object]]  # (weight, tree of Distr)
    casts: list[tuple[int, str]]  # semantic casts, aggregated over particles
    output_casts: int  # forcing performed only to extract output marginals


def _normalized(logws: list[float]) -> list[float]:
    m = max(logws)
    if m == -math.inf:
        raise DegenerateWeights("all particle weights are zero")
    ws = [math.exp(w - m) for w in logws]
    total = sum(ws)
    return [w / total for w in ws]


def _particle_rng(seed: int, round_idx: int, i: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=(round_idx, i))))


def run_model(program: Program, n_particles: int, seed: int, backend: Backend,
              data: Val, strict_casts: bool = False, max_rounds: int = 100000) -> Mixture:
    """Evaluate ``main`` with ``n_particles`` independent particles.

    Deterministic for a fixed ``(program, n_particles, seed, backend)``.
    """
    from .sym import reset_intern

    reset_intern()
    ev = Evaluator(program, backend)
    main = subst(program.main, {"data": data})
    particles = [
        Particle(main, SymState(), 0.0, False, CastLog(strict_casts), _particle_rng(seed, 0, i))
        for i in range(n_particles)
    ]
    for round_idx in range(max_rounds):
        for p in particles:
            if not p.flag and p.value is None:
                ev.eval_particle(p)
        if not any(p.flag for p in particles):
            break
        sites = {p.checkpoint for p in particles if p.flag}
        if len(sites) > 1:
            raise EvalError(f"particles paused at different checkpoints: {sites}")
        probs = _normalized([p.logw for p in particles])
        rng = _particle_rng(seed, round_idx, n_particles)
        counts = rng.multinomial(n_particles, probs)
        fresh: list[Particle] = []
        for i, (p, c) in enumerate(zip(particles, counts)):
            for _ in range(c):
                child = p.copy_for_resample(_particle_rng(seed, round_idx + 1, len(fresh)))
                child.flag = False
                if child.value is not None:
                    child.cont = EVal(child.value)
                fresh.append(child)
        particles = fresh
        for p in particles:
            if not isinstance(p.cont, EVal):
                p.value = None
    else:
        raise EvalError("model did not terminate within the round limit")

    probs = _normalized([p.logw for p in particles])
    components = []
    casts: list[tuple[int, str]] = []
    out_casts = 0
    for w, p in zip(probs, particles):
        out_log = CastLog()
        tree = distribution(p.value, p.state, backend, p.rng, out_log)
        components.append((w, tree))
        casts.extend(p.casts.events)
        out_casts += len(out_log)
    return Mixture(components, casts, out_casts)


def total_log_weight(program: Program, seed: int, backend: Backend, data: Val) -> float:
    """Accumulated log-weight of a single particle run to termination.

    Only meaningful for programs without resampling (or one particle):
    resampling resets weights.
    """
    ev = Evaluator(program, backend)
    main = subst(program.main, {"data": data})
    p = Particle(main, SymState(), 0.0, False, CastLog(), _particle_rng(seed, 0, 0))
    total = 0.0
    for _ in range(100000):
        ev.eval_particle(p)
        total += p.logw
        if not p.flag:
            return total
        p.logw = 0.0
        p.flag = False
    raise EvalError("model did not terminate")


def mixture_moments(components: list[tuple[float, Distr]]) -> tuple[float, float]:
    """Mixture mean and variance by the law of total variance."""
    mean = 0.0
    second = 0.0
    for w, d in components:
        m, v = moments(d)
        mean += w * m
        second += w * (v + m * m)
    return mean, second - mean * mean


def select_output(tree, path: tuple):
    """Navigate a distribution tree by tuple/list indices."""
    node = tree
    for key in path:
        node = node[key]
    return node


def posterior_stats(mix: Mixture, path: tuple) -> tuple[float, float]:
    """Posterior mean/variance of one numeric output across the mixture."""
    picked = [(w, select_output(tree, path)) for w, tree in mix.components]
    return mixture_moments(picked)
