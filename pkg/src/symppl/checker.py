"""Static well-formedness checks and annotation-plan enumeration."""

from __future__ import annotations

from .lang import (
    BUILTIN_ARITIES,
    DIST_ARITIES,
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
    EVar,
    Expr,
    FunDecl,
    Program,
    pattern_vars,
    walk,
)

INFIX_OPS = {"+", "-", "*", "/", "<", "<=", "=", "!="}

MAX_PLAN_SITES = 20


def check(program: Program) -> list[str]:
    """Return diagnostics for scoping, arity, and recursion problems.

    An empty list means the program is well-formed.
    """
    diags: list[str] = []
    fun_names: list[str] = []
    for f in program.functions:
        if f.name in fun_names:
            diags.append(f"duplicate function {f.name}")
        fun_names.append(f.name)

    def check_expr(e: Expr, scope: set[str], current: str | None) -> None:
        match e:
            case EConst(_):
                pass
            case EVar(name):
                if name not in scope and name != "data":
                    diags.append(f"unbound variable {name}")
            case ETuple(items) | EList(items):
                for x in items:
                    check_expr(x, scope, current)
            case EOp(op, args):
                if op in INFIX_OPS:
                    if len(args) != 2:
                        diags.append(f"operator {op} expects 2 arguments")
                elif op in BUILTIN_ARITIES:
                    if len(args) != BUILTIN_ARITIES[op]:
                        diags.append(f"operator {op} expects {BUILTIN_ARITIES[op]} argument(s)")
                else:
                    diags.append(f"unknown operator {op}")
                if op == "map":
                    fn = args[0]
                    if not (isinstance(fn, EVar) and fn.name in fun_names):
                        diags.append("map expects a declared function name")
                    for x in args[1:]:
                        check_expr(x, scope, current)
                else:
                    for x in args:
                        check_expr(x, scope, current)
            case ECall(func, arg):
                if func not in fun_names:
                    diags.append(f"unknown function {func}")
                elif current is not None and fun_names.index(func) >= fun_names.index(current):
                    diags.append(f"function {current} may not call {func} (no recursion)")
                check_expr(arg, scope, current)
            case EIf(c, t, o):
                check_expr(c, scope, current)
                check_expr(t, scope, current)
                check_expr(o, scope, current)
            case ELet(pat, bound, body):
                check_expr(bound, scope, current)
                check_expr(body, scope | set(pattern_vars(pat)), current)
            case ELetRV(_, name, dist, args, body):
                if len(args) != DIST_ARITIES[dist]:
                    diags.append(f"distribution {dist} expects {DIST_ARITIES[dist]} argument(s)")
                for x in args:
                    check_expr(x, scope, current)
                check_expr(body, scope | {name}, current)
            case EObserve(dist, args, value):
                if len(args) != DIST_ARITIES[dist]:
                    diags.append(f"distribution {dist} expects {DIST_ARITIES[dist]} argument(s)")
                for x in args:
                    check_expr(x, scope, current)
                check_expr(value, scope, current)
            case EResample():
                pass
            case EFold(func, lst, init):
                if func not in fun_names:
                    diags.append(f"unknown function {func}")
                elif current is not None and fun_names.index(func) >= fun_names.index(current):
                    diags.append(f"function {current} may not fold over {func} (no recursion)")
                check_expr(lst, scope, current)
                check_expr(init, scope, current)
            case _:
                diags.append(f"unhandled expression {e!r}")

    for f in program.functions:
        check_expr(f.body, set(pattern_vars(f.param)), f.name)
    check_expr(program.main, set(), None)
    return diags


def impure_functions(program: Program) -> set[str]:
    """Names of functions whose bodies observe or resample (transitively)."""
    impure: set[str] = set()
    for f in program.functions:  # declaration order; callees precede callers
        for e in walk(f.body):
            match e:
                case EObserve(_, _, _) | EResample():
                    impure.add(f.name)
                case ECall(func, _) | EFold(func, _, _):
                    if func in impure:
                        impure.add(f.name)
                case _:
                    pass
    return impure


def is_pure(e: Expr, impure: set[str]) -> bool:
    for x in walk(e):
        match x:
            case EObserve(_, _, _) | EResample():
                return False
            case ECall(func, _) | EFold(func, _, _):
                if func in impure:
                    return False
            case _:
                pass
    return True


def rv_sites(program: Program) -> list[ELetRV]:
    """Random-variable declaration sites in source order."""
    sites: list[ELetRV] = []
    for f in program.functions:
        for e in walk(f.body):
            if isinstance(e, ELetRV):
                sites.append(e)
    for e in walk(program.main):
        if isinstance(e, ELetRV):
            sites.append(e)
    return sorted(sites, key=lambda s: s.site)


def apply_plan(program: Program, plan: int) -> Program:
    """Overwrite every annotation according to a plan index.

    Sites are numbered in source order; the plan index read as a big-endian
    bit vector assigns SYMBOLIC to 0-bits and SAMPLE to 1-bits.
    """
    sites = rv_sites(program)
    k = len(sites)
    if not 0 <= plan < 2**k:
        raise ValueError(f"plan {plan} out of range for {k} sites")
    order = [s.site for s in sites]
    by_site = {
        site: Annotation.SAMPLE if (plan >> (k - 1 - j)) & 1 else Annotation.SYMBOLIC
        for j, site in enumerate(order)
    }

    def rewrite(e: Expr) -> Expr:
        match e:
            case ETuple(items):
                return ETuple(tuple(rewrite(x) for x in items))
            case EList(items):
                return EList(tuple(rewrite(x) for x in items))
            case EOp(op, args):
                return EOp(op, tuple(rewrite(x) for x in args))
            case ECall(func, arg):
                return ECall(func, rewrite(arg))
            case EIf(c, t, o):
                return EIf(rewrite(c), rewrite(t), rewrite(o))
            case ELet(pat, bound, body):
                return ELet(pat, rewrite(bound), rewrite(body))
            case ELetRV(_, name, dist, args, body, site):
                return ELetRV(by_site[site], name, dist, tuple(rewrite(x) for x in args),
                              rewrite(body), site=site)
            case EObserve(dist, args, value):
                return EObserve(dist, tuple(rewrite(x) for x in args), rewrite(value))
            case EFold(func, lst, init):
                return EFold(func, rewrite(lst), rewrite(init))
            case _:
                return e

    functions = tuple(FunDecl(f.name, f.param, rewrite(f.body)) for f in program.functions)
    return Program(functions, rewrite(program.main))


def plan_annotations(program: Program, plan: int) -> dict[str, Annotation]:
    """Annotation per site variable name for a plan index (diagnostics)."""
    sites = rv_sites(program)
    k = len(sites)
    return {
        s.name: Annotation.SAMPLE if (plan >> (k - 1 - j)) & 1 else Annotation.SYMBOLIC
        for j, s in enumerate(sites)
    }


def enumerate_plans(program: Program) -> list[Program]:
    """All 2^k overwritten-annotation variants of a program, by plan index."""
    k = len(rv_sites(program))
    if k > MAX_PLAN_SITES:
        raise ValueError(f"refusing to enumerate 2^{k} plans")
    return [apply_plan(program, plan) for plan in range(2**k)]
