"""Symbolic values: evaluation, densities, sampling, state invariants."""

import math

import numpy as np
import pytest
from scipy import integrate

from symppl.lang import Annotation
from symppl.sym import (
    DBernoulli,
    DBeta,
    DDelta,
    DInvGamma,
    DNormal,
    DSampledDelta,
    DStudentT,
    EvalError,
    SymState,
    VConst,
    VRV,
    add,
    cmp,
    div,
    draw,
    ite,
    mul,
    reachable,
    score,
    weak_eq,
)


def test_constant_folding():
    assert add(VConst(1.0), VConst(2.0)) == VConst(3.0)
    assert ite(cmp("<", VConst(1.0), VConst(2.0)), VConst(10.0), VRV(0)) == VConst(10.0)
    assert mul(VConst(0.0), VRV(3)) == VConst(0.0)
    with pytest.raises(EvalError):
        div(VConst(1.0), VConst(0.0))


def test_delta_substitution():
    g = SymState()
    x = g.fresh(Annotation.NONE, DSampledDelta(4.5))
    assert g.eval_value(add(VRV(x), VConst(1.0))) == VConst(5.5)


def test_eval_idempotent():
    g = SymState()
    x = g.fresh(Annotation.NONE, DNormal(VConst(0.0), VConst(1.0)))
    y = g.fresh(Annotation.NONE, DSampledDelta(2.0))
    e = add(mul(VRV(x), VConst(2.0)), VRV(y))
    once = g.eval_value(e)
    assert g.eval_value(once) == once


def test_fresh_rv_rejects_unknown_reference():
    g = SymState()
    with pytest.raises(EvalError):
        g.fresh(Annotation.NONE, DNormal(VRV(9), VConst(1.0)))


def test_fresh_ids_increase_and_acyclic():
    g = SymState()
    a = g.fresh(Annotation.NONE, DNormal(VConst(0.0), VConst(1.0)))
    b = g.fresh(Annotation.NONE, DNormal(VRV(a), VConst(1.0)))
    assert b > a
    g.check_acyclic()


def test_score_standard_gaussian():
    assert abs(score(DNormal(VConst(0.0), VConst(1.0)), 0.0) - math.log(1 / math.sqrt(2 * math.pi))) < 1e-12


def test_score_bernoulli_complement():
    assert abs(score(DBernoulli(VConst(0.25)), False) - math.log(0.75)) < 1e-12


def test_score_marginal_likelihood_value():
    # N(0,2) at 1: the marginal likelihood of observing 1 under N(0,1)+N(x,1)
    assert abs(math.exp(score(DNormal(VConst(0.0), VConst(2.0)), 1.0)) - 0.21969564473386122) < 1e-9


@pytest.mark.parametrize(
    "dist,lo,hi",
    [
        (DNormal(VConst(0.3), VConst(1.7)), -12.0, 13.0),
        (DInvGamma(VConst(3.0), VConst(2.0)), 1e-9, 120.0),
        (DBeta(VConst(2.5), VConst(1.5)), 1e-12, 1.0 - 1e-12),
        (DStudentT(VConst(0.5), VConst(5.0), VConst(1.2)), -220.0, 220.0),
    ],
)
def test_score_normalizes(dist, lo, hi):
    total, _ = integrate.quad(lambda x: math.exp(score(dist, x)), lo, hi, limit=400)
    assert abs(total - 1.0) < 1e-3


def test_draw_trivials():
    rng = np.random.default_rng(0)
    assert draw(DDelta(VConst(3.0)), rng) == 3.0
    assert draw(DBernoulli(VConst(1.0)), rng) is True


def test_draw_law_of_large_numbers():
    rng = np.random.default_rng(7)
    xs = [draw(DNormal(VConst(0.0), VConst(1.0)), rng) for _ in range(100000)]
    assert abs(float(np.mean(xs))) < 0.02


def test_reachable_and_weak_eq():
    g1 = SymState()
    a = g1.fresh(Annotation.NONE, DNormal(VConst(0.0), VConst(1.0)))
    b = g1.fresh(Annotation.NONE, DNormal(VRV(a), VConst(1.0)))
    assert reachable([b], g1) == {a, b}
    assert reachable([], g1) == set()
    g2 = g1.copy()
    assert weak_eq(g1, g2, VRV(b))
    # an unreachable extra does not break weak equivalence
    g2.fresh(Annotation.NONE, DNormal(VConst(5.0), VConst(1.0)))
    assert weak_eq(g1, g2, VRV(b))
    # a reachable difference does
    g3 = g1.copy()
    g3.set_distr(a, DNormal(VConst(9.0), VConst(1.0)))
    assert not weak_eq(g1, g3, VRV(b))
