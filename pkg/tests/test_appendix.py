import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dotk.appendix import (
    NAMES,
    corollary_factorizations,
    cubic_margins,
    dual_params,
    index_range,
    induction_coefficients,
    pn_equiv_margin,
    run_campaign,
    soi_bvar_residual,
    stratified_params,
)
from dotk.errors import DomainError

params_st = st.lists(st.floats(0.0, 1.0), min_size=1, max_size=8)


def test_soi_examples():
    assert soi_bvar_residual([0.37], 1, 1) == 0.0
    assert soi_bvar_residual([0.2, 0.6], -3, 2) == 0.0
    assert soi_bvar_residual([0.2, 0.6], 6, 1) == 0.0
    rng = np.random.default_rng(0)
    for _ in range(200):
        p = rng.uniform(0, 1, int(rng.integers(1, 9)))
        assert soi_bvar_residual(p).max() < 1e-12
    with pytest.raises(DomainError):
        soi_bvar_residual([0.5], 1, 0)


def test_cubic_margin_examples():
    cm = cubic_margins([0.5, 0.5])
    k1 = int(np.flatnonzero(cm.k == 1)[0])
    assert cm.C1[k1] == pytest.approx(0.03125, abs=1e-16)
    one = cubic_margins([0.3])
    for name in NAMES:
        assert getattr(one, name).min() >= 0
    assert np.array_equal(cm.k, index_range(2))


def test_duality():
    rng = np.random.default_rng(1)
    for _ in range(50):
        p = rng.uniform(0, 1, int(rng.integers(1, 8)))
        m = p.size
        a = cubic_margins(p)
        b = cubic_margins(dual_params(p))
        # the dual index of k is m - k, which reverses the symmetric index range
        assert np.allclose(a.C1bar, b.C1[::-1], atol=1e-16)
        assert np.allclose(a.C2bar, b.C2[::-1], atol=1e-16)
        assert np.allclose(a.C3bar, b.C3[::-1], atol=1e-16)
        assert a.k[0] + a.k[-1] == m


def test_pn_margin_examples():
    assert pn_equiv_margin([0.5, 0.5]).min() >= -1e-12
    assert pn_equiv_margin([0.8]).min() >= 0


def test_factorizations_examples():
    assert corollary_factorizations([0.3, 0.3, 0.3]).worst < 1e-12
    assert corollary_factorizations([1.0]).worst == 0.0


def test_doubled_first_factorization_fails():
    from dotk.appendix import _D, _Shift
    from dotk.distributions import convolve_bernoulli

    p = [0.3, 0.6, 0.45]
    s = _Shift(convolve_bernoulli(np.array(p)))
    cm = cubic_margins(p)
    gap = s(0) * s(1) - s(-1) * s(2)
    doubled = s(1) * cm.C2 - (2 * gap * _D(s) + s(2) * cm.C1)
    assert np.abs(doubled).max() > 1e-3
    assert np.allclose(doubled, -gap * _D(s), atol=1e-15)


def test_induction_examples():
    ex = induction_coefficients([0.5], 0.5)
    assert ex.residual < 1e-16
    assert np.allclose(ex.direct, cubic_margins([0.5, 0.5]).C1, atol=0)
    p = [0.2, 0.7, 0.4]
    ex0 = induction_coefficients(p, 0.0)
    assert np.array_equal(ex0.reassembled, ex0.c0)
    assert ex0.residual < 1e-16
    ex1 = induction_coefficients(p, 1.0)
    c1 = cubic_margins(p).C1
    # adding a certain unit shifts the sum by one: C1 moves one index right
    assert np.allclose(ex1.reassembled[1:], c1, atol=1e-16)
    assert ex1.reassembled[0] == 0.0
    with pytest.raises(DomainError):
        induction_coefficients(p, 1.5)


@settings(max_examples=60, deadline=None)
@given(params_st, st.floats(0.0, 1.0))
def test_induction_random(p, x):
    ex = induction_coefficients(p, x)
    assert ex.residual < 1e-11
    assert ex.min_coefficient >= -1e-11


@settings(max_examples=60, deadline=None)
@given(params_st)
def test_margins_nonnegative(p):
    cm = cubic_margins(p)
    for name in NAMES + ("pn_equiv",):
        assert getattr(cm, name).min() >= -1e-11, name
    assert corollary_factorizations(p).worst < 1e-11


def test_stratified_params_shape_and_range():
    p = stratified_params(np.random.default_rng(0), (100, 5))
    assert p.shape == (100, 5)
    assert p.min() >= 0 and p.max() <= 1


def test_campaign_reproducible_and_smoke():
    a = run_campaign(500, 6, seed=7)
    b = run_campaign(500, 6, seed=7)
    assert a.to_dict() == b.to_dict()
    assert a.passed()
    small = run_campaign(50, 1, seed=0)
    assert small.passed()
    assert min(small.min_margins.values()) >= 0
