import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dotk.distributions import BernoulliSystem, binomial_pmf, entropy, ulc_margins
from dotk.errors import ConditionsNotVerified, DegenerateSpeedError, DomainError, NotMonotoneError
from dotk.shepp_olkin import SheppOlkinInstance, random_monotone_instance, so_alpha, trimmed_grid
from dotk.transport import (
    DiscretePath,
    concavity_certificate,
    condition_report,
    decompose_constant_speed,
    delta_split,
    entropy_second_derivative,
    entropy_second_derivative_fd,
    glc_margins,
    h_from_alpha,
    h_tilde,
    mixture_g,
    second_order_residual,
    theta,
    transport_residual,
)

GRID = np.linspace(0.0, 1.0, 201)


def bernoulli_path(times=GRID):
    return DiscretePath.from_functions(
        times,
        lambda t: np.stack([1 - t, t], axis=-1),
        lambda t: np.stack([-np.ones_like(t), np.ones_like(t)], axis=-1),
        lambda t: np.zeros(np.shape(t) + (2,)),
        vectorized=True,
    )


def binomial_instance(n, p, q):
    return SheppOlkinInstance.from_system(BernoulliSystem.binomial(n, p, q))


def test_two_point_path():
    dec = decompose_constant_speed(bernoulli_path())
    assert dec.v == 1.0
    assert np.allclose(dec.g, 1.0, atol=1e-15)
    assert np.array_equal(dec.alpha, np.tile([0.0, 1.0], (GRID.size, 1)))
    assert dec.h.shape == (GRID.size, 0)


def test_path_validation():
    with pytest.raises(DomainError):
        DiscretePath([0.0, 0.5], [[0.5, 0.5], [0.6, 0.6]])
    with pytest.raises(DomainError):
        DiscretePath([0.5, 0.5], [[0.5, 0.5], [0.5, 0.5]])
    with pytest.raises(DomainError):
        DiscretePath([0.0, 1.0], [[1.0, 0.0]])


def test_constant_path_is_degenerate_and_flat():
    times = np.linspace(0, 1, 21)
    f = binomial_pmf(3, 0.4)
    path = DiscretePath.from_functions(times, lambda t: f, vectorized=False)
    with pytest.raises(DegenerateSpeedError):
        decompose_constant_speed(path)
    assert abs(entropy_second_derivative_fd(path, 0.5)) < 1e-9  # five-point roundoff at step 1e-3


@pytest.mark.parametrize("n", [1, 2, 3, 5, 8])
def test_binomial_decomposition(n):
    p, q = 0.15, 0.7
    inst = binomial_instance(n, p, q)
    path = inst.path(GRID)
    dec = decompose_constant_speed(path)
    assert abs(dec.v - n * (q - p)) < 1e-12
    k = np.arange(n + 1) / n
    assert np.abs(np.where(dec.valid, dec.alpha - k, 0)).max() < 1e-10
    pt = p + (q - p) * GRID
    expected = (n - 1) / n * binomial_pmf(max(n - 2, 0), pt) if n >= 2 else np.zeros((GRID.size, 0))
    assert np.abs(dec.h - expected).max(initial=0) < 1e-10
    rep = condition_report(dec, path)
    assert all(rep.verdicts.values())
    assert np.nanmax(np.abs(rep.glc), initial=0) < 1e-12


def test_h_from_alpha_binomial_direct():
    n, p = 5, 0.3
    f = binomial_pmf(n, p)
    h = h_from_alpha(f, np.arange(n + 1) / n, np.zeros(n + 1), 1.0)
    assert np.allclose(h, (n - 1) / n * binomial_pmf(n - 2, p), atol=1e-15)


def test_glc_reduces_to_ulc():
    inst = SheppOlkinInstance.from_params([0.1, 0.5, 0.8, 0.3], [0.1, 0.5, 0.8, 0.3])
    f = inst.pmf(0.0)
    n = 4
    assert np.allclose(glc_margins(f, np.arange(n + 1) / n), ulc_margins(f, n), atol=1e-16)
    assert np.abs(glc_margins(binomial_pmf(n, 0.2), np.arange(n + 1) / n)).max() < 1e-16


def test_h_tilde_examples():
    f = np.array([0.25, 0.5, 0.25])
    g = np.array([0.5, 0.5])
    ht, ok = h_tilde(f, g)
    assert ok.all()
    assert math.isclose(ht[0], 2 / 3, rel_tol=1e-14)
    h = h_from_alpha(f, np.array([0.0, 0.5, 1.0]), np.zeros(3), 1.0)
    assert ht[0] >= h[0]
    ht, ok = h_tilde([0.5, 0.0, 0.5], [0.5, 0.5])
    assert not ok.any() and np.isnan(ht).all()


def test_delta_split_sums_to_gap():
    rng = np.random.default_rng(3)
    f = rng.uniform(0.2, 1.0, 6)
    f /= f.sum()
    alpha = np.array([0.0, 0.4, 0.4, 0.4, 0.7, 1.0])
    dalpha = np.zeros(6)
    v = 1.3
    g = mixture_g(f, alpha)
    ht, ok = h_tilde(f, g)
    h = h_from_alpha(f, alpha, dalpha, v)
    spatial, temporal = delta_split(f, alpha, dalpha, v)
    gap = np.where(ok, ht - h - spatial - temporal, 0.0)
    assert np.abs(gap).max() < 1e-13
    assert abs(ht[1] - h[1]) < 1e-14


def test_theta_bounds_minus_log():
    x = np.linspace(1e-6, 1.0, 10001)
    assert np.all(-np.log(x) <= theta(x) + 1e-15)
    assert theta(1.0) == 0.0


def test_binomial_entropy_concave_and_certificate():
    inst = binomial_instance(2, 0.0, 1.0)
    times = np.linspace(0.0, 1.0, 201)
    path = inst.path(times)
    dec = decompose_constant_speed(path)
    j = 100
    h2 = entropy_second_derivative(path, dec, 0.5)
    assert h2 < 0
    assert abs(h2 - entropy_second_derivative_fd(path, 0.5)) < 1e-6
    cert = concavity_certificate(path.pmfs[j], dec.g[j], dec.h[j], dec.v, dec.alpha[j])
    assert cert.bound <= 0
    assert cert.bound >= h2 - 1e-8


def test_certificate_refuses_unverified_conditions():
    f = np.array([0.25, 0.5, 0.25])
    g = np.array([0.5, 0.5])
    with pytest.raises(ConditionsNotVerified):
        concavity_certificate(f, g, np.array([0.5]), 1.0, alpha=np.array([0.0, 0.9, 0.8]))
    with pytest.raises(ConditionsNotVerified):
        concavity_certificate(f, g, np.array([10.0]), 1.0)
    with pytest.raises(ConditionsNotVerified):
        concavity_certificate(np.array([0.5, 0.0, 0.5]), g, np.array([0.5]), 1.0)


def test_shepp_olkin_route_agreement_and_residuals():
    rng = np.random.default_rng(11)
    for _ in range(20):
        inst = random_monotone_instance(rng, n_max=8)
        times = trimmed_grid(inst, 101)
        path = inst.path(times)
        dec = decompose_constant_speed(path)
        a, valid = so_alpha(inst, times)
        ok = valid & dec.valid
        assert np.abs(np.where(ok, dec.alpha - a, 0)).max() < 1e-9
        assert np.abs(dec.g.sum(axis=1) - 1).max() < 1e-12
        assert transport_residual(path, dec).max() < 1e-9
        assert second_order_residual(path, dec).max() < 1e-8
        rep = condition_report(dec, path)
        v = rep.verdicts
        assert v["kmon"] and v["glc"] and v["delta"] and v["concave"]


def test_closed_form_second_derivative_matches_differences():
    inst = SheppOlkinInstance.from_params([0.1, 0.3, 0.2], [0.6, 0.4, 0.9])
    t, s = 0.4, 1e-4
    fd = (inst.pmf(t + s) - 2 * inst.pmf(t) + inst.pmf(t - s)) / s**2
    assert np.abs(fd - inst.d2fdt2(t)).max() < 1e-6


def test_remainder_identity_on_random_instances():
    rng = np.random.default_rng(5)
    worst = 0.0
    for _ in range(100):
        inst = random_monotone_instance(rng, n_max=10)
        t = float(rng.uniform(0.05, 0.95))
        times = np.array([t - 1e-3, t, t + 1e-3])
        path = inst.path(times)
        dec = decompose_constant_speed(path)
        cert = concavity_certificate(path.pmfs[1], dec.g[1], dec.h[1], dec.v, dec.alpha[1])
        worst = max(worst, cert.remainder_residual, cert.identity_residual)
        assert cert.bound >= entropy_second_derivative(path, dec, 1) - 1e-8
        assert np.all(cert.log_terms <= cert.theta_terms + 1e-10)
    assert worst < 1e-10


def test_non_monotone_system_is_flagged():
    rng = np.random.default_rng(2)
    flagged = 0
    for _ in range(200):
        n = int(rng.integers(2, 6))
        a, b = rng.uniform(0.05, 0.95, (2, n))
        inst = SheppOlkinInstance.from_params(a, b)
        if inst.monotone or abs(inst.v) < 1e-3:
            continue
        try:
            dec = decompose_constant_speed(inst.path(np.linspace(0, 1, 51)))
        except NotMonotoneError:
            flagged += 1
            continue
        if dec.alpha_violations:
            flagged += 1
    assert flagged > 0


def test_reversed_path_has_mirrored_alpha():
    inst = SheppOlkinInstance.from_params([0.2, 0.4], [0.6, 0.5])
    path = inst.path(np.linspace(0, 1, 51))
    back = path.reversed()
    assert np.allclose(back.pmfs, path.pmfs[::-1])
    assert np.allclose(entropy(back.pmfs), entropy(path.pmfs)[::-1])


@settings(max_examples=25, deadline=None)
@given(st.integers(2, 7), st.floats(0.02, 0.45), st.floats(0.55, 0.98))
def test_binomial_alpha_is_linear_in_k(n, p, q):
    inst = binomial_instance(n, p, q)
    dec = decompose_constant_speed(inst.path(np.linspace(0, 1, 11)))
    assert np.abs(dec.alpha - np.arange(n + 1) / n).max() < 1e-10
