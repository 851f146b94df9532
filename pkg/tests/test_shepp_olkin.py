import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dotk.appendix import cubic_margins
from dotk.distributions import BernoulliSystem, binomial_pmf
from dotk.errors import DegenerateSpeedError, NotMonotoneError
from dotk.shepp_olkin import (
    SheppOlkinInstance,
    delta_quadratic_residual,
    gaussian_proxy_entropy,
    glc_pairwise,
    h_consistency,
    random_monotone_instance,
    so_alpha,
    so_decomposition,
    so_delta_certificate,
    so_g,
    so_h,
    so_pair_terms,
    trimmed_grid,
)
from dotk.transport import glc_margins

T = np.linspace(0.0, 1.0, 41)


def test_alpha_single_parameter():
    inst = SheppOlkinInstance.from_params([0.0], [1.0])
    a, valid = so_alpha(inst, 0.5)
    assert np.array_equal(a, [0.0, 1.0]) and valid.all()


def test_alpha_one_moving_one_fixed():
    inst = SheppOlkinInstance.from_params([0.0, 0.5], [1.0, 0.5])
    a, valid = so_alpha(inst, T)
    ok = valid[:, 1]
    assert np.abs(a[ok, 1] - T[ok]).max() < 1e-15


def test_alpha_symmetric_is_k_over_n():
    inst = SheppOlkinInstance.from_system(BernoulliSystem.binomial(6, 0.1, 0.8))
    a, _ = so_alpha(inst, T)
    assert np.abs(a - np.arange(7) / 6).max() < 1e-14


def test_g_examples():
    inst = SheppOlkinInstance.from_params([0.0, 0.0], [1.0, 1.0])
    assert np.allclose(so_g(inst, T), np.stack([1 - T, T], axis=1), atol=1e-15)
    one = SheppOlkinInstance.from_params([0.2], [0.9])
    assert np.array_equal(so_g(one, T), np.ones((T.size, 1)))


def test_h_examples():
    # h is normalized so that d2f/dt2 = v^2 grad_2 h; bin(2, t) gives 1/2
    inst = SheppOlkinInstance.from_params([0.0, 0.0], [1.0, 1.0])
    assert np.allclose(so_h(inst, T), 0.5, atol=1e-15)
    sym = SheppOlkinInstance.from_system(BernoulliSystem.binomial(7, 0.2, 0.6))
    p = 0.2 + 0.4 * T
    assert np.abs(so_h(sym, T) - 6 / 7 * binomial_pmf(5, p)).max() < 1e-15


def test_transport_and_second_order_residuals():
    rng = np.random.default_rng(8)
    for _ in range(20):
        inst = random_monotone_instance(rng, n_max=9)
        g = np.pad(so_g(inst, T), [(0, 0), (1, 1)])
        assert np.abs(inst.dfdt(T) + inst.v * np.diff(g, axis=1)).max() < 1e-10
        h = np.pad(so_h(inst, T), [(0, 0), (2, 2)])
        lap = h[:, 2:] - 2 * h[:, 1:-1] + h[:, :-2]
        s = 1e-4
        tt = np.clip(T, 2 * s, 1 - 2 * s)
        fd = (inst.pmf(tt + s) - 2 * inst.pmf(tt) + inst.pmf(tt - s)) / s**2
        hh = np.pad(so_h(inst, tt), [(0, 0), (2, 2)])
        lap_t = hh[:, 2:] - 2 * hh[:, 1:-1] + hh[:, :-2]
        assert np.abs(fd - inst.v**2 * lap_t).max() < 1e-5
        assert np.abs(inst.d2fdt2(T) - inst.v**2 * lap).max() < 1e-8


def test_decomposition_consistency():
    rng = np.random.default_rng(9)
    for _ in range(20):
        inst = random_monotone_instance(rng)
        times = trimmed_grid(inst, 101)
        dec = so_decomposition(inst, times)
        assert h_consistency(inst, dec) < 1e-12
        assert dec.mean_speed_error < 1e-12
        assert dec.alpha_violations == 0
        f = inst.pmf(times)
        glc = glc_margins(f, dec.alpha)
        assert np.abs(glc - glc_pairwise(inst, times)).max() < 1e-15
        assert glc_pairwise(inst, times).min() >= 0


def test_pair_terms_n2():
    inst = SheppOlkinInstance.from_params([0.1, 0.3], [0.4, 0.9])
    terms = so_pair_terms(inst, T)
    assert terms.b.shape == (T.size, 2, 2, 1)
    p = inst.params(T)
    expected = p[:, 0] * (1 - p[:, 1]) + p[:, 1] * (1 - p[:, 0])
    assert np.allclose(terms.b[:, 0, 1, 0], expected, atol=1e-15)
    assert terms.b[:, 0, 1, 0].min() >= 0
    assert np.array_equal(terms.c[:, 0, 1, 0], np.full(T.size, -1.0))


def test_pair_form_reconstruction():
    rng = np.random.default_rng(4)
    for _ in range(30):
        inst = random_monotone_instance(rng, n_max=10)
        assert delta_quadratic_residual(inst, T) < 1e-10


def test_b_with_equal_parameters_splits_into_appendix_cubics():
    q = 0.35
    others = [0.2, 0.6, 0.75]
    inst = SheppOlkinInstance.from_params([q, q] + others, [q + 0.1, q + 0.1] + others)
    t = 0.0
    terms = so_pair_terms(inst, t)
    cm = cubic_margins(others)
    pos = {int(k): i for i, k in enumerate(cm.k)}
    idx = [pos[int(k)] for k in terms.k]
    C1, C1b, C3, C3b = (getattr(cm, name)[idx] for name in ("C1", "C1bar", "C3", "C3bar"))
    for c in (C1, C1b, C3, C3b):
        assert c.min() >= -1e-15
    expected = 0.5 * (q * q * C1 + (1 - q) ** 2 * C1b + q * (1 - q) * (C3 + C3b))
    assert np.allclose(terms.b[0, 1], expected, atol=1e-15)


def test_delta_certificate_on_random_instances():
    rng = np.random.default_rng(12)
    for _ in range(40):
        inst = random_monotone_instance(rng, n_max=10)
        cert = so_delta_certificate(inst, trimmed_grid(inst, 51))
        assert cert.verdict
        assert cert.b_min >= -1e-11
        assert cert.discriminant_max <= 1e-10
        assert cert.eq72_min >= -1e-11


def test_delta_certificate_sentinels_and_guards():
    cert = so_delta_certificate(SheppOlkinInstance.from_params([0.2], [0.7]), T)
    assert cert.verdict and cert.b_min == math.inf and cert.discriminant_max == -math.inf
    with pytest.raises(NotMonotoneError):
        so_delta_certificate(SheppOlkinInstance.from_params([0.5, 0.2], [0.1, 0.3]), T)
    with pytest.raises(DegenerateSpeedError):
        so_alpha(SheppOlkinInstance.from_params([0.5, 0.2], [0.5, 0.2]), T)


def test_equal_parameters_pass_discriminant():
    inst = SheppOlkinInstance.from_system(BernoulliSystem.binomial(4, 0.3, 0.5))
    cert = so_delta_certificate(inst, T)
    assert cert.verdict and cert.negative_c > 0


def test_gaussian_proxy():
    H, H2 = gaussian_proxy_entropy(BernoulliSystem.constant([0.3, 0.6]), T)
    assert np.abs(H2).max() == 0.0
    _, H2 = gaussian_proxy_entropy(BernoulliSystem([0.0], [1.0]), 0.5)
    assert abs(H2 + 4) < 1e-10
    rng = np.random.default_rng(0)
    for _ in range(50):
        inst = random_monotone_instance(rng)
        assert gaussian_proxy_entropy(inst.system, T)[1].max() <= 0


def test_deterministic_parameters_are_stripped():
    inst = SheppOlkinInstance.from_params([1.0, 0.2, 0.0], [1.0, 0.5, 0.0])
    assert inst.n == 1 and inst.offset == 1
    assert inst.to_dict()["p_start"] == [1.0, 0.2, 0.0]


def test_trimmed_grid_drops_boundary_times():
    inst = SheppOlkinInstance.from_params([0.0, 0.3], [0.5, 1.0])
    t = trimmed_grid(inst, 11)
    assert t[0] == pytest.approx(0.2) and t[-1] == pytest.approx(0.8)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_monotone_instances_satisfy_kmon_glc_delta(seed):
    inst = random_monotone_instance(np.random.default_rng(seed), n_max=7)
    times = trimmed_grid(inst, 21)
    dec = so_decomposition(inst, times)
    a = np.where(dec.valid, dec.alpha, np.nan)
    assert np.nanmin(np.diff(a, axis=1), initial=np.inf) >= -1e-11
    assert glc_pairwise(inst, times).min(initial=0) >= -1e-11
    assert so_delta_certificate(inst, times).verdict
