"""The ten acceptance criteria, each at its stated tolerance and time budget.

Every test prints one PASS/FAIL line; the lines are repeated in the pytest
terminal summary.  Run alone with ``pytest tests/test_acceptance.py -v``.
"""

import time

import numpy as np
import pytest

from dotk.appendix import run_campaign
from dotk.benamou_brenier import (
    OptimizerConfig,
    alt_metric_two_point,
    maas_integrand,
    minimize_action,
    vn_lower_bound,
    w1_distance,
)
from dotk.distributions import BernoulliSystem, binomial_pmf, convolve_bernoulli
from dotk.report import DEFAULT_TOL, run_so_corpus, tmon_search, translate_report
from dotk.shepp_olkin import SheppOlkinInstance, gaussian_proxy_entropy
from dotk.transport import condition_report, decompose_constant_speed

CORPUS_SIZE = 1000
CORPUS_SEED = 20240601
SEARCH_SEED = 0
APPENDIX_SEED = 0
GRID = 201


@pytest.fixture(scope="module")
def corpus():
    start = time.perf_counter()
    result = run_so_corpus(CORPUS_SIZE, seed=CORPUS_SEED, n_max=12, grid=GRID, tol=DEFAULT_TOL)
    result["elapsed"] = time.perf_counter() - start
    return result


def test_01_binomial_interpolation(verdict):
    start = time.perf_counter()
    times = np.linspace(0.0, 1.0, GRID)
    worst_v = worst_alpha = worst_glc = 0.0
    h2_max = -np.inf
    for p, q in ((0.1, 0.9), (0.35, 0.45), (0.0, 1.0)):
        for n in range(1, 21):
            inst = SheppOlkinInstance.from_system(BernoulliSystem.binomial(n, p, q))
            path = inst.path(times)
            dec = decompose_constant_speed(path)
            worst_v = max(worst_v, abs(dec.v - n * (q - p)))
            k = np.arange(n + 1) / n
            worst_alpha = max(worst_alpha, float(np.abs(np.where(dec.valid, dec.alpha - k, 0.0)).max()))
            rep = condition_report(dec, path)
            worst_glc = max(worst_glc, float(np.nanmax(np.abs(rep.glc), initial=0.0)))
            h2_max = max(h2_max, rep.h2_max)
    elapsed = time.perf_counter() - start
    ok = worst_v <= 1e-12 and worst_alpha <= 1e-10 and worst_glc <= 1e-12 and h2_max <= 0 and elapsed < 5
    detail = (
        f"|v-n(q-p)|={worst_v:.2e} |alpha-k/n|={worst_alpha:.2e} |GLC|={worst_glc:.2e} "
        f"max H''={h2_max:.3e} time={elapsed:.2f}s"
    )
    assert verdict(1, "binomial interpolation", ok, detail)


def test_02_monotone_shepp_olkin(verdict, corpus):
    s = corpus["summary"]
    ok = (
        s["kmon_min"] >= -1e-11
        and s["glc_min"] >= -1e-11
        and s["delta_min"] >= -1e-10
        and s["h2_agreement_excess"] <= 0
        and s["h2_max"] <= 1e-8
        and corpus["elapsed"] < 120
    )
    detail = (
        f"{corpus['count']} instances: kMON min={s['kmon_min']:.2e} GLC min={s['glc_min']:.2e} "
        f"Delta min={s['delta_min']:.2e} H'' agreement excess={s['h2_agreement_excess']:.2e} "
        f"max H''={s['h2_max']:.3e} time={corpus['elapsed']:.1f}s"
    )
    assert verdict(2, "monotone Shepp-Olkin conditions", ok, detail)


def test_03_pair_certificate(verdict, corpus):
    s = corpus["summary"]
    ok = s["b_min"] >= -1e-11 and s["discriminant_max"] <= 1e-10 and s["eq72_min"] >= -1e-11
    detail = f"b min={s['b_min']:.2e} discriminant max={s['discriminant_max']:.2e} averaged bound min={s['eq72_min']:.2e}"
    assert verdict(3, "b/c certificate", ok, detail)


def test_04_conditions_imply_delta(verdict, corpus):
    n = corpus["summary"]["implication_exceptions"]
    assert verdict(4, "k-MON + t-MON + GLC imply Delta", n == 0, f"exceptions={n}")


def test_05_tmon_counterexample(verdict):
    start = time.perf_counter()
    res = tmon_search((2, 3), trials=10_000, seed=SEARCH_SEED, grid=51)
    elapsed = time.perf_counter() - start
    ok = res["found"] and res["tmon_min_fine"] < -1e-6 and res["h2_max"] <= 1e-8
    if res["found"]:
        detail = (
            f"seed={SEARCH_SEED} trial={res['trial']} p_start={res['system']['p_start']} "
            f"p_end={res['system']['p_end']} min dalpha/dt={res['tmon_min_fine']:.3e} "
            f"max H''={res['h2_max']:.3e} time={elapsed:.2f}s"
        )
    else:
        detail = f"no witness in {res['trials_run']} trials"
    assert verdict(5, "t-MON fails, concavity holds", ok, detail)


def test_06_appendix_campaign(verdict):
    start = time.perf_counter()
    c = run_campaign(10_000, m_max=10, seed=APPENDIX_SEED)
    elapsed = time.perf_counter() - start
    margin = min(c.min_margins.values())
    ok = (
        c.max_soi_residual < 1e-12
        and margin >= -1e-11
        and c.max_factorization_residual < 1e-11
        and c.max_induction_residual < 1e-11
        and elapsed < 120
    )
    detail = (
        f"soi residual={c.max_soi_residual:.2e} min margin={margin:.2e} "
        f"factorization={c.max_factorization_residual:.2e} induction={c.max_induction_residual:.2e} "
        f"time={elapsed:.2f}s"
    )
    assert verdict(6, "appendix campaign", ok, detail)


def test_07_geodesic_numerics(verdict):
    cases = (
        ("Bernoulli", binomial_pmf(1, 0.2), binomial_pmf(1, 0.7), 0.5),
        ("bin(2)", binomial_pmf(2, 0.2), binomial_pmf(2, 0.7), 1.0),
    )
    parts = []
    ok = True
    for name, f0, f1, bound in cases:
        start = time.perf_counter()
        res = minimize_action(f0, f1, OptimizerConfig(grid=51, init="mixture"))
        elapsed = time.perf_counter() - start
        rel = abs(res.vn_estimate - bound) / bound
        w1_gap = abs(w1_distance(f0, f1) - bound)
        lb_gap = abs(vn_lower_bound(f0, f1) - bound)
        ok &= rel <= 0.01 and res.beta_cv <= 0.05 and w1_gap <= 1e-12 and lb_gap <= 1e-12 and elapsed < 60
        parts.append(f"{name}: rel gap={rel:.2e} beta CV={res.beta_cv:.2e} |W1-bound|={w1_gap:.1e} {elapsed:.1f}s")
    assert verdict(7, "metric and geodesic numerics", ok, "; ".join(parts))


def test_08_two_point_contrasts(verdict):
    res = alt_metric_two_point(0.0, 1.0)
    limit = float(maas_integrand(0.0))
    ok = res.squared_length == 4.0 and res.max_theta_error <= 1e-6 and abs(limit - 1) <= 1e-10
    detail = (
        f"squared length={res.squared_length!r} (numeric {res.numeric_squared_length:.9f}) "
        f"theta error={res.max_theta_error:.2e} integrand(0)={limit!r}"
    )
    assert verdict(8, "two-point contrasts", ok, detail)


def _log_concave(rng, i):
    if i % 2 == 0:
        return convolve_bernoulli(rng.uniform(0.02, 0.98, int(rng.integers(1, 7))))
    size = int(rng.integers(1, 9))
    x = np.arange(size)
    phi = -rng.uniform(0.0, 1.5) * (x - rng.uniform(0, size)) ** 2 / 2 - rng.uniform(-1, 1) * x
    f = np.exp(phi - phi.max())
    return f / f.sum()


def test_09_translation_case(verdict):
    rng = np.random.default_rng(9)
    times = np.linspace(0.0, 1.0, GRID)
    glc = 0.0
    kmon = np.inf
    h2 = -np.inf
    for i in range(100):
        rep = translate_report(_log_concave(rng, i), int(rng.integers(1, 4)), times)
        glc = max(glc, rep["glc_abs_max"])
        kmon = min(kmon, rep["kmon_min"])
        h2 = max(h2, rep["h2_fd_max"])
    ok = glc <= 1e-12 and kmon >= -1e-11 and h2 <= 1e-8
    assert verdict(9, "translation case", ok, f"|GLC| max={glc:.2e} kMON min={kmon:.2e} max FD H''={h2:.3e}")


def test_10_gaussian_proxy(verdict, corpus):
    worst = corpus["summary"]["gaussian_h2_max"]
    _, h2 = gaussian_proxy_entropy(BernoulliSystem([0.0], [1.0]), 0.5)
    ok = worst <= 0 and abs(h2 + 4) <= 1e-10
    assert verdict(10, "Gaussian proxy", ok, f"corpus max H''={worst:.3e} n=1 H''(1/2)={float(h2)!r}")
