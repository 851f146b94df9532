"""Experiment runners and serialization shared by the command line and the test-suite.

Reports are plain dictionaries.  Floats are written with 17 significant
digits so a report read back reproduces every value bit for bit, and no
report carries a timestamp, so identical inputs give identical files.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, replace
from typing import Callable, Iterable, Optional, Sequence

import numpy as np

from . import __version__
from .appendix import run_campaign
from .benamou_brenier import OptimizerConfig, minimize_action, vn_lower_bound, w1_distance
from .couplings import thin, translation_path
from .distributions import BernoulliSystem, entropy
from .errors import ConditionsNotVerified, DegenerateSpeedError, NotMonotoneError
from .shepp_olkin import (
    SheppOlkinInstance,
    glc_pairwise,
    gaussian_proxy_entropy,
    h_consistency,
    random_monotone_instance,
    so_decomposition,
    so_delta_certificate,
    trimmed_grid,
)
from .transport import (
    concavity_certificate,
    condition_report,
    glc_margins,
    second_time_derivative,
)

THREADS_ENV = "DOTK_THREADS"


# ---------------------------------------------------------------------------
# tolerances
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Tolerances:
    kmon: float = 1e-11
    glc: float = 1e-11
    delta: float = 1e-10
    b: float = 1e-11
    discriminant: float = 1e-10
    concavity: float = 1e-8
    h2_abs: float = 1e-6
    h2_rel: float = 1e-4
    tmon_witness: float = 1e-6
    certificate: float = 1e-8

    def scaled(self, factor: float) -> "Tolerances":
        if not factor > 0:
            raise ValueError("tolerance scale must be positive")
        return Tolerances(**{k: v * factor for k, v in asdict(self).items()})


DEFAULT_TOL = Tolerances()


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------


def _fmt_float(x: float) -> str:
    if math.isnan(x):
        return "NaN"
    if math.isinf(x):
        return "Infinity" if x > 0 else "-Infinity"
    if x == int(x) and abs(x) < 1e16:
        return repr(float(x))
    return format(x, ".17g")


def _plain(obj):
    if isinstance(obj, np.ndarray):
        return [_plain(x) for x in obj.tolist()]
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(x) for x in obj]
    return obj


def dumps(obj, indent: int = 2) -> str:
    """JSON text with 17-digit floats and ``Infinity``/``NaN`` for non-finite values."""
    return _encode(_plain(obj), indent, 0) + "\n"


def _encode(obj, indent, level) -> str:
    pad = " " * (indent * (level + 1))
    end = " " * (indent * level)
    if obj is None:
        return "null"
    if obj is True:
        return "true"
    if obj is False:
        return "false"
    if isinstance(obj, int):
        return str(obj)
    if isinstance(obj, float):
        return _fmt_float(obj)
    if isinstance(obj, str):
        import json

        return json.dumps(obj)
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{pad}{_encode(str(k), indent, level + 1)}: {_encode(v, indent, level + 1)}" for k, v in obj.items()]
        return "{\n" + ",\n".join(items) + "\n" + end + "}"
    if isinstance(obj, list):
        if not obj:
            return "[]"
        if all(isinstance(x, (int, float)) and not isinstance(x, bool) for x in obj):
            return "[" + ", ".join(_encode(x, indent, level + 1) for x in obj) + "]"
        items = [pad + _encode(x, indent, level + 1) for x in obj]
        return "[\n" + ",\n".join(items) + "\n" + end + "]"
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def curve_csv(t: Sequence[float], values: Sequence[float]) -> str:
    """Two-column CSV with header ``t,value`` and LF line endings."""
    lines = ["t,value"]
    for a, b in zip(t, values):
        lines.append(f"{_fmt_float(float(a))},{_fmt_float(float(b))}")
    return "\n".join(lines) + "\n"


def metadata(command: str, seed: Optional[int], grid: Optional[int], tol: Tolerances, **extra) -> dict:
    meta = {"command": command, "version": __version__, "seed": seed, "grid": grid, "tolerances": asdict(tol)}
    meta.update(extra)
    return meta


# ---------------------------------------------------------------------------
# parallel map
# ---------------------------------------------------------------------------


def worker_count() -> int:
    raw = os.environ.get(THREADS_ENV, "1")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


def parallel_map(fn: Callable, items: Iterable, chunksize: int = 16) -> list:
    """Ordered map over a process pool capped by ``DOTK_THREADS`` (serial by default)."""
    items = list(items)
    workers = min(worker_count(), max(1, len(items)))
    if workers == 1:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items, chunksize=chunksize))


def instance_rng(seed: int, index: int) -> np.random.Generator:
    """Independent stream per instance, so results do not depend on scheduling."""
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(index)]))


# ---------------------------------------------------------------------------
# Shepp-Olkin analysis
# ---------------------------------------------------------------------------


def _finite_min(x) -> float:
    x = np.asarray(x, dtype=float)
    x = x[np.isfinite(x)]
    return float(x.min()) if x.size else float("inf")


def _finite_max(x) -> float:
    x = np.asarray(x, dtype=float)
    x = x[np.isfinite(x)]
    return float(x.max()) if x.size else float("-inf")


def analyze_shepp_olkin(
    inst: SheppOlkinInstance,
    grid: int = 201,
    tol: Tolerances = DEFAULT_TOL,
    certificate: bool = True,
    curves: bool = False,
) -> dict:
    """Every condition margin, both H'' routes and the pairwise certificate.

    ``verdicts`` lists the statements that hold for monotone systems; t-MON
    is reported but not claimed.
    """
    out = {
        "system": inst.to_dict(),
        "n": inst.n,
        "offset": inst.offset,
        "v": inst.v,
        "monotone": inst.monotone,
    }
    if inst.n == 0 or not np.any(inst.dp):
        out["degenerate"] = True
        out["verdicts"] = {"concave": True}
        return out
    times = trimmed_grid(inst, grid)
    path = inst.path(times)
    if inst.v == 0:
        h2_fd = second_time_derivative(path.entropies(), times)
        out["degenerate_speed"] = True
        out["h2_fd_max"] = _finite_max(h2_fd)
        out["verdicts"] = {}
        if curves:
            out["curves"] = {"t": times, "entropy": path.entropies(), "h2_fd": h2_fd}
        return out
    dec = so_decomposition(inst, times)
    rep = condition_report(dec, path, tol=tol.delta, concavity_tol=tol.concavity)
    disc = np.abs(rep.h2 - rep.h2_fd)
    allowed = np.maximum(tol.h2_abs, tol.h2_rel * np.abs(rep.h2))
    both = np.isfinite(rep.h2) & np.isfinite(rep.h2_fd)
    glc_pair = glc_pairwise(inst, times)
    ok3 = dec.valid[:, :-2] & dec.valid[:, 1:-1] & dec.valid[:, 2:]
    glc_gap = np.abs(np.where(ok3, glc_pair - glc_margins(path.pmfs, dec.alpha), 0.0)).max(initial=0.0)
    out.update(
        {
            "times_evaluated": int(times.size),
            "kmon_min": rep.min_margin("kmon"),
            "tmon_min": rep.min_margin("tmon"),
            "glc_min": rep.min_margin("glc"),
            "glc_pairwise_gap": float(glc_gap),
            "delta_min": rep.min_margin("delta"),
            "delta_skipped": int(np.sum(~np.isfinite(rep.delta))),
            "h2_max": rep.h2_max,
            "h2_fd_max": _finite_max(rep.h2_fd),
            "h2_discrepancy_max": _finite_max(np.where(both, disc, np.nan)),
            "h2_agreement_excess": _finite_max(np.where(both, disc - allowed, np.nan)),
            "h_consistency": h_consistency(inst, dec),
            "alpha_violations": dec.alpha_violations,
            "implication_exceptions": implication_exceptions(rep, tol.delta),
        }
    )
    try:
        gh = gaussian_proxy_entropy(inst.system, times)[1]
        out["gaussian_h2_max"] = float(np.max(gh))
    except Exception:
        out["gaussian_h2_max"] = float("nan")
    verdicts = {}
    if inst.monotone:
        cert = so_delta_certificate(inst, times, b_tol=tol.b, disc_tol=tol.discriminant)
        out["pair_certificate"] = asdict(cert)
        verdicts = {
            "kmon": out["kmon_min"] >= -tol.kmon,
            "glc": out["glc_min"] >= -tol.glc,
            "delta": out["delta_min"] >= -tol.delta,
            "pair_certificate": cert.verdict,
            "concave": out["h2_max"] <= tol.concavity,
            "h2_agreement": out["h2_agreement_excess"] <= 0,
            "implies_delta": out["implication_exceptions"] == 0,
        }
        if certificate:
            out["entropy_certificate"] = certificate_sweep(inst, dec, path, rep.h2, tol)
            verdicts["entropy_certificate"] = out["entropy_certificate"]["failures"] == 0
    out["verdicts"] = verdicts
    if curves:
        out["curves"] = {
            "t": times,
            "entropy": path.entropies(),
            "h2": rep.h2,
            "h2_fd": rep.h2_fd,
            "tmon_min": np.nanmin(np.where(np.isfinite(rep.tmon), rep.tmon, np.inf), axis=1),
        }
    return out


def implication_exceptions(rep, tol: float) -> int:
    """Times where k-MON, t-MON and GLC all hold (margins >= 0) but some Delta margin is below ``-tol``."""
    def rowmin(x):
        return np.min(np.where(np.isfinite(x), x, np.inf), axis=1) if x.shape[1] else np.full(x.shape[0], np.inf)

    good = (rowmin(rep.kmon) >= 0) & (rowmin(rep.tmon) >= 0) & (rowmin(rep.glc) >= 0)
    return int(np.sum(good & (rowmin(rep.delta) < -tol)))


def certificate_sweep(inst, dec, path, h2, tol: Tolerances) -> dict:
    """Certified upper bound at each grid time, compared with H''."""
    worst_gap = float("inf")
    bound_max = float("-inf")
    ident = 0.0
    refused = 0
    failures = 0
    for j in range(path.times.size):
        if not np.isfinite(h2[j]):
            continue
        try:
            c = concavity_certificate(path.pmfs[j], dec.g[j], dec.h[j], dec.v, dec.alpha[j], tol=tol.delta)
        except ConditionsNotVerified:
            refused += 1
            continue
        gap = c.bound - h2[j]
        worst_gap = min(worst_gap, gap)
        bound_max = max(bound_max, c.bound)
        ident = max(ident, c.identity_residual, c.remainder_residual)
        if gap < -tol.certificate or c.bound > tol.certificate or np.any(c.log_terms > c.theta_terms + tol.delta):
            failures += 1
    return {
        "min_bound_minus_h2": worst_gap,
        "max_bound": bound_max,
        "identity_residual": ident,
        "refused": refused,
        "failures": failures,
    }


# ---------------------------------------------------------------------------
# corpora
# ---------------------------------------------------------------------------


def corpus_instance(seed: int, index: int, n_max: int = 12) -> SheppOlkinInstance:
    return random_monotone_instance(instance_rng(seed, index), n_max=n_max)


def _corpus_task(args):
    seed, index, n_max, grid, tol, certificate = args
    inst = corpus_instance(seed, index, n_max)
    res = analyze_shepp_olkin(inst, grid, tol, certificate=certificate)
    res["index"] = index
    return res


def run_so_corpus(
    count: int = 1000,
    seed: int = 0,
    n_max: int = 12,
    grid: int = 201,
    tol: Tolerances = DEFAULT_TOL,
    certificate: bool = False,
) -> dict:
    """Analyze ``count`` seeded monotone instances and summarize the worst margins."""
    results = parallel_map(_corpus_task, [(seed, i, n_max, grid, tol, certificate) for i in range(count)])
    keys = ("kmon_min", "tmon_min", "glc_min", "delta_min")
    summary = {k: min(r[k] for r in results) for k in keys}
    summary["h2_max"] = max(r["h2_max"] for r in results)
    summary["h2_agreement_excess"] = max(r["h2_agreement_excess"] for r in results)
    summary["glc_pairwise_gap"] = max(r["glc_pairwise_gap"] for r in results)
    summary["implication_exceptions"] = sum(r["implication_exceptions"] for r in results)
    summary["gaussian_h2_max"] = max(r["gaussian_h2_max"] for r in results)
    pc = [r["pair_certificate"] for r in results]
    summary["b_min"] = min(c["b_min"] for c in pc)
    summary["eq72_min"] = min(c["eq72_min"] for c in pc)
    summary["discriminant_max"] = max(c["discriminant_max"] for c in pc)
    summary["tmon_failures"] = sum(1 for r in results if r["tmon_min"] < -tol.tmon_witness)
    failed = [r["index"] for r in results if not all(r["verdicts"].values())]
    return {"count": count, "seed": seed, "n_max": n_max, "grid": grid, "summary": summary, "failed": failed}


# ---------------------------------------------------------------------------
# t-MON counterexample search
# ---------------------------------------------------------------------------


def _tmon_min(inst: SheppOlkinInstance, grid: int) -> tuple[float, float]:
    times = trimmed_grid(inst, grid)
    dec = so_decomposition(inst, times)
    da = np.where(dec.valid, dec.dalpha, np.inf)
    j, k = np.unravel_index(np.argmin(da), da.shape)
    return float(da[j, k]), float(times[j])


def tmon_search(
    sizes: Sequence[int] = (2, 3),
    trials: int = 10_000,
    seed: int = 0,
    grid: int = 51,
    tol: Tolerances = DEFAULT_TOL,
) -> dict:
    """Random search for a monotone system on which alpha decreases in time somewhere.

    Symmetric systems are skipped since their alpha is constant.  A
    candidate is re-checked on a grid twice as fine, and entropy concavity
    is confirmed on it with the full analysis.
    """
    if trials < 1:
        raise ValueError("trials must be at least 1")
    for i in range(trials):
        rng = instance_rng(seed, i)
        n = int(sizes[i % len(sizes)])
        inst = random_monotone_instance(rng, n_max=n, n_min=n)
        if inst.system.symmetric:
            continue
        m, _ = _tmon_min(inst, grid)
        if m >= -tol.tmon_witness:
            continue
        m2, t2 = _tmon_min(inst, 2 * grid - 1)
        if m2 >= -tol.tmon_witness:
            continue
        full = analyze_shepp_olkin(inst, 201, tol, certificate=False)
        return {
            "found": True,
            "trial": i,
            "trials_run": i + 1,
            "seed": seed,
            "system": inst.to_dict(),
            "tmon_min": m,
            "tmon_min_fine": m2,
            "t_at_min": t2,
            "h2_max": full["h2_max"],
            "concave": full["h2_max"] <= tol.concavity,
            "analysis": full,
        }
    return {"found": False, "trials_run": trials, "seed": seed}


# ---------------------------------------------------------------------------
# other experiments
# ---------------------------------------------------------------------------


def geodesic_report(f0, f1, config: OptimizerConfig) -> dict:
    res = minimize_action(f0, f1, config)
    return {
        "f0": np.asarray(f0, float),
        "f1": np.asarray(f1, float),
        "vn_estimate": res.vn_estimate,
        "lower_bound": res.lower_bound,
        "w1": w1_distance(f0, f1),
        "relative_gap": res.relative_gap,
        "beta_cv": res.beta_cv,
        "beta_variance": res.beta_variance,
        "iterations": res.iterations,
        "converged": res.converged,
        "optimizer": asdict(config),
        "curves": {"t": 0.5 * (res.best_path.times[1:] + res.best_path.times[:-1]), "beta": res.beta},
        "verdicts": {"above_lower_bound": res.vn_estimate >= vn_lower_bound(f0, f1) - 1e-9},
    }


def appendix_report(systems: int, m_max: int, seed: int, tol: Tolerances = DEFAULT_TOL) -> dict:
    summary = run_campaign(systems, m_max, seed)
    out = summary.to_dict()
    out["verdicts"] = {"appendix": summary.passed(margin_tol=tol.glc, soi_tol=1e-12 * tol.glc / 1e-11, ident_tol=tol.glc)}
    return out


def thin_report(f, times) -> dict:
    times = np.asarray(times, dtype=float)
    pmfs = thin(f, times)
    return {"f": np.asarray(f, float), "t": times, "pmfs": pmfs, "entropy": entropy(pmfs), "verdicts": {}}


def translate_report(f, m: int, times, tol: Tolerances = DEFAULT_TOL) -> dict:
    times = np.asarray(times, dtype=float)
    pmfs, alpha = translation_path(f, m, times)
    glc = glc_margins(pmfs, alpha)
    valid = pmfs > 1e-13
    ok3 = valid[:, :-2] & valid[:, 1:-1] & valid[:, 2:]
    kmon = np.where(valid[:, 1:] & valid[:, :-1], np.diff(alpha, axis=1), np.nan)
    H = entropy(pmfs)
    h2 = second_time_derivative(H, times)
    return {
        "f": np.asarray(f, float),
        "m": m,
        "t": times,
        "glc_abs_max": _finite_max(np.abs(np.where(ok3, glc, np.nan))),
        "kmon_min": _finite_min(kmon),
        "h2_fd_max": _finite_max(h2),
        "curves": {"t": times, "entropy": H, "h2_fd": h2},
        "verdicts": {
            "glc_zero": _finite_max(np.abs(np.where(ok3, glc, np.nan))) <= 1e-12,
            "kmon": _finite_min(kmon) >= -tol.kmon,
            "concave": _finite_max(h2) <= tol.concavity,
        },
    }


def gaussian_check(system: BernoulliSystem, times) -> float:
    return float(np.max(gaussian_proxy_entropy(system, times)[1]))


__all__ = [
    "DEFAULT_TOL",
    "Tolerances",
    "analyze_shepp_olkin",
    "appendix_report",
    "curve_csv",
    "dumps",
    "geodesic_report",
    "metadata",
    "parallel_map",
    "run_so_corpus",
    "thin_report",
    "tmon_search",
    "translate_report",
]
