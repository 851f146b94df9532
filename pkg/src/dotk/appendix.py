"""Identities and cubic inequalities for Bernoulli-sum mass functions.

Every routine takes parameters of shape ``(m,)`` or a batch ``(N, m)`` and
evaluates over the index range ``k = -3..m+3`` with zero padding, so the
boundary cases are covered by the same arithmetic as the interior.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .distributions import convolve_bernoulli, leave_one_out_all
from .errors import DomainError

PAD = 4
MARGIN_TOL = 1e-11
SOI_TOL = 1e-12
NAMES = ("C1", "C1bar", "C2", "C2bar", "C3", "C3bar", "D1")


def _params(params) -> np.ndarray:
    p = np.asarray(params, dtype=float)
    if p.ndim == 0 or p.shape[-1] == 0:
        raise DomainError("need at least one parameter")
    if np.any(~np.isfinite(p)) or p.min() < 0 or p.max() > 1:
        raise DomainError("parameters must lie in [0, 1]")
    return p


def index_range(m: int) -> np.ndarray:
    return np.arange(-3, m + 4)


class _Shift:
    """``g[k + j]`` for the standard index range, zero outside the support."""

    def __init__(self, g: np.ndarray):
        self.m = g.shape[-1] - 1
        self.G = np.pad(g, [(0, 0)] * (g.ndim - 1) + [(PAD + 3, PAD + 3)])
        self.k = index_range(self.m)

    def __call__(self, j: int) -> np.ndarray:
        return self.G[..., self.k + j + PAD + 3]


def _D(s: _Shift, j: int = 0) -> np.ndarray:
    """``D_{k+j} = g_{k+j}^2 - g_{k+j-1} g_{k+j+1}``."""
    return s(j) ** 2 - s(j - 1) * s(j + 1)


def _c1(s: _Shift, j: int = 0) -> np.ndarray:
    """``C_1(k+j)``."""
    return s(j - 1) * s(j) ** 2 - 2 * s(j - 1) ** 2 * s(j + 1) + s(j) * s(j + 1) * s(j - 2)


def _pn(s: _Shift, j: int = 0) -> np.ndarray:
    """``g_{k} D_{k} + g_{k-2} D_{k+1} - 2 g_{k+2} D_{k-1}`` at ``k+j``."""
    return s(j) * _D(s, j) + s(j - 2) * _D(s, j + 1) - 2 * s(j + 2) * _D(s, j - 1)


class CubicMargins(NamedTuple):
    """Left-hand sides of the seven cubic inequalities and the PN margin, per k."""

    k: np.ndarray
    C1: np.ndarray
    C1bar: np.ndarray
    C2: np.ndarray
    C2bar: np.ndarray
    C3: np.ndarray
    C3bar: np.ndarray
    D1: np.ndarray
    pn_equiv: np.ndarray
    scale: np.ndarray

    def minima(self) -> dict:
        """Smallest value of each margin over k (and over the batch)."""
        return {name: float(getattr(self, name).min()) for name in NAMES + ("pn_equiv",)}

    def normalized(self, name: str) -> np.ndarray:
        """A margin divided by the cube of the largest mass."""
        return getattr(self, name) / self.scale[..., None]


def cubic_margins(params) -> CubicMargins:
    """All seven cubic margins and the PN margin of the Bernoulli sum."""
    p = _params(params)
    g = convolve_bernoulli(p)
    s = _Shift(g)
    g0, gm1, gp1, gm2, gp2, gm3 = s(0), s(-1), s(1), s(-2), s(2), s(-3)
    C1 = _c1(s)
    C1bar = g0**2 * gp1 - 2 * gp1**2 * gm1 + gp2 * g0 * gm1
    C2 = g0**3 - gm1 * g0 * gp1 - gm1**2 * gp2 + gm2 * g0 * gp2
    C2bar = g0**3 - gm1 * g0 * gp1 - gp1**2 * gm2 + gm2 * g0 * gp2
    C3 = 2 * g0**3 - 3 * gm1 * g0 * gp1 + gm1**2 * gp2
    C3bar = 2 * g0**3 - 3 * gm1 * g0 * gp1 + gp1**2 * gm2
    D1 = 2 * g0**2 * gm2 - 3 * gm2 * gm1 * gp1 + gp1 * g0 * gm3
    return CubicMargins(s.k, C1, C1bar, C2, C2bar, C3, C3bar, D1, _pn(s), g.max(axis=-1) ** 3)


def pn_equiv_margin(params) -> np.ndarray:
    """``g_k D_k + g_{k-2} D_{k+1} - 2 g_{k+2} D_{k-1}`` over ``k = -3..m+3``."""
    p = _params(params)
    return _pn(_Shift(convolve_bernoulli(p)))


def dual_params(params) -> np.ndarray:
    """Parameters of the reflected sum ``m - X``: ``1 - p`` in reverse order."""
    p = _params(params)
    return 1.0 - p[..., ::-1]


def soi_bvar_residual(params, k=None, q=None) -> np.ndarray:
    """``|q f_k f_{k-q} - sum_j p_j (1-p_j) [f^{(j)}_{k-1} f^{(j)}_{k-q} - f^{(j)}_k f^{(j)}_{k-q-1}]|``.

    ``k`` and ``q`` default to the full grid ``k = -3..m+3``, ``q = 1..m+1``;
    the result then has shape ``(..., K, Q)``.  Scalars select one entry.
    """
    p = _params(params)
    m = p.shape[-1]
    ks = index_range(m) if k is None else np.atleast_1d(np.asarray(k, dtype=int))
    qs = np.arange(1, m + 2) if q is None else np.atleast_1d(np.asarray(q, dtype=int))
    if qs.min() < 1:
        raise DomainError("q must be at least 1")
    f = convolve_bernoulli(p)
    fj = leave_one_out_all(p)
    lo = int(ks.min() - qs.max() - 2)
    hi = int(ks.max() + 2)
    off = -lo
    width = hi - lo + 1

    def padded(x):
        out = np.zeros(x.shape[:-1] + (width,))
        n = x.shape[-1]
        a = max(0, off)
        b = min(width, off + n)
        if a < b:
            out[..., a:b] = x[..., a - off : b - off]
        return out

    F = padded(f)
    FJ = padded(fj)
    K = ks[:, None] + off
    Q = qs[None, :]
    lhs = Q * F[..., K] * F[..., K - Q]
    w = p * (1 - p)
    inner = FJ[..., K - 1] * FJ[..., K - Q] - FJ[..., K] * FJ[..., K - Q - 1]
    rhs = np.einsum("...j,...jab->...ab", w, inner)
    res = np.abs(lhs - rhs)
    if k is not None and q is not None and np.ndim(k) == 0 and np.ndim(q) == 0:
        return res[..., 0, 0]
    return res


@dataclass
class FactorizationResiduals:
    """Residuals of the three identities expressing C2, C3 and D1 through C1."""

    c2: float
    c3: float
    d1: float

    @property
    def worst(self) -> float:
        return max(self.c2, self.c3, self.d1)


def corollary_factorizations(params) -> FactorizationResiduals:
    """Check, for every k,

    ``g_{k+1} C2(k) = (g_k g_{k+1} - g_{k-1} g_{k+2}) D_k + g_{k+2} C1(k)``,
    ``g_k C3(k) = 2 D_k^2 + g_{k-1} C1bar(k)`` and
    ``g_{k-1} D1(k) = 2 g_{k-2} C1(k) + g_{k+1} C1(k-1)``.
    """
    p = _params(params)
    g = convolve_bernoulli(p)
    s = _Shift(g)
    cm = cubic_margins(p)
    D = _D(s)
    r2 = s(1) * cm.C2 - ((s(0) * s(1) - s(-1) * s(2)) * D + s(2) * cm.C1)
    r3 = s(0) * cm.C3 - (2 * D**2 + s(-1) * cm.C1bar)
    r4 = s(-1) * cm.D1 - (2 * s(-2) * cm.C1 + s(1) * _c1(s, -1))
    return FactorizationResiduals(float(np.abs(r2).max()), float(np.abs(r3).max()), float(np.abs(r4).max()))


@dataclass
class InductionExpansion:
    """Coefficients of ``C1`` for ``m+1`` parameters in the basis
    ``(1-p)^3, p(1-p)^2, p^2(1-p), p^3`` of the new parameter ``p``.
    """

    k: np.ndarray
    c0: np.ndarray
    c1: np.ndarray
    c2: np.ndarray
    c3: np.ndarray
    reassembled: np.ndarray
    direct: np.ndarray

    @property
    def residual(self) -> float:
        return float(np.abs(self.reassembled - self.direct).max())

    @property
    def min_coefficient(self) -> float:
        return float(min(self.c0.min(), self.c1.min(), self.c2.min(), self.c3.min()))


def induction_coefficients(params, p_new: float) -> InductionExpansion:
    """Expand ``C1`` of the sum with one extra parameter ``p_new``.

    The coefficients are ``C1(k)``, ``D1(k)``, the PN margin at ``k-1`` and
    ``C1(k-1)``, all for the original ``m`` parameters.
    """
    p = _params(params)
    x = np.asarray(p_new, dtype=float)
    if np.any(~np.isfinite(x)) or x.min() < 0 or x.max() > 1:
        raise DomainError("p_new must lie in [0, 1]")
    m = p.shape[-1]
    g = convolve_bernoulli(p)
    # evaluate the m-sum on the (m+1)-sum's index range so the two line up
    s = _Shift(np.concatenate([g, np.zeros(g.shape[:-1] + (1,))], axis=-1))
    cm_D1 = 2 * s(0) ** 2 * s(-2) - 3 * s(-2) * s(-1) * s(1) + s(1) * s(0) * s(-3)
    c0, c1, c2, c3 = _c1(s), cm_D1, _pn(s, -1), _c1(s, -1)
    x = x[..., None]
    re = (1 - x) ** 3 * c0 + x * (1 - x) ** 2 * c1 + x**2 * (1 - x) * c2 + x**3 * c3
    bigger = np.concatenate([p, np.broadcast_to(x, p.shape[:-1] + (1,))], axis=-1)
    direct = _c1(_Shift(convolve_bernoulli(bigger)))
    return InductionExpansion(index_range(m + 1), c0, c1, c2, c3, re, direct)


# ---------------------------------------------------------------------------
# randomized campaign
# ---------------------------------------------------------------------------


STRATA = ("near0", "near1", "half", "uniform")


def stratified_params(rng: np.random.Generator, size) -> np.ndarray:
    """Parameters drawn from a mix of boundary-heavy and uniform strata."""
    size = tuple(np.atleast_1d(size))
    which = rng.integers(0, len(STRATA), size)
    small = 10.0 ** rng.uniform(-6, -1, size)
    out = rng.uniform(0.0, 1.0, size)
    out = np.where(which == 0, small, out)
    out = np.where(which == 1, 1.0 - small, out)
    out = np.where(which == 2, 0.5 + rng.uniform(-0.01, 0.01, size), out)
    return out


@dataclass
class CampaignSummary:
    systems: int
    seed: int
    m_max: int
    min_margins: dict
    min_normalized: dict
    max_soi_residual: float
    max_factorization_residual: float
    max_induction_residual: float
    min_induction_coefficient: float
    witnesses: dict

    def passed(self, margin_tol: float = MARGIN_TOL, soi_tol: float = SOI_TOL, ident_tol: float = 1e-11) -> bool:
        return (
            min(self.min_margins.values()) >= -margin_tol
            and self.max_soi_residual < soi_tol
            and self.max_factorization_residual < ident_tol
            and self.max_induction_residual < ident_tol
            and self.min_induction_coefficient >= -margin_tol
        )

    def to_dict(self) -> dict:
        return {
            "systems": self.systems,
            "seed": self.seed,
            "m_max": self.m_max,
            "min_margins": self.min_margins,
            "min_normalized": self.min_normalized,
            "max_soi_residual": self.max_soi_residual,
            "max_factorization_residual": self.max_factorization_residual,
            "max_induction_residual": self.max_induction_residual,
            "min_induction_coefficient": self.min_induction_coefficient,
            "witnesses": self.witnesses,
            "passed": self.passed(),
        }


def _batched_factorizations(p):
    g = convolve_bernoulli(p)
    s = _Shift(g)
    cm = cubic_margins(p)
    D = _D(s)
    r2 = s(1) * cm.C2 - ((s(0) * s(1) - s(-1) * s(2)) * D + s(2) * cm.C1)
    r3 = s(0) * cm.C3 - (2 * D**2 + s(-1) * cm.C1bar)
    r4 = s(-1) * cm.D1 - (2 * s(-2) * cm.C1 + s(1) * _c1(s, -1))
    return cm, np.max(np.abs(np.stack([r2, r3, r4])), axis=(0, 2))


def run_campaign(systems: int = 10_000, m_max: int = 10, seed: int = 0) -> CampaignSummary:
    """Verify every appendix identity and inequality on a seeded random corpus."""
    rng = np.random.default_rng(seed)
    ms = rng.integers(1, m_max + 1, systems)
    names = NAMES + ("pn_equiv",)
    mins = {n: np.inf for n in names}
    mins_norm = {n: np.inf for n in names}
    wit = {}
    soi = fac = ind = 0.0
    coef = np.inf
    for m in range(1, m_max + 1):
        count = int(np.sum(ms == m))
        if not count:
            continue
        p = stratified_params(rng, (count, m))
        p_new = stratified_params(rng, count)
        cm, fres = _batched_factorizations(p)
        fac = max(fac, float(fres.max()))
        for name in names:
            vals = getattr(cm, name)
            per = vals.min(axis=-1)
            j = int(np.argmin(per))
            if per[j] < mins[name]:
                mins[name] = float(per[j])
                wit[name] = p[j].tolist()
            mins_norm[name] = min(mins_norm[name], float(cm.normalized(name).min()))
        soi = max(soi, float(soi_bvar_residual(p, q=np.arange(1, m + 1)).max()))
        ex = induction_coefficients(p, p_new)
        ind = max(ind, ex.residual)
        coef = min(coef, ex.min_coefficient)
    return CampaignSummary(systems, seed, m_max, mins, mins_norm, soi, fac, ind, float(coef), wit)
