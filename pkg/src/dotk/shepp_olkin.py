"""Closed forms for Bernoulli sums whose parameters move on straight lines.

For ``p_i(t) = (1-t) p_i(0) + t p_i(1)`` the speed is ``v = sum p_i'`` and
alpha, g and h have explicit expressions in the leave-one-out masses
``f^{(i)}`` and leave-two-out masses ``f^{(i,j)}``.  Every function accepts
a scalar time or an array of times; results then carry a leading time axis.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple, Optional

import numpy as np

from .distributions import (
    MASS_TOL,
    BernoulliSystem,
    convolve_bernoulli,
    leave_one_out_all,
    leave_two_out_all,
    log_concavity_margins,
)
from .errors import DegenerateSpeedError, DomainError, NotMonotoneError, NumericalInconsistency
from .transport import DiscretePath, TransportDecomposition, alpha_time_derivative, h_from_alpha, mixture_g

ALPHA_AGREE_TOL = 1e-11
B_TOL = 1e-11
DISC_TOL = 1e-10
DEFAULT_GRID = 201


@dataclass(frozen=True)
class SheppOlkinInstance:
    """A Bernoulli system with parameters fixed at 0 or 1 stripped off.

    ``offset`` counts parameters fixed at 1; the remaining sum lives on
    ``{0..n}`` and the full sum on ``{offset..offset+n}``.  Entropy and every
    condition are invariant under that shift.
    """

    system: BernoulliSystem
    original: Optional[BernoulliSystem] = None
    offset: int = 0
    _cache: dict = field(default_factory=dict, init=False, repr=False, compare=False)

    @classmethod
    def from_system(cls, system: BernoulliSystem) -> "SheppOlkinInstance":
        core, offset = system.strip_deterministic()
        return cls(core, system, offset)

    @classmethod
    def from_params(cls, p_start, p_end) -> "SheppOlkinInstance":
        return cls.from_system(BernoulliSystem(p_start, p_end))

    @property
    def n(self) -> int:
        return self.system.n

    @property
    def dp(self) -> np.ndarray:
        return self.system.dp

    @property
    def v(self) -> float:
        return self.system.speed

    @property
    def monotone(self) -> bool:
        return self.system.monotone

    @property
    def degenerate(self) -> bool:
        return self.v == 0.0 and not np.any(self.dp)

    def params(self, t) -> np.ndarray:
        return self.system.params(t)

    def pmf(self, t) -> np.ndarray:
        return convolve_bernoulli(self.params(t))

    def loo(self, t) -> np.ndarray:
        """``f^{(i)}_k``, shape ``(..., n, n)``."""
        return leave_one_out_all(self.params(t))

    def ltwo(self, t) -> np.ndarray:
        """``f^{(i,j)}_k``, shape ``(..., n, n, n-1)``; zero on the diagonal.

        The last result is kept, since one analysis asks for it several times
        on the same grid.
        """
        t = np.asarray(t, dtype=float)
        key = (t.shape, t.tobytes())
        hit = self._cache.get("ltwo")
        if hit is not None and hit[0] == key:
            return hit[1]
        out = leave_two_out_all(self.params(t))
        out.setflags(write=False)
        self._cache["ltwo"] = (key, out)
        return out

    def dfdt(self, t) -> np.ndarray:
        """``sum_i p_i' (f^{(i)}_{k-1} - f^{(i)}_k)``."""
        fi = _pad_last(self.loo(t), 1, 1)
        diff = fi[..., :-1] - fi[..., 1:]
        return np.einsum("i,...ik->...k", self.dp, diff)

    def d2fdt2(self, t) -> np.ndarray:
        """``sum_{i != j} p_i' p_j' grad_2 f^{(i,j)}``."""
        if self.n < 2:
            return np.zeros(np.shape(t) + (self.n + 1,))
        s = np.einsum("i,j,...ijk->...k", self.dp, self.dp, self.ltwo(t))
        sp = _pad_last(s, 2, 2)
        return sp[..., 2:] - 2 * sp[..., 1:-1] + sp[..., :-2]

    def path(self, times=None) -> DiscretePath:
        """The interpolation sampled on ``times`` with closed-form derivatives."""
        if times is None:
            times = np.linspace(0.0, 1.0, DEFAULT_GRID)
        return DiscretePath.from_functions(times, self.pmf, self.dfdt, self.d2fdt2, vectorized=True)

    def to_dict(self) -> dict:
        base = self.original if self.original is not None else self.system
        return base.to_dict()


def _pad_last(x, before, after):
    return np.pad(x, [(0, 0)] * (x.ndim - 1) + [(before, after)])


def _require_speed(inst: SheppOlkinInstance) -> float:
    v = inst.v
    if v == 0:
        raise DegenerateSpeedError("sum of parameter derivatives is zero")
    return v


def so_alpha(inst: SheppOlkinInstance, t, check: bool = True):
    """alpha_k(t) for ``k = 0..n`` and a validity mask ``f_k > 1e-13``.

    Both closed forms are evaluated.  On monotone systems they are sums of
    nonnegative terms, and a disagreement above 1e-11 at a valid entry
    raises NumericalInconsistency.
    """
    v = _require_speed(inst)
    p = inst.params(t)
    f = convolve_bernoulli(p)
    fi = inst.loo(t)
    dp = inst.dp
    fi_pad = _pad_last(fi, 1, 1)
    up = np.einsum("i,...i,...ik->...k", dp, p, fi_pad[..., :-1])
    down = np.einsum("i,...i,...ik->...k", dp, 1 - p, fi_pad[..., 1:])
    valid = f > MASS_TOL
    pos = f > 0
    denom = np.where(pos, v * f, 1.0)
    a1 = np.where(pos, up / denom, np.nan)
    a2 = np.where(pos, 1 - down / denom, np.nan)
    a1[..., 0] = 0.0
    a1[..., -1] = 1.0
    if check and inst.monotone:
        gap = np.abs(np.where(valid, a1 - a2, 0.0))
        if gap.size and gap.max() > ALPHA_AGREE_TOL:
            raise NumericalInconsistency(f"the two alpha forms disagree by {gap.max():.3g}")
    return a1, valid


def so_g(inst: SheppOlkinInstance, t) -> np.ndarray:
    """``g_k = (1/v) sum_i p_i' f^{(i)}_k`` on ``{0..n-1}``."""
    v = _require_speed(inst)
    return np.einsum("i,...ik->...k", inst.dp, inst.loo(t)) / v


def so_h(inst: SheppOlkinInstance, t) -> np.ndarray:
    """``h_k = sum_{i != j} p_i' p_j' f^{(i,j)}_k / v^2`` on ``{0..n-2}``."""
    v = _require_speed(inst)
    if inst.n < 2:
        return np.zeros(np.shape(t) + (0,))
    return np.einsum("i,j,...ijk->...k", inst.dp, inst.dp, inst.ltwo(t)) / v**2


def so_decomposition(inst: SheppOlkinInstance, times) -> TransportDecomposition:
    """``(v, alpha, g, h)`` on a grid from the closed forms alone.

    Unlike the generic recovery this does not insist on ``g >= 0``, so it
    also describes non-monotone systems.
    """
    v = _require_speed(inst)
    times = np.asarray(times, dtype=float)
    f = inst.pmf(times)
    g = so_g(inst, times)
    alpha, valid = so_alpha(inst, times)
    dfdt = inst.dfdt(times)
    dalpha = alpha_time_derivative(f, g, dfdt, inst.d2fdt2(times), v)
    h = so_h(inst, times) if inst.n >= 2 else np.zeros((times.size, 0))
    mix = mixture_g(f, alpha)
    lam_dot = dfdt @ np.arange(inst.n + 1)
    return TransportDecomposition(
        times=times,
        v=v,
        alpha=alpha,
        dalpha=dalpha,
        g=g,
        h=h,
        valid=valid,
        closed_form=True,
        g_mixture_error=float(np.abs(np.where(np.isfinite(mix), mix - g, 0.0)).max(initial=0.0)),
        mean_speed_error=float(np.abs(lam_dot - v).max(initial=0.0)),
    )


def h_consistency(inst: SheppOlkinInstance, decomp: TransportDecomposition) -> float:
    """Largest gap between ``h`` built from alpha and the closed form, over valid entries."""
    f = inst.pmf(decomp.times)
    h_alpha = h_from_alpha(f, decomp.alpha, decomp.dalpha, decomp.v)
    ok = decomp.valid[:, :-2] & decomp.valid[:, 1:-1] & decomp.valid[:, 2:]
    return float(np.abs(np.where(ok, h_alpha - decomp.h, 0.0)).max(initial=0.0))


def glc_pairwise(inst: SheppOlkinInstance, t) -> np.ndarray:
    """``(1/v^2) sum_{i<j} p_i' p_j' (p_i - p_j)^2 D_k^{(i,j)}``, ``k = 0..n-2``.

    Equals the GLC margins of the interpolation term by term; every summand
    is nonnegative on monotone systems.
    """
    v = _require_speed(inst)
    if inst.n < 2:
        return np.zeros(np.shape(t) + (0,))
    p = inst.params(t)
    D = log_concavity_margins(inst.ltwo(t)).D
    w = np.einsum("i,j->ij", inst.dp, inst.dp) * (p[..., :, None] - p[..., None, :]) ** 2
    w = np.triu(w, 1) if w.ndim == 2 else w * np.triu(np.ones((inst.n, inst.n)), 1)
    return np.einsum("...ij,...ijk->...k", w, D) / v**2


# ---------------------------------------------------------------------------
# pair terms
# ---------------------------------------------------------------------------


class PairTerms(NamedTuple):
    """Cubic coefficients of the pairwise quadratic form.

    ``b`` and ``c`` have shape ``(..., n, n, K)``: optional time axis, pair
    ``(i, j)`` and centre index ``k``.  The diagonal ``i == j`` is zero and
    unused.
    """

    b: np.ndarray
    c: np.ndarray
    k: np.ndarray


def _cubics(F: np.ndarray, k: np.ndarray):
    """Shifted values ``F_{k+s}`` of the leave-two-out masses (zero outside)."""
    Fp = _pad_last(F, 2, 2)
    size = Fp.shape[-1]
    out = {}
    for s in (-2, -1, 0, 1, 2):
        j = k + 2 + s
        inside = (j >= 0) & (j < size)
        out[s] = np.where(inside, Fp[..., np.clip(j, 0, size - 1)], 0.0)
    return out


def so_pair_terms(inst: SheppOlkinInstance, t, k=None) -> PairTerms:
    """``b_{i,j}`` and ``c_{i,j}`` for centre indices ``k``.

    ``k`` defaults to ``0..n-2``, the range of the Delta condition.
    """
    if inst.n < 2:
        raise DomainError("pair terms need n >= 2")
    if k is None:
        k = np.arange(inst.n - 1)
    k = np.atleast_1d(np.asarray(k, dtype=int))
    p = inst.params(t)
    F = _cubics(inst.ltwo(t), k)
    fm2, fm1, f0, f1, f2 = F[-2], F[-1], F[0], F[1], F[2]
    pi = p[..., :, None, None]
    pj = p[..., None, :, None]
    low = fm1 * f0**2 - 2 * fm1**2 * f1 + fm2 * f0 * f1
    high = f0**2 * f1 - 2 * f1**2 * fm1 + f2 * f0 * fm1
    mixed = 2 * f0**3 - 3 * fm1 * f0 * f1
    b = 0.5 * (
        pi * pj * low
        + (1 - pi) * (1 - pj) * high
        + (1 - pi) * pj * (mixed + fm1**2 * f2)
        + pi * (1 - pj) * (mixed + f1**2 * fm2)
    )
    c = -(f0**3) + 2 * fm1 * f0 * f1 - f1**2 * fm2 - fm1**2 * f2 + fm2 * f0 * f2
    idx = np.arange(inst.n)
    b[..., idx, idx, :] = 0.0
    c[..., idx, idx, :] = 0.0
    return PairTerms(b, c, k)


def pair_form_value(inst: SheppOlkinInstance, t, terms: Optional[PairTerms] = None) -> np.ndarray:
    """The quadratic form ``sum_{i != j} [p_i'^2 q_j b_ij + p_i' p_j' q_i q_j c_ij]`` per k.

    Here ``q_i = p_i(1 - p_i)``.
    """
    terms = terms if terms is not None else so_pair_terms(inst, t)
    p = inst.params(t)
    q = p * (1 - p)
    dp = inst.dp
    off = 1.0 - np.eye(inst.n)
    wb = (dp**2)[:, None] * q[..., None, :] * off
    wc = (dp * q)[..., :, None] * (dp * q)[..., None, :] * off
    return np.einsum("...ij,...ijk->...k", wb, terms.b) + np.einsum("...ij,...ijk->...k", wc, terms.c)


@dataclass
class DeltaCertificate:
    """Pairwise margins behind the Delta condition, minimized over pairs, k and time.

    ``discriminant_max`` is the largest ``4 q_i q_j c_ij^2 - 4 b_ij b_ji`` over
    entries with ``c_ij < 0`` (``-inf`` when there are none), with
    ``q_i = p_i (1 - p_i)``.  ``eq72_min`` is the smallest
    ``b_ij + (p_i(1-p_j) + p_j(1-p_i)) c_ij / 2`` over the same entries.
    """

    b_min: float
    eq72_min: float
    discriminant_max: float
    form_min: float
    verdict: bool
    negative_c: int = 0


def so_delta_certificate(
    inst: SheppOlkinInstance, t, b_tol: float = B_TOL, disc_tol: float = DISC_TOL
) -> DeltaCertificate:
    """Check ``b >= 0``, the averaged bound on ``b``, and the discriminant bound."""
    if not inst.monotone:
        raise NotMonotoneError("the pairwise certificate needs every p_i' >= 0")
    _require_speed(inst)
    if inst.n < 2:
        return DeltaCertificate(np.inf, np.inf, -np.inf, np.inf, True)
    terms = so_pair_terms(inst, t)
    p = inst.params(t)
    off = ~np.eye(inst.n, dtype=bool)
    b, c = terms.b, terms.c
    pi = p[..., :, None, None]
    pj = p[..., None, :, None]
    q = pi * (1 - pi)
    qj = pj * (1 - pj)
    neg = (c < 0) & off[:, :, None]
    eq72 = b + 0.5 * (pi * (1 - pj) + pj * (1 - pi)) * c
    bT = np.swapaxes(b, -2, -3)
    disc = 4 * q * qj * c**2 - 4 * b * bT
    form = pair_form_value(inst, t, terms)
    offk = np.broadcast_to(off[:, :, None], b.shape)
    b_min = float(b[offk].min())
    eq72_min = float(np.where(neg, eq72, np.inf).min())
    disc_max = float(np.where(neg, disc, -np.inf).max())
    verdict = b_min >= -b_tol and eq72_min >= -b_tol and disc_max <= disc_tol
    return DeltaCertificate(b_min, eq72_min, disc_max, float(form.min(initial=np.inf)), verdict, int(neg.sum()))


def delta_quadratic_residual(inst: SheppOlkinInstance, t) -> float:
    """Gap between the pair form and ``v^2 (g_{k+1} A_k + g_k B_k) - D_{k+1} sum p_i' p_j' f_k^{(i,j)}``."""
    v = _require_speed(inst)
    f = inst.pmf(t)
    g = so_g(inst, t)
    f0, f1, f2 = f[..., :-2], f[..., 1:-1], f[..., 2:]
    g0, g1 = g[..., :-1], g[..., 1:]
    A = f1 * g0 - f0 * g1
    B = f1 * g1 - f2 * g0
    D = f1**2 - f0 * f2
    lhs = v**2 * (g1 * A + g0 * B) - D * v**2 * so_h(inst, t)
    terms = so_pair_terms(inst, t, np.arange(inst.n - 1))
    return float(np.abs(lhs - pair_form_value(inst, t, terms)).max(initial=0.0))


# ---------------------------------------------------------------------------
# Gaussian proxy
# ---------------------------------------------------------------------------


def gaussian_proxy_entropy(system: BernoulliSystem, t):
    """``H = log(2 pi e V)/2`` and its exact second derivative, ``V = sum p(1-p)``."""
    p = system.params(t)
    dp = system.dp
    V = np.sum(p * (1 - p), axis=-1)
    if np.any(V <= 0):
        raise DomainError("variance vanishes: every parameter is deterministic")
    V1 = np.sum(dp * (1 - 2 * p), axis=-1)
    V2 = -2.0 * np.sum(dp**2)
    H = 0.5 * np.log(2 * np.pi * np.e * V)
    H2 = 0.5 * (V2 / V - (V1 / V) ** 2)
    return H, H2


# ---------------------------------------------------------------------------
# grids and random instances
# ---------------------------------------------------------------------------


def trimmed_grid(inst: SheppOlkinInstance, size: int = DEFAULT_GRID) -> np.ndarray:
    """Uniform grid on [0, 1] minus endpoints where a parameter sits at 0 or 1."""
    times = np.linspace(0.0, 1.0, size)
    p = inst.params(times)
    edge = np.any((p <= 0) | (p >= 1), axis=1)
    keep = ~edge
    keep[1:] &= ~edge[:-1]
    keep[:-1] &= ~edge[1:]
    return times[keep]


def random_monotone_instance(rng: np.random.Generator, n_max: int = 12, n_min: int = 2) -> SheppOlkinInstance:
    """A system with ``0 < p_i(0) <= p_i(1) < 1`` and at least one strict increase."""
    n = int(rng.integers(n_min, n_max + 1))
    while True:
        a = rng.uniform(0.0, 1.0, n)
        b = a + rng.uniform(0.0, 1.0, n) * (1.0 - a)
        if np.any(b > a) and np.all(a > 0) and np.all(b < 1):
            return SheppOlkinInstance.from_params(a, b)
