"""Thinning, coupling interpolations and the translation case.

A coupling ``pi`` of ``f0`` and ``f1`` interpolates by moving each pair
``(x, y)`` with a binomial number of unit steps: at time ``t`` the mass sits at
``x + Bin(y - x, t)``.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .distributions import MASS_TOL, binomial_pmf, log_concavity_margins, validate_pmf
from .errors import DegenerateSpeedError, DomainError, NotMonotoneError, NumericalInconsistency
from .transport import DiscretePath

MARGINAL_TOL = 1e-12
TRANSLATION_AGREE_TOL = 1e-11


@dataclass(frozen=True)
class Coupling:
    """Joint law of ``(X, Y)`` stored as triples with positive mass."""

    x: np.ndarray
    y: np.ndarray
    mass: np.ndarray

    def __post_init__(self):
        x = np.asarray(self.x, dtype=int).ravel()
        y = np.asarray(self.y, dtype=int).ravel()
        m = np.asarray(self.mass, dtype=float).ravel()
        if not (x.size == y.size == m.size) or x.size == 0:
            raise DomainError("coupling needs matching non-empty x, y, mass")
        if x.min() < 0 or y.min() < 0:
            raise DomainError("coupling support must be nonnegative")
        if m.min() <= 0:
            raise DomainError("coupling masses must be positive")
        if abs(m.sum() - 1.0) > MARGINAL_TOL:
            raise DomainError(f"coupling masses sum to {m.sum():.17g}")
        for name, arr in (("x", x), ("y", y), ("mass", m)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @classmethod
    def from_triples(cls, triples) -> "Coupling":
        arr = list(triples)
        return cls([a[0] for a in arr], [a[1] for a in arr], [a[2] for a in arr])

    @classmethod
    def from_matrix(cls, P) -> "Coupling":
        P = np.asarray(P, dtype=float)
        xs, ys = np.nonzero(P > 0)
        return cls(xs, ys, P[xs, ys])

    @property
    def triples(self) -> list[tuple[int, int, float]]:
        return [(int(a), int(b), float(c)) for a, b, c in zip(self.x, self.y, self.mass)]

    @property
    def size(self) -> int:
        """Largest site touched plus one."""
        return int(max(self.x.max(), self.y.max())) + 1

    @property
    def ordered(self) -> bool:
        return bool(np.all(self.x <= self.y))

    @property
    def speed(self) -> float:
        return float(np.dot(self.mass, self.y - self.x))

    def marginals(self, size: int | None = None) -> tuple[np.ndarray, np.ndarray]:
        size = self.size if size is None else size
        f0 = np.bincount(self.x, weights=self.mass, minlength=size)
        f1 = np.bincount(self.y, weights=self.mass, minlength=size)
        return f0, f1

    def check_marginals(self, f0, f1) -> None:
        size = max(len(f0), len(f1), self.size)
        a, b = self.marginals(size)
        f0 = np.pad(np.asarray(f0, float), (0, size - len(f0)))
        f1 = np.pad(np.asarray(f1, float), (0, size - len(f1)))
        if np.abs(a - f0).max() > MARGINAL_TOL or np.abs(b - f1).max() > MARGINAL_TOL:
            raise DomainError("coupling marginals do not match the declared endpoints")


def thin(f, t) -> np.ndarray:
    """``(T_t f)_k = sum_x f_x bin(x, t, k)``; ``t`` may be an array."""
    f = validate_pmf(f)
    t = np.asarray(t, dtype=float)
    if np.any((t < 0) | (t > 1)):
        raise DomainError("thinning parameter must lie in [0, 1]")
    out = np.zeros(t.shape + (f.size,))
    for x, fx in enumerate(f):
        if fx:
            out[..., : x + 1] += fx * binomial_pmf(x, t)
    return out


def _shifted_binomial(d: int, t, shift: int, size: int) -> np.ndarray:
    """``bin(d, t, k - shift)`` for ``k = 0..size-1``."""
    k = np.arange(size) - shift
    return binomial_pmf(d, np.asarray(t, dtype=float)[..., None], k)


def coupling_interpolation(pi: Coupling, t, size: int | None = None) -> np.ndarray:
    """Mass function at time ``t``; pairs with ``y < x`` step downwards."""
    size = pi.size if size is None else size
    t = np.asarray(t, dtype=float)
    out = np.zeros(t.shape + (size,))
    kk = np.arange(size)
    for x, y, m in zip(pi.x, pi.y, pi.mass):
        if y >= x:
            out += m * _shifted_binomial(int(y - x), t, int(x), size)
        else:
            out += m * binomial_pmf(int(x - y), t[..., None], x - kk)
    return out


def _coupling_derivatives(pi: Coupling, t, size: int):
    t = np.asarray(t, dtype=float)
    d1 = np.zeros(t.shape + (size,))
    d2 = np.zeros(t.shape + (size,))
    for x, y, m in zip(pi.x, pi.y, pi.mass):
        d = int(y - x)
        x = int(x)
        if d >= 1:
            d1 += m * d * (_shifted_binomial(d - 1, t, x + 1, size) - _shifted_binomial(d - 1, t, x, size))
        if d >= 2:
            d2 += (
                m
                * d
                * (d - 1)
                * (
                    _shifted_binomial(d - 2, t, x + 2, size)
                    - 2 * _shifted_binomial(d - 2, t, x + 1, size)
                    + _shifted_binomial(d - 2, t, x, size)
                )
            )
    return d1, d2


def coupling_path(pi: Coupling, times, size: int | None = None) -> DiscretePath:
    """The interpolation of an ordered coupling with closed-form derivatives."""
    if not pi.ordered:
        raise NotMonotoneError("closed-form derivatives need x <= y on the support")
    size = pi.size if size is None else size
    return DiscretePath.from_functions(
        times,
        lambda t: coupling_interpolation(pi, t, size),
        lambda t: _coupling_derivatives(pi, t, size)[0],
        lambda t: _coupling_derivatives(pi, t, size)[1],
        vectorized=True,
    )


def monotone_coupling(f0, f1) -> Coupling:
    """Quantile coupling of ``f0`` below ``f1`` in the stochastic order."""
    f0 = validate_pmf(f0, name="f0")
    f1 = validate_pmf(f1, name="f1")
    size = max(f0.size, f1.size)
    f0 = np.pad(f0, (0, size - f0.size))
    f1 = np.pad(f1, (0, size - f1.size))
    F0 = np.cumsum(f0)
    F1 = np.cumsum(f1)
    viol = np.flatnonzero(F0 < F1 - MARGINAL_TOL)
    if viol.size:
        raise NotMonotoneError(f"f0 is not stochastically below f1: F0 < F1 at k={int(viol[0])}")
    F0[-1] = F1[-1] = 1.0
    cuts = np.unique(np.concatenate([[0.0], F0, F1]))
    cuts = cuts[(cuts >= 0) & (cuts <= 1)]
    masses = {}
    for lo, hi in zip(cuts[:-1], cuts[1:]):
        w = hi - lo
        if w <= 0:
            continue
        mid = 0.5 * (lo + hi)
        x = int(np.searchsorted(F0, mid))
        y = int(np.searchsorted(F1, mid))
        masses[(x, y)] = masses.get((x, y), 0.0) + w
    items = sorted((k, w) for k, w in masses.items() if w > 0)
    total = sum(w for _, w in items)
    return Coupling([k[0] for k, _ in items], [k[1] for k, _ in items], [w / total for _, w in items])


@dataclass
class CouplingDecomposition:
    """Speed, ``g`` and alpha of an ordered coupling path on a time grid.

    ``valid`` marks entries with ``f_k > 1e-13``; ``in_range`` additionally
    requires ``0 <= alpha_k <= 1`` within 1e-12.
    """

    times: np.ndarray
    v: float
    f: np.ndarray
    g: np.ndarray
    alpha: np.ndarray
    valid: np.ndarray
    in_range: np.ndarray


def coupling_path_decomposition(pi: Coupling, times, size: int | None = None) -> CouplingDecomposition:
    """Closed-form ``(v, g, alpha)`` for an ordered coupling.

    ``g`` is the interpolation of the distance-biased coupling with one step
    removed, and ``alpha_k f_k`` collects, for each pair, the chance of having
    just stepped onto ``k`` plus the part of its tail not carried by ``g``.
    """
    if not pi.ordered:
        raise NotMonotoneError("coupling must satisfy x <= y on its support")
    v = pi.speed
    if v == 0:
        raise DegenerateSpeedError("coupling is diagonal; endpoints coincide")
    size = pi.size if size is None else size
    n = size - 1
    times = np.asarray(times, dtype=float)
    f = coupling_interpolation(pi, times, size)
    g = np.zeros(times.shape + (n,))
    num = np.zeros(times.shape + (size,))
    kk = np.arange(size)
    for x, y, m in zip(pi.x, pi.y, pi.mass):
        d = int(y - x)
        x = int(x)
        if d == 0:
            num += m * (x >= kk)
            continue
        b = _shifted_binomial(d - 1, times, x, size)
        g += (m * d / v) * b[..., :n]
        tail = np.cumsum(b[..., :n][..., ::-1], axis=-1)[..., ::-1]
        tail = np.concatenate([tail, np.zeros(times.shape + (1,))], axis=-1)
        stepped = np.concatenate([np.zeros(times.shape + (1,)), b[..., :-1]], axis=-1)
        num += m * (times[..., None] * stepped + (1 - d / v) * tail)
    pos = f > 0
    alpha = np.where(pos, num / np.where(pos, f, 1.0), np.nan)
    alpha[..., 0] = 0.0
    alpha[..., -1] = 1.0
    valid = f > MASS_TOL
    with np.errstate(invalid="ignore"):
        in_range = valid & (alpha >= -1e-12) & (alpha <= 1 + 1e-12)
    return CouplingDecomposition(times, v, f, g, alpha, valid, in_range)


def translation_coupling(f, m: int) -> Coupling:
    f = validate_pmf(f)
    xs = np.flatnonzero(f > 0)
    return Coupling(xs, xs + m, f[xs])


def translation_path(f, m: int, t):
    """Mass function and alpha at time ``t`` when ``f`` is shifted ``m`` steps.

    ``alpha_k = t g_{k-1} / f_k``, checked against ``1 - (1-t) g_k / f_k``, with
    ``g = sum_x f_x bin(m-1, t, k-x)``.  Warns when ``f`` is not log-concave.
    """
    f = validate_pmf(f)
    if m < 1:
        raise DomainError("shift must be a positive integer")
    if log_concavity_margins(f).D.min() < -1e-15 or _has_gap(f):
        warnings.warn("translation path of a non-log-concave mass function", stacklevel=2)
    t = np.asarray(t, dtype=float)
    size = f.size + m
    out = np.zeros(t.shape + (size,))
    g = np.zeros(t.shape + (size - 1,))
    for x, fx in enumerate(f):
        if fx:
            out += fx * _shifted_binomial(m, t, x, size)
            g += fx * _shifted_binomial(m - 1, t, x, size - 1)
    gp = np.concatenate([np.zeros(t.shape + (1,)), g], axis=-1)
    gn = np.concatenate([g, np.zeros(t.shape + (1,))], axis=-1)
    pos = out > 0
    safe = np.where(pos, out, 1.0)
    a1 = np.where(pos, t[..., None] * gp / safe, np.nan)
    a2 = np.where(pos, 1 - (1 - t[..., None]) * gn / safe, np.nan)
    a1[..., 0] = 0.0
    a1[..., -1] = 1.0
    valid = out > MASS_TOL
    gap = np.abs(np.where(valid, a1 - a2, 0.0))
    if gap.size and gap.max() > TRANSLATION_AGREE_TOL:
        raise NumericalInconsistency(f"translation alpha forms disagree by {gap.max():.3g}")
    return out, a1


def _has_gap(f) -> bool:
    idx = np.flatnonzero(np.asarray(f) > 0)
    return idx.size > 0 and idx[-1] - idx[0] + 1 != idx.size
