"""Bernoulli sums, binomials and elementary functionals of mass functions.

Mass functions are plain 1-D ``numpy`` arrays indexed ``k = 0..n``.  Any
index outside the array reads as an exact zero; every margin below relies
on that convention.
"""

from __future__ import annotations

from dataclasses import dataclass
from math import comb
from typing import Iterable, NamedTuple, Sequence

import numpy as np

from .errors import DomainError

MASS_TOL = 1e-13
PMF_SUM_TOL = 1e-12
NEG_MASS_TOL = -1e-15
DEFAULT_MAX_N = 60


def validate_pmf(f, *, name: str = "pmf") -> np.ndarray:
    """Return ``f`` as a float array after checking the PMF invariants."""
    f = np.asarray(f, dtype=float)
    if f.ndim != 1 or f.size == 0:
        raise DomainError(f"{name} must be a non-empty 1-D array")
    if not np.all(np.isfinite(f)):
        raise DomainError(f"{name} has non-finite entries")
    if f.min() < NEG_MASS_TOL:
        raise DomainError(f"{name} has negative mass {f.min():.3g}")
    if abs(f.sum() - 1.0) > PMF_SUM_TOL:
        raise DomainError(f"{name} sums to {f.sum():.17g}, not 1")
    return f


def at(f: np.ndarray, k) -> np.ndarray:
    """Read ``f[..., k]`` with zero outside ``0..len-1``; ``k`` may be an array."""
    f = np.asarray(f)
    k = np.asarray(k)
    size = f.shape[-1]
    inside = (k >= 0) & (k < size)
    vals = np.take(f, np.clip(k, 0, size - 1), axis=-1)
    return np.where(inside, vals, 0.0)


def pad(f: np.ndarray, before: int, after: int) -> np.ndarray:
    """Zero-pad the last axis."""
    width = [(0, 0)] * (np.ndim(f) - 1) + [(before, after)]
    return np.pad(f, width)


def convolve_bernoulli(probs) -> np.ndarray:
    """Mass function of a Bernoulli sum, broadcasting over leading axes.

    ``probs`` has shape ``(..., m)``; the result has shape ``(..., m + 1)``.
    Factors are multiplied in index order with ascending accumulation, so a
    parameter equal to exactly 0 leaves the running product bit-for-bit
    unchanged.
    """
    probs = np.asarray(probs, dtype=float)
    m = probs.shape[-1]
    out = np.zeros(probs.shape[:-1] + (m + 1,))
    out[..., 0] = 1.0
    for i in range(m):
        p = probs[..., i, None]
        up = out[..., : i + 1] * p
        out[..., : i + 1] *= 1.0 - p
        out[..., 1 : i + 2] += up
    return out


def binomial_pmf(n: int, p, k=None) -> np.ndarray:
    """``bin(n, p, k)``; with ``k=None`` the whole vector ``k = 0..n``.

    ``n < 0`` gives the zero function.  ``p`` may be an array, in which case
    the mass vector is placed on the last axis.
    """
    p = np.asarray(p, dtype=float)
    if k is None:
        k = np.arange(max(n, -1) + 1)
        p = p[..., None]
    k = np.asarray(k)
    if n < 0:
        return np.zeros(np.broadcast(p, k).shape)
    inside = (k >= 0) & (k <= n)
    kk = np.clip(k, 0, n)
    coef = np.array([comb(n, j) for j in range(n + 1)], dtype=float)[kk]
    vals = coef * p**kk * (1.0 - p) ** (n - kk)
    return np.where(inside, vals, 0.0)


@dataclass(frozen=True)
class BernoulliSystem:
    """Independent Bernoulli parameters moving on straight lines in ``t``."""

    p_start: np.ndarray
    p_end: np.ndarray

    def __post_init__(self):
        a = np.atleast_1d(np.asarray(self.p_start, dtype=float))
        b = np.atleast_1d(np.asarray(self.p_end, dtype=float))
        if a.shape != b.shape or a.ndim != 1:
            raise DomainError("p_start and p_end must be 1-D of equal length")
        for name, arr in (("p_start", a), ("p_end", b)):
            if arr.size and (not np.all(np.isfinite(arr)) or arr.min() < 0 or arr.max() > 1):
                raise DomainError(f"{name} has a parameter outside [0, 1]")
        a.setflags(write=False)
        b.setflags(write=False)
        object.__setattr__(self, "p_start", a)
        object.__setattr__(self, "p_end", b)

    @classmethod
    def constant(cls, probs: Sequence[float]) -> "BernoulliSystem":
        return cls(probs, probs)

    @classmethod
    def binomial(cls, n: int, p: float, q: float) -> "BernoulliSystem":
        return cls(np.full(n, float(p)), np.full(n, float(q)))

    @property
    def n(self) -> int:
        return self.p_start.size

    @property
    def dp(self) -> np.ndarray:
        """Parameter derivatives ``p_i'``."""
        return self.p_end - self.p_start

    @property
    def speed(self) -> float:
        """``v = sum p_i'``."""
        return float(self.dp.sum())

    @property
    def monotone(self) -> bool:
        return bool(np.all(self.dp >= 0))

    @property
    def symmetric(self) -> bool:
        """All ``p_i'`` equal, the case where alpha is ``k/n``."""
        return self.n > 0 and bool(np.ptp(self.dp) == 0.0)

    def params(self, t) -> np.ndarray:
        """``p_i(t)``; shape ``(n,)`` for scalar ``t``, ``(T, n)`` for arrays."""
        t = np.asarray(t, dtype=float)
        if np.any((t < 0) | (t > 1)):
            raise DomainError("t must lie in [0, 1]")
        p = self.p_start * (1.0 - t[..., None]) + self.p_end * t[..., None]
        return np.clip(p, 0.0, 1.0)

    def strip_deterministic(self) -> tuple["BernoulliSystem", int]:
        """Drop parameters fixed at 0 or 1; return the rest and the shift."""
        fixed = self.dp == 0
        ones = fixed & (self.p_start == 1.0)
        zeros = fixed & (self.p_start == 0.0)
        keep = ~(ones | zeros)
        return BernoulliSystem(self.p_start[keep], self.p_end[keep]), int(ones.sum())

    def to_dict(self) -> dict:
        return {"p_start": self.p_start.tolist(), "p_end": self.p_end.tolist()}


def bernoulli_sum_pmf(system: BernoulliSystem, t) -> np.ndarray:
    """Mass function of ``sum_i B_i`` with ``B_i ~ Bernoulli(p_i(t))``."""
    return convolve_bernoulli(system.params(t))


def leave_out_pmf(system: BernoulliSystem, t, excluded: Iterable[int]) -> np.ndarray:
    """Bernoulli sum omitting the factors in ``excluded`` (0-based, 1 or 2 of them)."""
    excluded = sorted(set(int(i) for i in excluded))
    if not 1 <= len(excluded) <= 2:
        raise DomainError("exclude one or two distinct indices")
    if excluded[0] < 0 or excluded[-1] >= system.n:
        raise DomainError(f"excluded index out of range for n={system.n}")
    p = np.delete(system.params(t), excluded, axis=-1)
    return convolve_bernoulli(p)


def leave_one_out_all(p: np.ndarray) -> np.ndarray:
    """All leave-one-out sums: ``(..., n)`` params -> ``(..., n, n)``.

    Entry ``[..., i, k]`` is ``f^{(i)}_k`` for ``k = 0..n-1``.
    """
    n = p.shape[-1]
    q = np.repeat(p[..., None, :], n, axis=-2)
    idx = np.arange(n)
    q[..., idx, idx] = 0.0
    return convolve_bernoulli(q)[..., :n]


def leave_two_out_all(p: np.ndarray) -> np.ndarray:
    """All leave-two-out sums: ``(..., n)`` -> ``(..., n, n, max(n-1, 0))``.

    Entry ``[..., i, j, k]`` is ``f^{(i,j)}_k``; the diagonal ``i == j`` is
    filled with zeros and must not be used.
    """
    n = p.shape[-1]
    width = max(n - 1, 0)
    out = np.zeros(p.shape[:-1] + (n, n, width))
    if n < 2:
        return out
    iu, ju = np.triu_indices(n, 1)
    pairs = np.arange(iu.size)
    q = np.broadcast_to(p[..., None, :], p.shape[:-1] + (iu.size, n)).copy()
    q[..., pairs, iu] = 0.0
    q[..., pairs, ju] = 0.0
    vals = convolve_bernoulli(q)[..., :width]
    out[..., iu, ju, :] = vals
    out[..., ju, iu, :] = vals
    return out


def entropy(f) -> float:
    """Shannon entropy in nats, with ``0 log 0 = 0``."""
    f = np.asarray(f, dtype=float)
    pos = f > 0
    safe = np.where(pos, f, 1.0)
    return -np.sum(np.where(pos, f * np.log(safe), 0.0), axis=-1)


class LogConcavityMargins(NamedTuple):
    D: np.ndarray
    E: np.ndarray


def log_concavity_margins(f) -> LogConcavityMargins:
    """``D_k = f_k^2 - f_{k-1} f_{k+1}`` and ``E_k = f_k f_{k-1} - f_{k-2} f_{k+1}``, ``k = 0..n``."""
    f = np.asarray(f, dtype=float)
    k = np.arange(f.shape[-1])
    D = at(f, k) ** 2 - at(f, k - 1) * at(f, k + 1)
    E = at(f, k) * at(f, k - 1) - at(f, k - 2) * at(f, k + 1)
    return LogConcavityMargins(D, E)


def ulc_margins(f, n: int) -> np.ndarray:
    """Left-hand sides of the order-``n`` ultra log-concavity inequalities, ``k = 0..n-2``."""
    f = np.asarray(f, dtype=float)
    if f.size > n + 1:
        if np.any(f[n + 1 :] != 0):
            raise DomainError(f"support exceeds {{0..{n}}}")
        f = f[: n + 1]
    f = pad(f, 0, n + 1 - f.size)
    k = np.arange(max(n - 1, 0))
    return ((k + 1) / n) * (1 - (k + 1) / n) * f[k + 1] ** 2 - ((k + 2) / n) * (1 - k / n) * f[k] * f[k + 2]


def mean(f) -> float:
    f = np.asarray(f, dtype=float)
    return float(np.dot(np.arange(f.size), f))
