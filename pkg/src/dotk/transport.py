"""Constant-speed paths: recover (v, alpha, g, h) and test the concavity conditions.

A path ``f(t)`` on ``{0..n}`` is constant speed when ``df/dt = -v grad g`` with
``g_k = alpha_{k+1} f_{k+1} + (1 - alpha_k) f_k``.  Everything here works on
arrays whose last axis is the site index ``k`` and whose optional leading
axis is time.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .distributions import MASS_TOL, entropy, validate_pmf
from .errors import (
    BoundaryDegeneracyError,
    ConditionsNotVerified,
    DegenerateSpeedError,
    DomainError,
    NotMonotoneError,
)

ArrayFn = Callable[[float], np.ndarray]

MARGIN_TOL = 1e-10
ALPHA_RANGE_TOL = 1e-12
NEG_G_TOL = 1e-9
DELTA_DENOM_TOL = 1e-13
CONCAVITY_TOL = 1e-8
FD_STEP = 1e-3


# ---------------------------------------------------------------------------
# finite differences in time
# ---------------------------------------------------------------------------


def _uniform(times: np.ndarray) -> bool:
    d = np.diff(times)
    return d.size > 0 and np.allclose(d, d[0], rtol=1e-9, atol=0)


def time_derivative(values: np.ndarray, times: np.ndarray) -> np.ndarray:
    """d/dt along axis 0.

    On a uniform grid the interior uses the five-point stencil, which is one
    Richardson step on top of the central difference; the two points next to
    each end fall back to second order.
    """
    values = np.asarray(values, dtype=float)
    out = np.gradient(values, times, axis=0, edge_order=2)
    if values.shape[0] >= 5 and _uniform(times):
        h = times[1] - times[0]
        y = values
        out[2:-2] = (-y[4:] + 8 * y[3:-1] - 8 * y[1:-3] + y[:-4]) / (12 * h)
    return out


def second_time_derivative(values: np.ndarray, times: np.ndarray) -> np.ndarray:
    """d2/dt2 along axis 0 on a uniform grid (nan where the stencil does not fit)."""
    values = np.asarray(values, dtype=float)
    if not _uniform(times):
        return time_derivative(time_derivative(values, times), times)
    h = times[1] - times[0]
    y = values
    out = np.full_like(y, np.nan)
    if y.shape[0] >= 3:
        out[1:-1] = (y[2:] - 2 * y[1:-1] + y[:-2]) / h**2
    if y.shape[0] >= 5:
        out[2:-2] = (-y[4:] + 16 * y[3:-1] - 30 * y[2:-2] + 16 * y[1:-3] - y[:-4]) / (12 * h**2)
    return out


# ---------------------------------------------------------------------------
# paths
# ---------------------------------------------------------------------------


@dataclass
class DiscretePath:
    """Mass functions sampled on a time grid, plus optional closed forms.

    ``pmf_fn``, ``dfdt_fn`` and ``d2fdt2_fn`` map a scalar time to the mass
    vector and its first and second time derivatives.  When absent, time
    derivatives come from finite differences on the grid.
    """

    times: np.ndarray
    pmfs: np.ndarray
    pmf_fn: Optional[ArrayFn] = None
    dfdt_fn: Optional[ArrayFn] = None
    d2fdt2_fn: Optional[ArrayFn] = None
    vectorized: bool = False

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.pmfs = np.atleast_2d(np.asarray(self.pmfs, dtype=float))
        if self.times.ndim != 1 or self.pmfs.shape[0] != self.times.size:
            raise DomainError("need one PMF per grid time")
        if self.times.size < 2 or np.any(np.diff(self.times) <= 0):
            raise DomainError("times must be strictly increasing with at least two points")
        if self.times[0] < 0 or self.times[-1] > 1:
            raise DomainError("times must lie in [0, 1]")
        if not np.all(np.isfinite(self.pmfs)) or self.pmfs.min() < -1e-15:
            raise DomainError("path has negative or non-finite mass")
        bad = np.abs(self.pmfs.sum(axis=1) - 1.0) > 1e-12
        if np.any(bad):
            j = int(np.flatnonzero(bad)[0])
            validate_pmf(self.pmfs[j], name=f"pmf at t={self.times[j]:.6g}")

    @classmethod
    def from_functions(
        cls, times, pmf_fn: ArrayFn, dfdt_fn=None, d2fdt2_fn=None, vectorized: bool = False
    ) -> "DiscretePath":
        """Sample closed forms on ``times``.

        With ``vectorized=True`` the suppliers accept an array of times and
        return one row per time.
        """
        times = np.asarray(times, dtype=float)
        pmfs = pmf_fn(times) if vectorized else np.array([pmf_fn(t) for t in times])
        return cls(times, pmfs, pmf_fn, dfdt_fn, d2fdt2_fn, vectorized)

    def _eval(self, fn, times) -> np.ndarray:
        times = np.asarray(times, dtype=float)
        if self.vectorized:
            return np.asarray(fn(times), dtype=float)
        return np.array([fn(t) for t in times])

    @property
    def n(self) -> int:
        return self.pmfs.shape[1] - 1

    @property
    def means(self) -> np.ndarray:
        return self.pmfs @ np.arange(self.n + 1)

    def dfdt(self) -> np.ndarray:
        if self.dfdt_fn is not None:
            return self._eval(self.dfdt_fn, self.times)
        return time_derivative(self.pmfs, self.times)

    def d2fdt2(self) -> Optional[np.ndarray]:
        if self.d2fdt2_fn is not None:
            return self._eval(self.d2fdt2_fn, self.times)
        return None

    def entropies(self) -> np.ndarray:
        return entropy(self.pmfs)

    def reversed(self) -> "DiscretePath":
        """The same path run backwards in time."""
        wrap = lambda fn, s: None if fn is None else (lambda t: s * fn(1.0 - t))  # noqa: E731
        return DiscretePath(
            1.0 - self.times[::-1],
            self.pmfs[::-1],
            None if self.pmf_fn is None else (lambda t: self.pmf_fn(1.0 - t)),
            wrap(self.dfdt_fn, -1.0),
            wrap(self.d2fdt2_fn, 1.0),
            self.vectorized,
        )


# ---------------------------------------------------------------------------
# alpha, g, h
# ---------------------------------------------------------------------------


def _cdf_split(x: np.ndarray, F: np.ndarray) -> np.ndarray:
    """Cumulative sums of ``x`` along the site axis with cancellation control.

    Returns ``X_l = sum_{j<=l} x_j`` for ``l = 0..n-1`` where ``x`` sums to zero,
    computed as a head sum where ``F_l <= 1/2`` and as minus the tail sum
    elsewhere.
    """
    head = np.cumsum(x, axis=-1)[..., :-1]
    tail = -np.cumsum(x[..., ::-1], axis=-1)[..., ::-1][..., 1:]
    return np.where(F[..., :-1] <= 0.5, head, tail)


def g_from_flux(f: np.ndarray, dfdt: np.ndarray, v: float) -> np.ndarray:
    """``g_l = -(1/v) dF_l/dt`` for ``l = 0..n-1``."""
    F = np.cumsum(f, axis=-1)
    return -_cdf_split(dfdt, F) / v


def _alpha_numerator(f: np.ndarray, g: np.ndarray) -> np.ndarray:
    """``alpha_k f_k`` from the tail-sum identity, ``k = 0..n``."""
    n = f.shape[-1] - 1
    F = np.cumsum(f, axis=-1)
    G = np.cumsum(g, axis=-1)
    zero = np.zeros(f.shape[:-1] + (1,))
    F_prev = np.concatenate([zero, F[..., :-1]], axis=-1)
    G_prev = np.concatenate([zero, G], axis=-1)
    head = G_prev - F_prev
    S = np.cumsum(f[..., ::-1], axis=-1)[..., ::-1]
    Gamma = np.concatenate([np.cumsum(g[..., ::-1], axis=-1)[..., ::-1], zero], axis=-1)
    tail = S - Gamma
    use_head = F_prev <= 0.5
    use_head[..., 0] = True
    use_head[..., n] = False
    num = np.where(use_head, head, tail)
    num[..., 0] = 0.0
    return num


def alpha_from_path(f: np.ndarray, g: np.ndarray, mass_tol: float = MASS_TOL):
    """Recover alpha from ``f`` and ``g``; returns ``(alpha, valid)``.

    alpha is finite wherever ``f_k > 0``; ``valid`` marks ``f_k > mass_tol``.
    """
    num = _alpha_numerator(f, g)
    pos = f > 0
    alpha = np.where(pos, num / np.where(pos, f, 1.0), np.nan)
    alpha[..., 0] = 0.0
    alpha[..., -1] = 1.0
    return alpha, f > mass_tol


def alpha_time_derivative(f, g, dfdt, d2fdt2, v):
    """Closed-form ``d alpha/dt`` from first and second derivatives of ``f``."""
    alpha, _ = alpha_from_path(f, g)
    dg = g_from_flux(f, d2fdt2, v)
    dnum = _alpha_numerator_derivative(f, dfdt, dg)
    pos = f > 0
    out = np.where(pos, (dnum - alpha * dfdt) / np.where(pos, f, 1.0), np.nan)
    out[..., 0] = 0.0
    out[..., -1] = 0.0
    return out


def _alpha_numerator_derivative(f, dfdt, dg):
    n = f.shape[-1] - 1
    F = np.cumsum(f, axis=-1)
    zero = np.zeros(f.shape[:-1] + (1,))
    F_prev = np.concatenate([zero, F[..., :-1]], axis=-1)
    head = np.concatenate([zero, np.cumsum(dg, axis=-1)], axis=-1) - np.concatenate(
        [zero, np.cumsum(dfdt, axis=-1)[..., :-1]], axis=-1
    )
    tail = np.cumsum(dfdt[..., ::-1], axis=-1)[..., ::-1] - np.concatenate(
        [np.cumsum(dg[..., ::-1], axis=-1)[..., ::-1], zero], axis=-1
    )
    use_head = F_prev <= 0.5
    use_head[..., 0] = True
    use_head[..., n] = False
    return np.where(use_head, head, tail)


def mixture_g(f: np.ndarray, alpha: np.ndarray) -> np.ndarray:
    """``g_k = alpha_{k+1} f_{k+1} + (1 - alpha_k) f_k``, ``k = 0..n-1``."""
    return alpha[..., 1:] * f[..., 1:] + (1.0 - alpha[..., :-1]) * f[..., :-1]


def h_from_alpha(f, alpha, dalpha_dt, v: float) -> np.ndarray:
    """Second-order transport coefficients ``h_k``, ``k = 0..n-2``."""
    if v == 0:
        raise DegenerateSpeedError("h is undefined for zero speed")
    f = np.asarray(f, dtype=float)
    a = np.asarray(alpha, dtype=float)
    da = np.asarray(dalpha_dt, dtype=float)
    a0, a1, a2 = a[..., :-2], a[..., 1:-1], a[..., 2:]
    f0, f1, f2 = f[..., :-2], f[..., 1:-1], f[..., 2:]
    return (1 - a0) * (1 - a1) * f0 + 2 * a1 * (1 - a1) * f1 + a1 * a2 * f2 - f1 * da[..., 1:-1] / v


def glc_margins(f, alpha) -> np.ndarray:
    """``alpha_{k+1}(1-alpha_{k+1}) f_{k+1}^2 - alpha_{k+2}(1-alpha_k) f_k f_{k+2}``, ``k = 0..n-2``."""
    f = np.asarray(f, dtype=float)
    a = np.asarray(alpha, dtype=float)
    return a[..., 1:-1] * (1 - a[..., 1:-1]) * f[..., 1:-1] ** 2 - a[..., 2:] * (1 - a[..., :-2]) * f[
        ..., :-2
    ] * f[..., 2:]


def _AB(f, g):
    """``A_k = f_{k+1} g_k - f_k g_{k+1}`` and ``B_k = f_{k+1} g_{k+1} - f_{k+2} g_k``."""
    f0, f1, f2 = f[..., :-2], f[..., 1:-1], f[..., 2:]
    g0, g1 = g[..., :-1], g[..., 1:]
    return f1 * g0 - f0 * g1, f1 * g1 - f2 * g0


def h_tilde(f, g, threshold: float = DELTA_DENOM_TOL):
    """Upper envelope for ``h`` used by the Delta condition.

    Returns ``(values, evaluated)``; entries with ``D_{k+1} <= threshold`` are
    nan and flagged as skipped.
    """
    f = np.asarray(f, dtype=float)
    g = np.asarray(g, dtype=float)
    f0, f1, f2 = f[..., :-2], f[..., 1:-1], f[..., 2:]
    g0, g1 = g[..., :-1], g[..., 1:]
    D = f1**2 - f0 * f2
    ok = D > threshold
    num = 2 * g0 * g1 * f1 - g0**2 * f2 - g1**2 * f0
    vals = np.where(ok, num / np.where(ok, D, 1.0), np.nan)
    return vals, ok


def delta_split(f, alpha, dalpha_dt, v: float, threshold: float = DELTA_DENOM_TOL):
    """The two pieces whose sum is ``h_tilde - h``.

    The first piece is nonnegative under k-MON and GLC, the second under t-MON.
    Entries with ``D_{k+1} <= threshold`` are nan.
    """
    f = np.asarray(f, dtype=float)
    a = np.asarray(alpha, dtype=float)
    g = mixture_g(f, a)
    A, B = _AB(f, g)
    f0, f1, f2 = f[..., :-2], f[..., 1:-1], f[..., 2:]
    D = f1**2 - f0 * f2
    ok = D > threshold
    spatial = (f2 * (a[..., 2:] - a[..., 1:-1]) * A + f0 * (a[..., 1:-1] - a[..., :-2]) * B) / np.where(
        ok, D, np.nan
    )
    temporal = f1 * np.asarray(dalpha_dt)[..., 1:-1] / v
    return spatial, temporal


# ---------------------------------------------------------------------------
# decomposition
# ---------------------------------------------------------------------------


@dataclass
class TransportDecomposition:
    """Speed, alpha, g and h of a constant-speed path on its time grid."""

    times: np.ndarray
    v: float
    alpha: np.ndarray
    dalpha: np.ndarray
    g: np.ndarray
    h: np.ndarray
    valid: np.ndarray
    closed_form: bool
    g_mixture_error: float = 0.0
    mean_speed_error: float = 0.0

    @property
    def beta(self) -> np.ndarray:
        """Kinetic term ``sum_k g_k v^2`` per time."""
        return self.g.sum(axis=-1) * self.v**2

    @property
    def alpha_violations(self) -> int:
        a = np.where(self.valid, self.alpha, 0.5)
        return int(np.sum((a < -ALPHA_RANGE_TOL) | (a > 1 + ALPHA_RANGE_TOL)))


def decompose_constant_speed(path: DiscretePath, mass_tol: float = MASS_TOL) -> TransportDecomposition:
    """Recover the unique (v, alpha, g, h) of a constant-speed path."""
    if path.dfdt_fn is None and path.times.size < 3:
        raise DomainError("need three grid points or a closed-form derivative")
    f = path.pmfs
    n = path.n
    lam = path.means
    span = path.times[-1] - path.times[0]
    v = float((lam[-1] - lam[0]) / span)
    if n == 0 or abs(v) < 1e-14:
        raise DegenerateSpeedError("endpoint means coincide; speed is zero")
    fdot = path.dfdt()
    g = g_from_flux(f, fdot, v)
    if g.min() < -NEG_G_TOL:
        raise NotMonotoneError(f"g has negative mass {g.min():.3g}: not a monotone transport path")
    alpha, valid = alpha_from_path(f, g, mass_tol)
    f2dot = path.d2fdt2()
    if f2dot is not None:
        dalpha = alpha_time_derivative(f, g, fdot, f2dot, v)
        closed = True
    else:
        dalpha = time_derivative(alpha, path.times)
        dalpha[:, 0] = 0.0
        dalpha[:, -1] = 0.0
        closed = False
    h = h_from_alpha(f, alpha, dalpha, v)
    mix = mixture_g(f, alpha)
    mix_err = np.abs(np.where(np.isfinite(mix), mix - g, 0.0)).max()
    dlam = -fdot[:, :-1].cumsum(axis=1).sum(axis=1)
    return TransportDecomposition(
        times=path.times,
        v=v,
        alpha=alpha,
        dalpha=dalpha,
        g=g,
        h=h,
        valid=valid,
        closed_form=closed,
        g_mixture_error=float(mix_err),
        mean_speed_error=float(np.abs(dlam - v).max()),
    )


def transport_residual(path: DiscretePath, decomp: TransportDecomposition) -> np.ndarray:
    """``|df/dt + v grad g|`` per (t, k) with ``g`` rebuilt from alpha."""
    g = mixture_g(path.pmfs, decomp.alpha)
    gp = np.pad(g, [(0, 0), (1, 1)])
    return np.abs(path.dfdt() + decomp.v * np.diff(gp, axis=1))


def second_order_residual(path: DiscretePath, decomp: TransportDecomposition) -> np.ndarray:
    """``|d2f/dt2 - v^2 grad_2 h|`` per (t, k); finite differences when no closed form."""
    f2 = path.d2fdt2()
    if f2 is None:
        f2 = second_time_derivative(path.pmfs, path.times)
    hp = np.pad(decomp.h, [(0, 0), (2, 2)])
    lap = hp[:, 2:] - 2 * hp[:, 1:-1] + hp[:, :-2]
    return np.abs(f2 - decomp.v**2 * lap)


# ---------------------------------------------------------------------------
# entropy second derivative
# ---------------------------------------------------------------------------


def _h2_rows(f, g, h, v, tol=1e-13):
    """Transport-form H'' for each row; nan where a zero mass carries flux."""
    f = np.atleast_2d(f)
    g = np.atleast_2d(g)
    h = np.atleast_2d(h)
    T = f.shape[0]
    flux = v * np.diff(np.pad(g, [(0, 0), (1, 1)]), axis=1)
    hp = np.pad(h, [(0, 0), (2, 2)])
    lap = v**2 * (hp[:, 2:] - 2 * hp[:, 1:-1] + hp[:, :-2])
    pos = f > 0
    safe = np.where(pos, f, 1.0)
    zero_ok = (np.abs(flux) <= tol) & (np.abs(np.nan_to_num(lap, nan=np.inf)) <= tol)
    bad = (~pos & ~zero_ok) | (pos & ~(np.isfinite(lap) & np.isfinite(flux)))
    with np.errstate(invalid="ignore"):
        val = -np.sum(np.where(pos, lap * np.log(safe), 0.0), axis=1) - np.sum(
            np.where(pos, flux**2 / safe, 0.0), axis=1
        )
    out = np.where(bad.any(axis=1), np.nan, val)
    return out.reshape(T)


def _h2_transport(f, g, h, v, tol=1e-13):
    val = _h2_rows(f, g, h, v, tol)[0]
    if not np.isfinite(val):
        raise BoundaryDegeneracyError("a zero mass carries nonzero flux, or h is undefined at a positive mass")
    return float(val)


FD_LEVELS = 5
FD_AGREE = 1e-7


def _h2_fd_fixed(path: "DiscretePath", times, steps) -> np.ndarray:
    offs = np.array([-2, -1, 0, 1, 2])
    pts = np.clip(times[:, None] + offs * steps[:, None], 0.0, 1.0)
    H = entropy(path._eval(path.pmf_fn, pts.ravel())).reshape(pts.shape)
    return (-H[:, 4] + 16 * H[:, 3] - 30 * H[:, 2] + 16 * H[:, 1] - H[:, 0]) / (12 * steps**2)


def _h2_fd_closed(path: "DiscretePath", times, step: float = FD_STEP, levels: int = FD_LEVELS) -> np.ndarray:
    """Five-point H'' with closed-form masses; nan at the ends.

    The step starts at ``step`` and is halved until two successive estimates
    agree to ``FD_AGREE`` relative, at most ``levels - 1`` times.  Masses that
    change on a short time scale need the smaller steps.
    """
    times = np.asarray(times, dtype=float)
    steps = np.minimum(step, np.minimum(times, 1 - times) / 2)
    ok = steps > 0
    steps = np.where(ok, steps, 1.0)
    out = _h2_fd_fixed(path, times, steps)
    todo = np.arange(times.size)
    for _ in range(max(levels, 1) - 1):
        if not todo.size:
            break
        steps[todo] /= 2
        finer = _h2_fd_fixed(path, times[todo], steps[todo])
        done = np.abs(out[todo] - finer) <= FD_AGREE * np.maximum(1.0, np.abs(finer))
        out[todo] = finer
        todo = todo[~done]
    return np.where(ok, out, np.nan)


def entropy_second_derivative(path: DiscretePath, decomp: TransportDecomposition, t) -> float:
    """H''(t) from the transport form ``-sum v^2 grad_2 h log f - sum (v grad g)^2 / f``.

    ``t`` is a grid index or a time that lies on the grid.
    """
    j = _grid_index(path.times, t)
    return _h2_transport(path.pmfs[j], decomp.g[j], decomp.h[j], decomp.v)


def entropy_second_derivative_fd(path: DiscretePath, t) -> float:
    """Finite-difference H''(t); closed-form PMFs allow a step off the grid."""
    j = _grid_index(path.times, t)
    if path.pmf_fn is not None:
        return float(_h2_fd_closed(path, path.times[j : j + 1])[0])
    return float(second_time_derivative(path.entropies(), path.times)[j])


def _grid_index(times: np.ndarray, t) -> int:
    if isinstance(t, (int, np.integer)):
        return int(t)
    j = int(np.argmin(np.abs(times - t)))
    if abs(times[j] - t) > 1e-12:
        raise DomainError(f"t={t} is not a grid time")
    return j


# ---------------------------------------------------------------------------
# condition report
# ---------------------------------------------------------------------------


@dataclass
class ConditionReport:
    """Margins for k-MON, t-MON, GLC and Delta, plus H'' computed two ways.

    Margin arrays hold nan where a point was not evaluated.
    """

    times: np.ndarray
    kmon: np.ndarray
    tmon: np.ndarray
    glc: np.ndarray
    delta: np.ndarray
    h2: np.ndarray
    h2_fd: np.ndarray
    tol: float = MARGIN_TOL
    concavity_tol: float = CONCAVITY_TOL
    evaluated_times: Optional[np.ndarray] = None

    @staticmethod
    def _min(x):
        x = x[np.isfinite(x)]
        return float(x.min()) if x.size else float("inf")

    def min_margin(self, name: str) -> float:
        return self._min(getattr(self, name))

    @property
    def h2_max(self) -> float:
        x = self.h2[np.isfinite(self.h2)]
        return float(x.max()) if x.size else float("-inf")

    @property
    def h2_discrepancy(self) -> np.ndarray:
        return np.abs(self.h2 - self.h2_fd)

    @property
    def verdicts(self) -> dict:
        out = {name: self.min_margin(name) >= -self.tol for name in ("kmon", "tmon", "glc", "delta")}
        out["concave"] = self.h2_max <= self.concavity_tol
        return out


def trimmed_times(path: DiscretePath) -> np.ndarray:
    """Grid mask dropping times with an exactly vanishing mass, and their neighbours."""
    zero = np.any(path.pmfs <= 0, axis=1)
    keep = ~zero
    keep[1:] &= ~zero[:-1]
    keep[:-1] &= ~zero[1:]
    return keep


def condition_report(
    decomp: TransportDecomposition,
    path: DiscretePath,
    tol: float = MARGIN_TOL,
    concavity_tol: float = CONCAVITY_TOL,
) -> ConditionReport:
    """Evaluate every condition margin and H'' on the (trimmed) grid."""
    f = path.pmfs
    a = decomp.alpha
    ok = decomp.valid & trimmed_times(path)[:, None]
    nan = np.nan
    kmon = np.where(ok[:, 1:] & ok[:, :-1], a[:, 1:] - a[:, :-1], nan)
    tmon = np.where(ok & np.isfinite(decomp.dalpha), decomp.dalpha, nan)
    ok3 = ok[:, :-2] & ok[:, 1:-1] & ok[:, 2:]
    glc = np.where(ok3, glc_margins(f, a), nan)
    ht, evaluated = h_tilde(f, decomp.g)
    delta = np.where(evaluated & ok3 & np.isfinite(decomp.h), ht - decomp.h, nan)
    keep_t = trimmed_times(path)
    h2 = np.where(keep_t, _h2_rows(f, decomp.g, decomp.h, decomp.v), nan)
    if path.pmf_fn is not None:
        h2_fd = _h2_fd_closed(path, path.times)
    else:
        h2_fd = second_time_derivative(path.entropies(), path.times)
    h2_fd = np.where(keep_t, h2_fd, nan)
    return ConditionReport(
        times=path.times,
        kmon=kmon,
        tmon=tmon,
        glc=glc,
        delta=delta,
        h2=h2,
        h2_fd=h2_fd,
        tol=tol,
        concavity_tol=concavity_tol,
        evaluated_times=keep_t,
    )


# ---------------------------------------------------------------------------
# concavity certificate
# ---------------------------------------------------------------------------


@dataclass
class ConcavityCertificate:
    bound: float
    remainder: np.ndarray
    log_terms: np.ndarray
    theta_terms: np.ndarray
    identity_residual: float
    remainder_residual: float


def theta(x):
    """``1/(2x) - x/2``, an upper bound for ``-log x`` on ``(0, 1]``."""
    x = np.asarray(x, dtype=float)
    return 1.0 / (2 * x) - x / 2


def concavity_certificate(f, g, h, v: float, alpha=None, tol: float = MARGIN_TOL) -> ConcavityCertificate:
    """Certified upper bound on H'' at one time, built from k-MON, GLC and Delta.

    Raises ConditionsNotVerified if any of those fails, or if some mass or
    some ``g_k`` vanishes (the bound divides by them).
    """
    f = np.asarray(f, dtype=float)
    g = np.asarray(g, dtype=float)
    h = np.asarray(h, dtype=float)
    n = f.size - 1
    if n < 1:
        return ConcavityCertificate(0.0, np.zeros(0), np.zeros(0), np.zeros(0), 0.0, 0.0)
    if f.min() <= 0 or g.min() <= 0:
        raise ConditionsNotVerified("certificate needs strictly positive f and g")
    if alpha is not None:
        alpha = np.asarray(alpha, dtype=float)
        if np.min(np.diff(alpha), initial=np.inf) < -tol:
            raise ConditionsNotVerified("k-MON fails")
        if np.min(glc_margins(f, alpha), initial=np.inf) < -tol:
            raise ConditionsNotVerified("GLC fails")
    A, B = _AB(f, g)
    if min(A.min(initial=np.inf), B.min(initial=np.inf)) < -tol:
        raise ConditionsNotVerified("score ratios exceed one (k-MON/GLC consequence fails)")
    ht, ev = h_tilde(f, g)
    if np.any(ev & (h > ht + tol)):
        raise ConditionsNotVerified("Delta fails")
    f0, f1, f2 = f[:-2], f[1:-1], f[2:]
    g0, g1 = g[:-1], g[1:]
    D = f1**2 - f0 * f2
    log_terms = -np.log(f0 * f2 / f1**2)
    theta_terms = D / (2 * f1 * g0 * g1) * (g0**2 / f0 + g1**2 / f2)
    lhs_factor = A * g1 - B * g0
    rhs_factor = f2 * g0**2 - f0 * g1**2
    remainder_lhs = -lhs_factor * rhs_factor / (2 * f0 * f1 * f2 * g0 * g1)
    remainder = -(f0 * f1 * f2) / (2 * g0 * g1) * (g0**2 / (f0 * f1) - g1**2 / (f1 * f2)) ** 2
    boundary = g[0] ** 2 / f[1] + g[-1] ** 2 / f[-2]
    bound = v**2 * (remainder.sum() - boundary)
    return ConcavityCertificate(
        bound=float(bound),
        remainder=remainder,
        log_terms=log_terms,
        theta_terms=theta_terms,
        identity_residual=float(np.abs(lhs_factor - rhs_factor).max(initial=0.0)),
        remainder_residual=float(np.abs(remainder_lhs - remainder).max(initial=0.0)),
    )
