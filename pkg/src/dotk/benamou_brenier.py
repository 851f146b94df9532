"""Discrete Benamou-Brenier action, the distance it induces, and two-point contrasts.

The action of a path ``f`` with interpolation weights alpha is
``int_0^1 beta(t) dt`` where ``beta = sum_k g_k v_k^2`` and the velocities
solve ``v_k g_k = -dF_k/dt``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.integrate import quad
from scipy.linalg import solve_banded
from scipy.optimize import isotonic_regression

from .couplings import coupling_interpolation, monotone_coupling
from .distributions import validate_pmf
from .errors import DomainError
from .transport import DiscretePath, alpha_from_path, g_from_flux, mixture_g

ZERO_G = 1e-13


@dataclass
class ActionEvaluation:
    action_sq: float
    beta: np.ndarray
    velocity: np.ndarray
    quadrature_error: float

    @property
    def length(self) -> float:
        return float(np.sqrt(self.action_sq))


def _beta(flux: np.ndarray, g: np.ndarray):
    """Per-time kinetic energy; ``+inf`` where flux crosses an empty ``g``."""
    empty = g <= ZERO_G
    blocked = empty & (np.abs(flux) > ZERO_G)
    safe = np.where(empty, 1.0, g)
    vel = np.where(empty, 0.0, flux / safe)
    vel = np.where(blocked, np.inf, vel)
    terms = np.where(empty, 0.0, flux**2 / safe)
    beta = terms.sum(axis=-1)
    beta = np.where(blocked.any(axis=-1), np.inf, beta)
    return beta, vel


def _trapezoid_with_error(y: np.ndarray, t: np.ndarray):
    total = float(np.trapezoid(y, t))
    if not np.isfinite(total) or t.size < 3 or (t.size - 1) % 2:
        return total, float("nan") if np.isfinite(total) else float("inf")
    coarse = float(np.trapezoid(y[::2], t[::2]))
    return total, abs(total - coarse) / 3.0


def path_action(path: DiscretePath, alpha: np.ndarray, dfdt: Optional[np.ndarray] = None) -> ActionEvaluation:
    """Action of ``path`` under weights ``alpha`` (one row per grid time).

    Flux through an empty ``g`` gives an infinite action, not an exception.
    """
    alpha = np.asarray(alpha, dtype=float)
    if alpha.shape != path.pmfs.shape:
        raise DomainError("alpha must have one row per grid time and n+1 columns")
    if np.any(alpha[:, 0] != 0) or np.any(alpha[:, -1] != 1):
        raise DomainError("alpha must be 0 at k=0 and 1 at k=n")
    if np.nanmin(alpha) < -1e-12 or np.nanmax(alpha) > 1 + 1e-12:
        raise DomainError("alpha must lie in [0, 1]")
    if dfdt is None:
        dfdt = path.dfdt()
    flux = -np.cumsum(dfdt, axis=1)[:, :-1]
    g = mixture_g(path.pmfs, alpha)
    beta, vel = _beta(flux, g)
    total, err = _trapezoid_with_error(beta, path.times)
    return ActionEvaluation(total, beta, vel, err)


def vn_lower_bound(f0, f1) -> float:
    """``|mean(f1) - mean(f0)|``."""
    f0, f1 = _common(f0, f1)
    k = np.arange(f0.size)
    return float(abs(k @ f1 - k @ f0))


def w1_distance(f0, f1) -> float:
    """``sum_k |F1_k - F0_k|``."""
    f0, f1 = _common(f0, f1)
    return float(np.abs(np.cumsum(f1) - np.cumsum(f0))[:-1].sum())


def _common(f0, f1):
    f0 = validate_pmf(f0, name="f0")
    f1 = validate_pmf(f1, name="f1")
    size = max(f0.size, f1.size)
    return np.pad(f0, (0, size - f0.size)), np.pad(f1, (0, size - f1.size))


def stochastically_ordered(f0, f1, tol: float = 1e-12) -> bool:
    """True when ``f0`` lies below ``f1`` in the usual stochastic order."""
    f0, f1 = _common(f0, f1)
    return bool(np.all(np.cumsum(f0) >= np.cumsum(f1) - tol))


# ---------------------------------------------------------------------------
# concatenation
# ---------------------------------------------------------------------------


@dataclass
class Concatenation:
    path: DiscretePath
    alpha: np.ndarray
    dfdt: np.ndarray
    rho: float
    length_a: float
    length_b: float

    @property
    def action_sq(self) -> float:
        """Action of the joined path; equals ``(length_a + length_b)^2`` at the optimal split."""
        a, b, r = self.length_a, self.length_b, self.rho
        if r <= 0:
            return b**2
        if r >= 1:
            return a**2
        return a**2 / r + b**2 / (1 - r)

    @property
    def length(self) -> float:
        return float(np.sqrt(self.action_sq))


def concatenate_paths(path_a: DiscretePath, alpha_a, path_b: DiscretePath, alpha_b, tol: float = 1e-12) -> Concatenation:
    """Run ``path_a`` then ``path_b``, switching at ``rho = I(a) / (I(a) + I(b))``."""
    if np.abs(path_a.pmfs[-1] - path_b.pmfs[0]).max() > tol or path_a.n != path_b.n:
        raise DomainError("path_a must end where path_b starts")
    if path_a.times[0] != 0 or path_a.times[-1] != 1 or path_b.times[0] != 0 or path_b.times[-1] != 1:
        raise DomainError("both legs must be parametrized on [0, 1]")
    da, db = path_a.dfdt(), path_b.dfdt()
    ia = path_action(path_a, alpha_a, da).length
    ib = path_action(path_b, alpha_b, db).length
    alpha_a = np.asarray(alpha_a, float)
    alpha_b = np.asarray(alpha_b, float)
    if ib == 0:
        return Concatenation(path_a, alpha_a, da, 1.0, ia, ib)
    if ia == 0:
        return Concatenation(path_b, alpha_b, db, 0.0, ia, ib)
    rho = ia / (ia + ib)
    times = np.concatenate([rho * path_a.times, rho + (1 - rho) * path_b.times[1:]])
    pmfs = np.concatenate([path_a.pmfs, path_b.pmfs[1:]])
    alpha = np.concatenate([alpha_a, alpha_b[1:]])
    dfdt = np.concatenate([da / rho, db[1:] / (1 - rho)])
    return Concatenation(DiscretePath(times, pmfs), alpha, dfdt, rho, ia, ib)


# ---------------------------------------------------------------------------
# numerical minimization
# ---------------------------------------------------------------------------


@dataclass
class OptimizerConfig:
    grid: int = 51
    max_iter: int = 5000
    step: float = 1e-2
    penalty: float = 1e12
    rtol: float = 1e-12
    seed: int = 0
    init: str = "auto"


@dataclass
class MinimizationResult:
    """Best path found, its weights at interval midpoints, and diagnostics.

    ``best_alpha`` has one row per grid interval; ``beta`` is the kinetic
    energy on each interval.
    """

    best_path: DiscretePath
    best_alpha: np.ndarray
    beta: np.ndarray
    vn_estimate: float
    lower_bound: float
    iterations: int
    converged: bool
    history: list = field(default_factory=list)

    @property
    def beta_variance(self) -> float:
        return float(np.var(self.beta))

    @property
    def beta_cv(self) -> float:
        m = float(np.mean(self.beta))
        return float(np.std(self.beta) / m) if m > 0 else 0.0

    @property
    def relative_gap(self) -> float:
        if self.lower_bound == 0:
            return float("inf") if self.vn_estimate > 0 else 0.0
        return (self.vn_estimate - self.lower_bound) / self.lower_bound

    def restricted_length(self, s: float) -> float:
        """Length of the path cut at time ``s`` and rescaled to [0, 1]."""
        if not 0 <= s <= 1:
            raise DomainError("s must lie in [0, 1]")
        t = self.best_path.times
        mids = 0.5 * (t[1:] + t[:-1])
        dt = np.diff(t)
        covered = np.clip((s - t[:-1]) / dt, 0.0, 1.0) * dt
        partial = float(np.sum(self.beta * covered))
        return float(np.sqrt(max(s * partial, 0.0))) if mids.size else 0.0


class _Action:
    """Staggered action ``sum_m dt sum_k (dF/dt)^2 / g`` and its gradient.

    Variables are the interior rows of ``F`` (``F_k`` for ``k < n``) and the
    free weights ``a`` (alpha at ``k = 1..n-1``) on each interval.
    """

    def __init__(self, F0, F1, M, penalty):
        self.F0, self.F1 = F0, F1
        self.M = M
        self.dt = 1.0 / (M - 1)
        self.eps = 1.0 / penalty
        self.n = F0.size

    def full(self, Fi):
        return np.vstack([self.F0, Fi, self.F1])

    def parts(self, Fi, a):
        F = self.full(Fi)
        Fbar = 0.5 * (F[1:] + F[:-1])
        M1 = Fbar.shape[0]
        Fpad = np.hstack([np.zeros((M1, 1)), Fbar, np.ones((M1, 1))])
        fbar = np.diff(Fpad, axis=1)
        A = np.hstack([np.zeros((M1, 1)), a, np.ones((M1, 1))])
        g = A[:, 1:] * fbar[:, 1:] + (1 - A[:, :-1]) * fbar[:, :-1]
        x = np.diff(F, axis=0) / self.dt
        return F, fbar, A, g, x

    def value(self, Fi, a):
        _, _, _, g, x = self.parts(Fi, a)
        return float(self.dt * np.sum(x**2 / np.maximum(g, self.eps)))

    def beta(self, Fi, a):
        _, _, _, g, x = self.parts(Fi, a)
        return np.sum(x**2 / np.maximum(g, self.eps), axis=1)

    def grad(self, Fi, a):
        F, fbar, A, g, x = self.parts(Fi, a)
        ge = np.maximum(g, self.eps)
        dx = 2 * self.dt * x / ge
        dg = np.where(g > self.eps, -self.dt * x**2 / ge**2, 0.0)
        da = dg[:, :-1] * fbar[:, 1:-1] - dg[:, 1:] * fbar[:, 1:-1]
        # g_k depends on fbar_{k+1} via a_{k+1} and on fbar_k via 1 - a_k
        dfbar = np.zeros_like(fbar)
        dfbar[:, 1:] += dg * A[:, 1:]
        dfbar[:, :-1] += dg * (1 - A[:, :-1])
        dFbar = dfbar[:, :-1] - dfbar[:, 1:]
        dF = np.zeros_like(F)
        dF[:-1] += 0.5 * dFbar - dx / self.dt
        dF[1:] += 0.5 * dFbar + dx / self.dt
        return dF[1:-1], da


def _project_F(Fi):
    out = np.empty_like(Fi)
    for j, row in enumerate(Fi):
        out[j] = isotonic_regression(row, increasing=True).x
    return np.clip(out, 0.0, 1.0)


def _initial_path(f0, f1, times, mode="auto"):
    if mode not in ("auto", "mixture"):
        raise DomainError(f"unknown initialization {mode!r}")
    if mode == "mixture":
        return (1 - times[:, None]) * f0 + times[:, None] * f1
    if stochastically_ordered(f0, f1):
        pmfs = coupling_interpolation(monotone_coupling(f0, f1), times, f0.size)
    elif stochastically_ordered(f1, f0):
        pmfs = coupling_interpolation(monotone_coupling(f1, f0), 1.0 - times, f0.size)
    else:
        pmfs = (1 - times[:, None]) * f0 + times[:, None] * f1
    return pmfs


def _initial_alpha(pmfs, times, n):
    """Weights matching the initial path where possible, else ``k/n``."""
    default = np.broadcast_to(np.arange(1, n) / n, (times.size - 1, n - 1)).copy()
    try:
        mid = 0.5 * (pmfs[1:] + pmfs[:-1])
        flux = np.diff(pmfs, axis=0) / np.diff(times)[:, None]
        lam = pmfs @ np.arange(n + 1)
        v = lam[-1] - lam[0]
        if abs(v) < 1e-12:
            return default
        g = g_from_flux(mid, flux, v)
        if g.min() < 0:
            return default
        a, valid = alpha_from_path(mid, g)
        a = a[:, 1:-1]
        ok = valid[:, 1:-1] & np.isfinite(a)
        return np.clip(np.where(ok, a, default), 0.0, 1.0)
    except Exception:
        return default


def minimize_action(f0, f1, config: Optional[OptimizerConfig] = None) -> MinimizationResult:
    """Projected-gradient search for the shortest path from ``f0`` to ``f1``.

    The iterate is kept feasible: distribution functions are projected onto
    monotone sequences in ``[0, 1]`` and weights onto ``[0, 1]``.  Steps use
    the Barzilai-Borwein length with backtracking on the action.
    """
    config = config or OptimizerConfig()
    f0, f1 = _common(f0, f1)
    n = f0.size - 1
    M = int(config.grid)
    if M < 3:
        raise DomainError("grid needs at least three points")
    times = np.linspace(0.0, 1.0, M)
    lb = vn_lower_bound(f0, f1)
    F0 = np.cumsum(f0)[:-1]
    F1 = np.cumsum(f1)[:-1]
    if n == 0:
        path = DiscretePath(times, np.ones((M, 1)))
        return MinimizationResult(path, np.ones((M - 1, 1)), np.zeros(M - 1), 0.0, lb, 0, True)
    init = _initial_path(f0, f1, times, config.init)
    obj = _Action(F0, F1, M, config.penalty)
    Fi = _project_F(np.cumsum(init, axis=1)[1:-1, :-1])
    a = _initial_alpha(init, times, n)
    J = obj.value(Fi, a)
    gF, ga = obj.grad(Fi, a)
    step = config.step
    history = [J]
    converged = False
    it = 0
    stall = 0
    for it in range(1, config.max_iter + 1):
        while True:
            Fn = _project_F(Fi - step * gF)
            an = np.clip(a - step * ga, 0.0, 1.0)
            Jn = obj.value(Fn, an)
            dec = np.sum(gF * (Fi - Fn)) + np.sum(ga * (a - an))
            if Jn <= J - 1e-4 * dec or step < 1e-16:
                break
            step *= 0.5
        gFn, gan = obj.grad(Fn, an)
        sF, sa = Fn - Fi, an - a
        yF, ya = gFn - gF, gan - ga
        sy = np.sum(sF * yF) + np.sum(sa * ya)
        ss = np.sum(sF**2) + np.sum(sa**2)
        rel = (J - Jn) / max(J, 1e-300)
        Fi, a, J, gF, ga = Fn, an, Jn, gFn, gan
        history.append(J)
        if ss == 0 or rel < config.rtol:
            stall += 1
            if stall >= 5:
                converged = True
                break
        else:
            stall = 0
        step = ss / sy if sy > 0 else min(2 * step, 1.0)
        step = float(np.clip(step, 1e-12, 1e3))
    F = obj.full(Fi)
    pmfs = np.diff(np.hstack([np.zeros((M, 1)), F, np.ones((M, 1))]), axis=1)
    pmfs = np.clip(pmfs, 0.0, None)
    pmfs /= pmfs.sum(axis=1, keepdims=True)
    alpha = np.hstack([np.zeros((M - 1, 1)), a, np.ones((M - 1, 1))])
    _, _, _, g, x = obj.parts(Fi, a)
    beta, _ = _beta(x, g)
    action = float(np.sum(beta) * obj.dt)
    return MinimizationResult(
        best_path=DiscretePath(times, pmfs),
        best_alpha=alpha,
        beta=beta,
        vn_estimate=float(np.sqrt(action)),
        lower_bound=lb,
        iterations=it,
        converged=converged,
        history=history,
    )


# ---------------------------------------------------------------------------
# two-point contrasts
# ---------------------------------------------------------------------------


def maas_integrand(r) -> np.ndarray:
    """``sqrt(arctanh(r) / r)``, equal to 1 at ``r = 0``."""
    r = np.asarray(r, dtype=float)
    if np.any(np.abs(r) >= 1):
        raise DomainError("integrand is defined on (-1, 1)")
    small = np.abs(r) < 1e-4
    r2 = r * r
    series = 1 + r2 / 3 + r2 * r2 / 5
    safe = np.where(small, 0.5, r)
    ratio = np.where(small, series, np.arctanh(safe) / safe)
    return np.sqrt(ratio)


def maas_two_point_distance(p: float, a: float, b: float) -> float:
    """``(1/sqrt(2p)) int_a^b sqrt(arctanh(r)/r) dr``."""
    if not 0 < p:
        raise DomainError("p must be positive")
    if not (-1 < a <= b < 1):
        raise DomainError("need -1 < a <= b < 1")
    if a == b:
        return 0.0
    val, _ = quad(lambda r: float(maas_integrand(r)), a, b, epsabs=1e-10, epsrel=1e-10, limit=200)
    return float(val / np.sqrt(2 * p))


def two_point_vn(a: float, b: float) -> float:
    """Our distance between the two-point laws with means ``(1+a)/2`` and ``(1+b)/2``."""
    return abs(b - a) / 2


@dataclass
class AltMetricResult:
    p: float
    q: float
    squared_length: float
    numeric_squared_length: float
    max_theta_error: float
    times: np.ndarray
    theta_numeric: np.ndarray

    def theta_star(self, t):
        return alt_theta_star(self.p, self.q, t)


def alt_theta_star(p: float, q: float, t):
    """Optimal ``theta(t) = (t sqrt(1-q) + (1-t) sqrt(1-p))^2``."""
    t = np.asarray(t, dtype=float)
    return (t * np.sqrt(1 - q) + (1 - t) * np.sqrt(1 - p)) ** 2


def _min_theta_energy(th0: float, th1: float, nodes: int, tol: float = 1e-14, max_iter: int = 100):
    """Minimize ``sum (d theta)^2 / (dt * mean theta)`` with Newton steps on a banded Hessian."""
    t = np.linspace(0.0, 1.0, nodes)
    dt = t[1] - t[0]
    th = th0 + (th1 - th0) * t
    th[1:-1] = np.maximum(th[1:-1], 1e-12)
    c = 2.0 / dt

    def parts(th):
        x, y = th[:-1], th[1:]
        s = x + y
        d = y - x
        val = c * np.sum(d * d / s)
        gx = c * (-2 * d / s - d * d / s**2)
        gy = c * (2 * d / s - d * d / s**2)
        k = 8 * c / s**3
        return val, gx, gy, k * y * y, k * x * x, -k * x * y

    val, gx, gy, hxx, hyy, hxy = parts(th)
    for _ in range(max_iter):
        grad = np.zeros(nodes)
        grad[:-1] += gx
        grad[1:] += gy
        diag = np.zeros(nodes)
        diag[:-1] += hxx
        diag[1:] += hyy
        ab = np.zeros((3, nodes - 2))
        ab[1] = diag[1:-1]
        ab[0, 1:] = hxy[1:-1]
        ab[2, :-1] = hxy[1:-1]
        step = solve_banded((1, 1), ab, -grad[1:-1])
        lam = 1.0
        while True:
            cand = th.copy()
            cand[1:-1] += lam * step
            if np.all(cand[1:-1] > 0) and np.all(cand[:-1] + cand[1:] > 0):
                cv = parts(cand)
                if cv[0] <= val + 1e-15 * abs(val):
                    break
            lam *= 0.5
            if lam < 1e-12:
                return t, th, val
        th = cand
        done = np.max(np.abs(lam * step)) < tol
        val, gx, gy, hxx, hyy, hxy = cv
        if done:
            break
    return t, th, val


def alt_metric_two_point(p: float, q: float, nodes: int = 4001) -> AltMetricResult:
    """Squared length ``4 (sqrt(1-q) - sqrt(1-p))^2`` with a numerical check.

    The check minimizes the discretized ``int theta'^2 / theta`` between
    ``theta(0) = 1-p`` and ``theta(1) = 1-q`` on ``nodes`` and on half as many
    nodes, then takes one Richardson step.  A vanishing end value makes the
    plain discretization only first-order accurate.
    """
    if not 0 <= p <= q <= 1:
        raise DomainError("need 0 <= p <= q <= 1")
    if nodes < 5 or nodes % 2 == 0:
        raise DomainError("nodes must be odd and at least 5")
    exact = 4 * (np.sqrt(1 - q) - np.sqrt(1 - p)) ** 2
    if p == q:
        t = np.linspace(0, 1, nodes)
        return AltMetricResult(p, q, 0.0, 0.0, 0.0, t, np.full(nodes, 1 - p))
    t, fine, val_fine = _min_theta_energy(1 - p, 1 - q, nodes)
    tc, coarse, val_coarse = _min_theta_energy(1 - p, 1 - q, (nodes + 1) // 2)
    th = 2 * fine[::2] - coarse
    val = 2 * val_fine - val_coarse
    err = float(np.abs(th - alt_theta_star(p, q, tc)).max())
    return AltMetricResult(p, q, float(exact), float(val), err, tc, th)


__all__ = [
    "ActionEvaluation",
    "AltMetricResult",
    "Concatenation",
    "MinimizationResult",
    "OptimizerConfig",
    "alt_metric_two_point",
    "alt_theta_star",
    "concatenate_paths",
    "maas_integrand",
    "maas_two_point_distance",
    "minimize_action",
    "path_action",
    "stochastically_ordered",
    "two_point_vn",
    "vn_lower_bound",
    "w1_distance",
]
