"""Large-deviation cost of mesoscopic paths: the density H in its two
parametrizations, the space-time action, and the nucleation cost w_n."""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import CubicSpline

from .field import Field, Grid, convolve_values
from .kernel import KacKernel

__all__ = [
    "cost_density",
    "cost_density_buw",
    "small_b_limit",
    "large_b_limit",
    "PathProfile",
    "CostBreakdown",
    "action",
    "translating_instanton_path",
    "endpoint_distances",
    "nucleation_cost",
    "optimal_nucleation",
    "crossover_v2t",
]


def _log_sech2(x):
    """``ln(1 - tanh(x)^2)`` without overflow."""
    a = np.abs(x)
    return 2.0 * (np.log(2.0) - a - np.log1p(np.exp(-2.0 * a)))


def cost_density(phi, phidot, conv, beta: float):
    """Cost density ``H(phi, phidot)`` at points where ``conv = J*phi``.

    With ``t = tanh(beta conv)`` and ``D = (1 - phi^2)(1 - t^2) + phidot^2``,
    ``H = phidot/2 [ln((phidot + sqrt D) / ((1 - phi) sqrt(1 - t^2))) - beta conv]
    + (1 - phi t - sqrt D)/2``.  For ``phidot < 0`` the numerator is
    rewritten as ``(1 - phi^2)(1 - t^2) / (sqrt D - phidot)`` to avoid
    cancellation.
    """
    phi, phidot, conv = np.broadcast_arrays(*(np.asarray(a, dtype=float) for a in (phi, phidot, conv)))
    if np.any(np.abs(phi) >= 1):
        raise ValueError("cost density needs |phi| < 1")
    x = beta * conv
    t = np.tanh(x)
    ls = _log_sech2(x)
    A = (1 - phi * phi) * np.exp(ls)
    sq = np.sqrt(A + phidot * phidot)
    with np.errstate(divide="ignore"):
        lnum = np.where(phidot >= 0, np.log(phidot + sq), np.log(A) - np.log(sq - phidot))
    L = lnum - np.log1p(-phi) - 0.5 * ls - x
    # 1 - phi t - sqrt D = (phi - t - phidot)(phi - t + phidot) / (1 - phi t + sqrt D)
    rest = (phi - t - phidot) * (phi - t + phidot) / (1 - phi * t + sq)
    out = 0.5 * np.where(phidot == 0, 0.0, phidot * L) + 0.5 * rest
    return out if out.ndim else float(out)


def cost_density_buw(b, u, w):
    """``H`` in the variables ``b = phidot + phi - tanh(beta J*phi)``, ``u = phi``, ``w = -tanh(beta J*phi)``.

    ``H = ((b-u-w) ln((s + sqrt(s^2 + A)) / ((1-u)(1-w))) - sqrt(s^2 + A) + 1 + u w) / 2``
    with ``s = b - u - w`` and ``A = (1-u^2)(1-w^2)``.  |u| = 1 is allowed
    and may give an infinite cost.
    """
    b, u, w = np.broadcast_arrays(*(np.asarray(a, dtype=float) for a in (b, u, w)))
    if np.any(np.abs(w) >= 1):
        raise ValueError("need |w| < 1")
    if np.any(np.abs(u) > 1):
        raise ValueError("need |u| <= 1")
    s = b - u - w
    A = (1 - u * u) * (1 - w * w)
    R = np.sqrt(s * s + A)
    with np.errstate(divide="ignore", invalid="ignore"):
        pos = np.log(s + R) - np.log((1 - u) * (1 - w))
        neg = np.log((1 + u) * (1 + w)) - np.log(R - s)
        L = np.where(s >= 0, pos, neg)
        sl = np.where(s == 0, 0.0, s * L)
    # 1 + u w - R = b (2(u + w) - b) / (1 + u w + R), exact zero on the flow b = 0
    out = 0.5 * (sl + b * (2 * (u + w) - b) / (1 + u * w + R))
    return out if out.ndim else float(out)


def small_b_limit(u, w, b: float = 1e-3) -> float:
    """Extrapolated ``lim_{b->0} H(b,u,w)/b^2`` (Richardson on ``b, b/2``, removing the O(b) term)."""
    r = lambda bb: cost_density_buw(bb, u, w) / bb**2
    return float(2 * r(b / 2) - r(b))


def large_b_limit(u, w, sign: int = 1, b1: float = 1e8, b2: float = 1e12) -> float:
    """Extrapolated ``lim H/(|b| ln(|b|+1))`` as ``b -> sign*inf``.

    The ratio behaves like ``1/2 + K/ln|b| + O(1/|b|)``; a straight line in
    ``1/ln|b|`` through two large values gives the intercept.
    """
    x1, x2 = 1 / np.log(b1), 1 / np.log(b2)
    r1 = cost_density_buw(sign * b1, u, w) / (b1 * np.log(b1 + 1))
    r2 = cost_density_buw(sign * b2, u, w) / (b2 * np.log(b2 + 1))
    return float(r2 - x2 * (r1 - r2) / (x1 - x2))


# ---------------------------------------------------------------------------
# paths and action


@dataclass(frozen=True, eq=False)
class PathProfile:
    """Space-time profile ``values[k, i] = phi(x_i, t_k)``.

    ``phidot`` is either supplied (exact) or taken by centred differences in
    time with one-sided ends; ``phidot_supplied`` records which.  Optional
    ``t_weights`` override the trapezoid rule in time.
    """

    grid: Grid
    t: np.ndarray
    values: np.ndarray
    phidot: np.ndarray | None = None
    t_weights: np.ndarray | None = None
    phidot_supplied: bool = field(init=False, default=False)

    def __post_init__(self):
        t = np.asarray(self.t, dtype=float)
        v = np.asarray(self.values, dtype=float)
        if v.shape != (t.size, self.grid.n):
            raise ValueError(f"values shape {v.shape} does not match ({t.size}, {self.grid.n})")
        if not np.all(np.abs(v) < 1):
            raise ValueError("path values must lie strictly inside (-1, 1)")
        if np.any(np.diff(t) <= 0):
            raise ValueError("times must increase")
        object.__setattr__(self, "t", t)
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "phidot_supplied", self.phidot is not None)
        if self.phidot is None:
            pd = np.gradient(v, t, axis=0, edge_order=1) if t.size > 1 else np.zeros_like(v)
            object.__setattr__(self, "phidot", pd)
        elif np.shape(self.phidot) != v.shape:
            raise ValueError("phidot must match values")
        if self.t_weights is None:
            object.__setattr__(self, "t_weights", _trapezoid_weights(t))

    def window(self, k0: int, k1: int) -> "PathProfile":
        """Sub-path on time nodes ``k0..k1`` (inclusive), trapezoid weights recomputed."""
        sl = slice(k0, k1 + 1)
        return PathProfile(self.grid, self.t[sl], self.values[sl],
                           self.phidot[sl] if self.phidot_supplied else None)


def _trapezoid_weights(t):
    if t.size == 1:
        return np.zeros(1)
    w = np.zeros(t.size)
    d = np.diff(t)
    w[:-1] += 0.5 * d
    w[1:] += 0.5 * d
    return w


@dataclass(frozen=True, eq=False)
class CostBreakdown:
    total: float
    density: np.ndarray
    diagnostics: dict

    def to_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump({"total": self.total, "diagnostics": self.diagnostics}, fh, indent=2)

    def density_to_csv(self, path, path_profile: PathProfile) -> None:
        T, X = np.meshgrid(path_profile.t, path_profile.grid.x, indexing="ij")
        np.savetxt(path, np.column_stack([T.ravel(), X.ravel(), self.density.ravel()]), delimiter=",",
                   header="t,x,H", comments="", fmt="%.17g")


def action(path: PathProfile, kernel: KacKernel, beta: float) -> CostBreakdown:
    """``I = int int H dx dt``: midpoint rule on the cell-centred space grid, ``path.t_weights`` in time.

    Diagnostics are the L1 norms of ``phidot ln|phidot|``,
    ``phidot ln(1/(1-phi)) 1{phidot>0}`` and ``phidot ln(1/(1+phi)) 1{phidot<0}``,
    all finite exactly when the action is.
    """
    dx = path.grid.dx
    conv = convolve_values(path.values, kernel, dx, axis=1)
    H = cost_density(path.values, path.phidot, conv, beta)
    wt = path.t_weights[:, None] * dx
    p, pd = path.values, path.phidot
    with np.errstate(divide="ignore", invalid="ignore"):
        d1 = np.where(pd == 0, 0.0, np.abs(pd * np.log(np.abs(pd))))
    d2 = np.where(pd > 0, np.abs(pd * np.log1p(-p)), 0.0)
    d3 = np.where(pd < 0, np.abs(pd * np.log1p(p)), 0.0)
    diag = {
        "phidot_log_abs_phidot": float(np.sum(wt * d1)),
        "up_entropy": float(np.sum(wt * d2)),
        "down_entropy": float(np.sum(wt * d3)),
        "min_density": float(H.min()),
        "phidot_supplied": bool(path.phidot_supplied),
    }
    return CostBreakdown(float(np.sum(wt * H)), H, diag)


def translating_instanton_path(instanton: Field, grid: Grid, eps: float, V: float, T: float,
                               nt: int = 41, x0: float = 0.0) -> PathProfile:
    """``phi(x, t) = mbar(x - x0 - eps V t)`` for ``t`` in ``[0, T / eps^2]`` with exact ``phidot``.

    ``mbar`` is a cubic spline through ``instanton``, held at its end values
    outside the instanton grid.
    """
    xs, ms = instanton.x, instanton.values
    spl = CubicSpline(xs, ms)
    dspl = spl.derivative()

    def mbar(y):
        return np.where(y < xs[0], ms[0], np.where(y > xs[-1], ms[-1], spl(np.clip(y, xs[0], xs[-1]))))

    def dmbar(y):
        return np.where((y < xs[0]) | (y > xs[-1]), 0.0, dspl(np.clip(y, xs[0], xs[-1])))

    t = np.linspace(0.0, T / eps**2, nt)
    shift = x0 + eps * V * t[:, None]
    y = grid.x[None, :] - shift
    return PathProfile(grid, t, mbar(y), -eps * V * dmbar(y))


def endpoint_distances(path: PathProfile, start: np.ndarray, end: np.ndarray) -> tuple[float, float]:
    """Sup distances of the first and last time slices from reference profiles."""
    return (float(np.max(np.abs(path.values[0] - start))), float(np.max(np.abs(path.values[-1] - end))))


# ---------------------------------------------------------------------------
# nucleation


def nucleation_cost(n: int, R: float, T: float, Fbar: float, mu: float) -> float:
    """``w_n = 2 n Fbar + V^2 T / (mu (2n + 1))`` with ``V = R / T``."""
    if T <= 0:
        raise ValueError("T must be positive")
    if n < 0:
        raise ValueError("n must be nonnegative")
    V = R / T
    return 2 * n * Fbar + V * V * T / (mu * (2 * n + 1))


def crossover_v2t(n: int, Fbar: float, mu: float) -> float:
    """Value of ``V^2 T`` at which ``w_n = w_{n+1}``."""
    return mu * Fbar * (2 * n + 1) * (2 * n + 3)


def optimal_nucleation(R: float, T: float, Fbar: float, mu: float, rtol: float = 1e-12) -> tuple[int, ...]:
    """Minimizers of ``n -> w_n``; one value, or two on an exact tie."""
    w = [nucleation_cost(0, R, T, Fbar, mu)]
    n = 0
    # w_n is convex in n, so stop at the first strict increase
    while True:
        n += 1
        w.append(nucleation_cost(n, R, T, Fbar, mu))
        if w[-1] > w[-2] * (1 + rtol) + rtol:
            break
    w = np.array(w)
    best = w.min()
    return tuple(int(k) for k in np.flatnonzero(w <= best + rtol * max(1.0, abs(best))))
