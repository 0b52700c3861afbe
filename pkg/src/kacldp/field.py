"""Mesoscopic magnetization fields: nonlocal convolution, the evolution
``dm/dt = -m + tanh(beta J*m) + b``, the excess free energy, mean-field
magnetization and the instanton (stationary front)."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy import ndimage, optimize
from scipy.special import xlogy

from .kernel import KacKernel

__all__ = [
    "Grid",
    "Field",
    "Trajectory",
    "FreeEnergyReport",
    "StabilityError",
    "ConvergenceError",
    "stencil",
    "convolve",
    "convolve_values",
    "evolve",
    "forcing_from_path",
    "mean_field_fixed_point",
    "phi_tilde",
    "bulk_density",
    "free_energy",
    "variational_derivative",
    "instanton_solve",
    "zero_crossing",
    "weighted_norm_sq",
    "mobility",
]


class StabilityError(RuntimeError):
    """Explicit time stepping left the open interval (-1, 1)."""


class ConvergenceError(RuntimeError):
    pass


@dataclass(frozen=True)
class Grid:
    """Cell-centred uniform grid on ``[left, right]``; node k sits at ``left + (k + 1/2) dx``.

    Integrals use the midpoint rule, and Neumann reflection about the walls
    maps nodes onto nodes.
    """

    left: float
    right: float
    n: int

    def __post_init__(self):
        if self.n < 1 or not self.right > self.left:
            raise ValueError("need right > left and at least one cell")

    @classmethod
    def symmetric(cls, half_length: float, dx: float) -> "Grid":
        n = max(1, int(round(2 * half_length / dx)))
        return cls(-half_length, half_length, n)

    @property
    def dx(self) -> float:
        return (self.right - self.left) / self.n

    @property
    def x(self) -> np.ndarray:
        return self.left + (np.arange(self.n) + 0.5) * self.dx

    def refined(self, factor: int = 2) -> "Grid":
        return Grid(self.left, self.right, self.n * factor)

    def integrate(self, values, axis: int = -1):
        return np.sum(values, axis=axis) * self.dx


@dataclass(frozen=True, eq=False)
class Field:
    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.shape != (self.grid.n,):
            raise ValueError(f"expected {self.grid.n} values, got {v.shape}")
        if not np.all(np.abs(v) < 1):
            raise ValueError("field values must lie strictly inside (-1, 1)")
        object.__setattr__(self, "values", v)

    @property
    def x(self) -> np.ndarray:
        return self.grid.x

    def to_csv(self, path) -> None:
        np.savetxt(path, np.column_stack([self.x, self.values]), delimiter=",",
                   header=f"x,value  # left={self.grid.left!r} right={self.grid.right!r}", comments="",
                   fmt="%.17g")

    @classmethod
    def from_csv(cls, path) -> "Field":
        with open(path) as fh:
            head = fh.readline()
        meta = dict(kv.split("=") for kv in head.split("#", 1)[1].split())
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        return cls(Grid(float(meta["left"]), float(meta["right"]), data.shape[0]), data[:, 1])

    def to_npz(self, path) -> None:
        np.savez_compressed(path, left=self.grid.left, right=self.grid.right, values=self.values)

    @classmethod
    def from_npz(cls, path) -> "Field":
        with np.load(path) as z:
            return cls(Grid(float(z["left"]), float(z["right"]), z["values"].size), z["values"])


# ---------------------------------------------------------------------------
# convolution


def stencil(kernel: KacKernel, dx: float) -> np.ndarray:
    """Weights ``dx * J(k dx)``, |k| <= ceil(1/dx), normalized to sum to one."""
    R = int(np.ceil(1.0 / dx))
    w = dx * kernel(dx * np.arange(-R, R + 1))
    return w / w.sum()


def convolve_values(values, kernel: KacKernel, dx: float, axis: int = -1) -> np.ndarray:
    """``J*m`` with Neumann walls (half-sample even reflection) along ``axis``."""
    return ndimage.correlate1d(np.asarray(values, dtype=float), stencil(kernel, dx), axis=axis,
                               mode="reflect")


def convolve(field: Field, kernel: KacKernel) -> np.ndarray:
    """``J*m`` on the nodes of ``field``.  Returned as an array since it need not lie in (-1, 1)."""
    return convolve_values(field.values, kernel, field.grid.dx)


# ---------------------------------------------------------------------------
# evolution


@dataclass(frozen=True, eq=False)
class Trajectory:
    grid: Grid
    times: np.ndarray
    values: np.ndarray

    def field(self, k: int = -1) -> Field:
        return Field(self.grid, self.values[k])


Forcing = Callable[[np.ndarray, float], np.ndarray]


def evolve(field: Field, kernel: KacKernel, beta: float, t: float, dt: float = 0.05,
           forcing: Forcing | None = None, save_every: int = 1) -> Trajectory:
    """Explicit Euler for ``dm/dt = -m + tanh(beta J*m) + b(x, t)``.

    Unforced steps keep |m| < 1 whenever ``dt <= 1``; with forcing the
    invariant is checked after every step and a violation raises
    ``StabilityError``.
    """
    if dt <= 0 or t < 0:
        raise ValueError("need dt > 0 and t >= 0")
    if forcing is None and dt > 1:
        raise StabilityError("unforced explicit Euler needs dt <= 1")
    x, dx = field.grid.x, field.grid.dx
    w = stencil(kernel, dx)
    nsteps = int(round(t / dt))
    m = field.values.copy()
    times, out = [0.0], [m.copy()]
    for k in range(nsteps):
        tk = k * dt
        rhs = -m + np.tanh(beta * ndimage.correlate1d(m, w, mode="reflect"))
        if forcing is not None:
            rhs = rhs + forcing(x, tk)
        m = m + dt * rhs
        if not np.all(np.abs(m) < 1):
            raise StabilityError(f"|m| >= 1 after step {k + 1}; reduce dt")
        if (k + 1) % save_every == 0 or k + 1 == nsteps:
            times.append((k + 1) * dt)
            out.append(m.copy())
    return Trajectory(field.grid, np.array(times), np.array(out))


def forcing_from_path(phi: Callable[[np.ndarray, float], np.ndarray],
                      phidot: Callable[[np.ndarray, float], np.ndarray],
                      kernel: KacKernel, beta: float, grid: Grid) -> Forcing:
    """``b = dphi/dt + phi - tanh(beta J*phi)``, the force that makes ``phi`` a solution."""
    def b(x, t):
        p = phi(x, t)
        return phidot(x, t) + p - np.tanh(beta * convolve_values(p, kernel, grid.dx))
    return b


# ---------------------------------------------------------------------------
# free energy


def mean_field_fixed_point(beta: float, tol: float = 1e-12) -> float:
    """Positive root of ``m = tanh(beta m)``."""
    if beta <= 1:
        raise ValueError("no positive mean-field magnetization for beta <= 1")
    m = 1.0
    for _ in range(10_000):
        new = 0.5 * m + 0.5 * np.tanh(beta * m)
        if abs(new - m) < 1e-6:
            m = new
            break
        m = new
    # Newton polish on g(m) = m - tanh(beta m)
    for _ in range(50):
        th = np.tanh(beta * m)
        g = m - th
        if abs(g) <= tol * 1e-2:
            break
        m -= g / (1 - beta * (1 - th * th))
    if abs(m - np.tanh(beta * m)) > tol:
        raise ConvergenceError("mean-field iteration did not converge")
    return float(m)


def _entropy(m):
    p, q = 0.5 * (1 + m), 0.5 * (1 - m)
    return -(xlogy(p, p) + xlogy(q, q))


def phi_tilde(m, beta: float):
    m = np.asarray(m, dtype=float)
    return -0.5 * m * m - _entropy(m) / beta


def bulk_density(m, beta: float):
    """``phi_beta(m) = phi_tilde(m) - phi_tilde(m_beta) >= 0``."""
    return phi_tilde(m, beta) - phi_tilde(mean_field_fixed_point(beta), beta)


@dataclass(frozen=True)
class FreeEnergyReport:
    total: float
    bulk: float
    interaction: float


def free_energy(values, grid: Grid, kernel: KacKernel, beta: float) -> FreeEnergyReport:
    """Excess free energy ``int phi_beta(m) + 1/4 int int J (m(x) - m(y))^2``.

    The double integral is evaluated as ``sum m^2 - 2 m (J*m) + J*(m^2)``
    with the same discrete convolution used everywhere else, so the discrete
    gradient is exactly ``variational_derivative``.  Nodes with |m| = 1 are
    allowed.
    """
    m = values.values if isinstance(values, Field) else np.asarray(values, dtype=float)
    if np.any(np.abs(m) > 1):
        raise ValueError("|m| must not exceed 1")
    dx = grid.dx
    bulk = float(np.sum(bulk_density(m, beta)) * dx)
    Jm = convolve_values(m, kernel, dx)
    Jm2 = convolve_values(m * m, kernel, dx)
    inter = float(0.25 * dx * np.sum(m * m - 2 * m * Jm + Jm2))
    return FreeEnergyReport(bulk + inter, bulk, inter)


def variational_derivative(values, grid: Grid, kernel: KacKernel, beta: float) -> np.ndarray:
    """``-J*m + arctanh(m)/beta``."""
    m = values.values if isinstance(values, Field) else np.asarray(values, dtype=float)
    if np.any(np.abs(m) >= 1):
        raise ValueError("variational derivative diverges at |m| = 1")
    return -convolve_values(m, kernel, grid.dx) + np.arctanh(m) / beta


# ---------------------------------------------------------------------------
# instanton


def zero_crossing(x, m) -> float:
    """Position of the first sign change of an increasing profile, by linear interpolation."""
    k = np.flatnonzero((m[:-1] < 0) & (m[1:] >= 0))
    if k.size == 0:
        raise ValueError("profile has no upward zero crossing")
    k = k[0]
    return float(x[k] - m[k] * (x[k + 1] - x[k]) / (m[k + 1] - m[k]))


def _recenter(grid: Grid, m: np.ndarray) -> np.ndarray:
    x = grid.x
    x0 = zero_crossing(x, m)
    if abs(x0) < 1e-14:
        return m
    return np.interp(x + x0, x, m)


def instanton_solve(beta: float, grid: Grid, kernel: KacKernel, tol: float = 1e-10,
                    max_iter: int = 20_000, seed: np.ndarray | None = None) -> Field:
    """Increasing antisymmetric solution of ``m = tanh(beta J*m)``.

    Iterates the fixed-point map from ``m_beta tanh(x)``, recentring the zero
    crossing at x = 0 and antisymmetrizing each iterate, which removes the
    translation mode.  A Newton-Krylov polish finishes the solve.  The grid
    must be symmetric about 0.
    """
    if not np.isclose(grid.left, -grid.right):
        raise ValueError("instanton grid must be symmetric about 0")
    mb = mean_field_fixed_point(beta)
    x, dx = grid.x, grid.dx
    w = stencil(kernel, dx)
    m = mb * np.tanh(x) if seed is None else np.asarray(seed, dtype=float).copy()

    def step(m):
        new = np.tanh(beta * ndimage.correlate1d(m, w, mode="reflect"))
        new = _recenter(grid, new)
        return 0.5 * (new - new[::-1])

    res = np.inf
    for _ in range(max_iter):
        new = step(m)
        res = np.max(np.abs(new - m))
        m = new
        if res < 1e-7:
            break
    else:
        raise ConvergenceError(f"fixed-point iteration stalled at residual {res:.2e}")

    def F(v):
        full = np.concatenate([-v[::-1], v])
        return np.tanh(beta * ndimage.correlate1d(full, w, mode="reflect"))[grid.n // 2:] - v

    if grid.n % 2 == 0:
        try:
            half = optimize.newton_krylov(F, m[grid.n // 2:], f_tol=tol * 1e-2, maxiter=100)
            cand = np.concatenate([-half[::-1], half])
            if np.all(np.abs(cand) < 1) and np.max(np.abs(F(half))) < res:
                m = cand
        except optimize.NoConvergence:
            pass
    resid = np.max(np.abs(m - np.tanh(beta * ndimage.correlate1d(m, w, mode="reflect"))))
    if resid > tol:
        # keep iterating the plain map to the target residual
        for _ in range(max_iter):
            m = step(m)
            resid = np.max(np.abs(m - np.tanh(beta * ndimage.correlate1d(m, w, mode="reflect"))))
            if resid <= tol:
                break
        else:
            raise ConvergenceError(f"instanton residual {resid:.2e} above tolerance {tol:.0e}")
    return Field(grid, m)


def weighted_norm_sq(instanton: Field, derivative: np.ndarray | None = None) -> float:
    """``int d(x)^2 / (1 - mbar(x)^2) dx``, with ``d = mbar'`` by default."""
    m = instanton.values
    d = np.gradient(m, instanton.grid.dx) if derivative is None else np.asarray(derivative, dtype=float)
    return float(instanton.grid.integrate(d * d / (1 - m * m)))


def mobility(instanton: Field) -> float:
    """``mu = 4 / ||mbar'||^2_{L2(dnu)}``, so a front moving at speed V for time T costs ``V^2 T / mu``."""
    return 4.0 / weighted_norm_sq(instanton)
