"""Kac interaction kernel, lattice geometry, Hamiltonian and Glauber flip rates.

Lengths are mesoscopic: the kernel lives on [-1, 1] and lattice sites sit at
``gamma * k``.  The microscopic coupling between sites x and y is
``gamma * J(x - y)``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from numpy.polynomial import Polynomial
from scipy import sparse
from scipy.special import expit

__all__ = [
    "KacKernel",
    "default_kernel",
    "make_kernel",
    "KERNELS",
    "kernel_eval",
    "LatticeGeometry",
    "SpinConfig",
    "CoarseGeometry",
    "KacSystem",
    "coupling_matrix",
    "hamiltonian",
    "local_field",
    "flip_rate",
    "glauber_rate",
    "rate_bounds",
    "coarse_potential",
    "coarse_potential_matrix",
    "coarse_field",
    "coarse_rates",
    "coarse_rates_all",
]


# ---------------------------------------------------------------------------
# kernel


@dataclass(frozen=True, eq=False)
class KacKernel:
    """Even, nonnegative interaction profile supported on [-1, 1].

    Polynomial kernels carry the polynomial on [-1, 1]; their first and second
    antiderivatives are exact.  Other profiles are tabulated.
    """

    profile: Callable[[np.ndarray], np.ndarray]
    name: str = "custom"
    poly: Polynomial | None = None
    params: dict = field(default_factory=dict)
    _table: dict = field(default_factory=dict, repr=False)

    def __call__(self, r):
        r = np.asarray(r, dtype=float)
        out = np.where(np.abs(r) <= 1.0, self.profile(np.clip(r, -1.0, 1.0)), 0.0)
        return out if out.ndim else float(out)

    # antiderivatives -------------------------------------------------------
    def _tables(self):
        if not self._table:
            s = np.linspace(-1.0, 1.0, 400_001)
            from scipy.integrate import cumulative_simpson

            j1 = cumulative_simpson(self(s), x=s, initial=0.0)
            self._table.update(s=s, j1=j1, j2=cumulative_simpson(j1, x=s, initial=0.0))
        return self._table

    def cumulative(self, s):
        """First antiderivative ``int_{-1}^{s} J``."""
        s = np.asarray(s, dtype=float)
        if self.poly is not None:
            p1 = self.poly.integ(lbnd=-1.0)
            out = np.where(s <= -1, 0.0, np.where(s >= 1, p1(1.0), p1(np.clip(s, -1, 1))))
        else:
            t = self._tables()
            out = np.where(s >= 1, t["j1"][-1], np.interp(s, t["s"], t["j1"], left=0.0))
        return out if out.ndim else float(out)

    def second_cumulative(self, s):
        """Second antiderivative G with G = 0 below -1 and G(s) = G(1) + (s - 1) * mass above 1."""
        s = np.asarray(s, dtype=float)
        if self.poly is not None:
            p2 = self.poly.integ(2, lbnd=-1.0)
            mass = self.poly.integ(lbnd=-1.0)(1.0)
            inside = p2(np.clip(s, -1, 1))
            out = np.where(s <= -1, 0.0, np.where(s >= 1, p2(1.0) + mass * (s - 1.0), inside))
        else:
            t = self._tables()
            mass = t["j1"][-1]
            inside = np.interp(s, t["s"], t["j2"], left=0.0)
            out = np.where(s >= 1, t["j2"][-1] + mass * (s - 1.0), inside)
        return out if out.ndim else float(out)

    def double_integral(self, a1, a2, b1, b2):
        """``int_{a1}^{a2} int_{b1}^{b2} J(r - r') dr' dr`` (vectorized)."""
        G = self.second_cumulative
        return G(a2 - b1) - G(a1 - b1) - G(a2 - b2) + G(a1 - b2)

    # norms -----------------------------------------------------------------
    @property
    def mass(self) -> float:
        return float(self.cumulative(1.0))

    @property
    def sup_norm(self) -> float:
        if "sup" not in self._table:
            r = np.linspace(-1, 1, 200_001)
            self._table["sup"] = float(np.max(np.abs(self(r))))
        return self._table["sup"]

    @property
    def deriv_sup_norm(self) -> float:
        if "dsup" not in self._table:
            r = np.linspace(-1, 1, 200_001)
            if self.poly is not None:
                d = self.poly.deriv()(r)
            else:
                d = np.gradient(self(r), r)
            self._table["dsup"] = float(np.max(np.abs(d)))
        return self._table["dsup"]


def _poly_kernel(exponent: int = 3) -> KacKernel:
    base = Polynomial([1.0, 0.0, -1.0]) ** int(exponent)
    norm = base.integ(lbnd=-1.0)(1.0)
    p = base / norm
    c, e = 1.0 / norm, int(exponent)

    def profile(r):
        # factored form keeps J >= 0 and exactly zero at the edges
        return c * (1.0 - r * r) ** e

    return KacKernel(profile=profile, name="poly", poly=p, params={"exponent": e})


def _box_kernel() -> KacKernel:
    p = Polynomial([0.5])
    return KacKernel(profile=p, name="box", poly=p)


def default_kernel() -> KacKernel:
    """``J(r) = (35/32)(1 - r^2)^3`` on [-1, 1]."""
    return _poly_kernel(3)


KERNELS: dict[str, Callable[..., KacKernel]] = {"poly": _poly_kernel, "box": _box_kernel}


def make_kernel(name: str = "poly", **params) -> KacKernel:
    try:
        factory = KERNELS[name]
    except KeyError:
        raise ValueError(f"unknown kernel {name!r}; known: {sorted(KERNELS)}") from None
    return factory(**params)


def kernel_eval(kernel: KacKernel, r):
    return kernel(r)


# ---------------------------------------------------------------------------
# geometry


_BOUNDARIES = ("neumann", "free")


@dataclass(frozen=True)
class LatticeGeometry:
    """Sites ``gamma * (offset + k)``, k = 0..n_sites-1.

    Each site owns the cell of width gamma centred on it, so the domain is
    ``[left, right]`` with ``right - left = n_sites * gamma``.
    """

    gamma: float
    n_sites: int
    offset: int
    epsilon: float = 1.0
    L: float | None = None
    a: float | None = None
    boundary: str = "neumann"

    def __post_init__(self):
        if not 0 < self.gamma < 1:
            raise ValueError("gamma must lie in (0, 1)")
        if self.n_sites < 1:
            raise ValueError("need at least one site")
        if self.boundary not in _BOUNDARIES:
            raise ValueError(f"boundary must be one of {_BOUNDARIES}")

    @classmethod
    def from_scaling(cls, gamma: float, a: float, L: float, boundary: str = "neumann"):
        """Sites of ``[-L/eps, L/eps]`` on ``gamma * Z`` with ``eps = |ln gamma|^-a``."""
        eps = abs(np.log(gamma)) ** (-a)
        K = int(np.floor(L / eps / gamma + 1e-9))
        return cls(gamma, 2 * K + 1, -K, eps, L, a, boundary)

    @classmethod
    def line(cls, gamma: float, n_sites: int, boundary: str = "neumann"):
        """``n_sites`` consecutive sites, centred as well as parity allows."""
        return cls(gamma, n_sites, -((n_sites - 1) // 2), 1.0, None, None, boundary)

    @property
    def positions(self) -> np.ndarray:
        return self.gamma * (self.offset + np.arange(self.n_sites))

    @property
    def left(self) -> float:
        return self.gamma * (self.offset - 0.5)

    @property
    def right(self) -> float:
        return self.gamma * (self.offset + self.n_sites - 0.5)

    @property
    def length(self) -> float:
        return self.n_sites * self.gamma


@dataclass(frozen=True, eq=False)
class SpinConfig:
    values: np.ndarray
    geometry: LatticeGeometry

    def __post_init__(self):
        v = np.asarray(self.values)
        if v.shape != (self.geometry.n_sites,):
            raise ValueError(f"expected {self.geometry.n_sites} spins, got shape {v.shape}")
        if not np.all(np.abs(v) == 1):
            raise ValueError("spins must be +1 or -1")
        object.__setattr__(self, "values", v.astype(np.int8))

    def flipped(self, x: int) -> "SpinConfig":
        v = self.values.copy()
        v[x] = -v[x]
        return SpinConfig(v, self.geometry)


@dataclass(frozen=True, eq=False)
class CoarseGeometry:
    """Blocks of consecutive sites tiling the lattice.

    The nominal block length |I| gives ``q = floor(|I|/gamma)`` sites per
    block; the remainder is absorbed into the last block.
    """

    lattice: LatticeGeometry
    block_length: float
    _cache: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if self.block_length <= 0:
            raise ValueError("block_length must be positive")

    @property
    def nominal_sites(self) -> int:
        return max(1, int(np.floor(self.block_length / self.lattice.gamma + 1e-9)))

    @property
    def sizes(self) -> np.ndarray:
        if "sizes" not in self._cache:
            n, q = self.lattice.n_sites, self.nominal_sites
            B = max(1, n // q)
            s = np.full(B, q, dtype=np.int64)
            s[-1] = n - (B - 1) * q
            self._cache["sizes"] = s
        return self._cache["sizes"]

    @property
    def n_blocks(self) -> int:
        return len(self.sizes)

    @property
    def starts(self) -> np.ndarray:
        return np.concatenate([[0], np.cumsum(self.sizes)[:-1]])

    @property
    def block_of_site(self) -> np.ndarray:
        return np.repeat(np.arange(self.n_blocks), self.sizes)

    @property
    def edges(self) -> np.ndarray:
        lat = self.lattice
        return lat.left + lat.gamma * np.concatenate([[0], np.cumsum(self.sizes)])

    @property
    def widths(self) -> np.ndarray:
        return self.sizes * self.lattice.gamma

    @property
    def centers(self) -> np.ndarray:
        e = self.edges
        return 0.5 * (e[1:] + e[:-1])

    def block_spins(self, sigma) -> np.ndarray:
        """Block magnetizations of one configuration or a stack of them (last axis sites)."""
        s = np.asarray(sigma, dtype=float)
        return np.add.reduceat(s, self.starts, axis=-1) / self.sizes

    def cell_integrals(self, kernel: KacKernel) -> np.ndarray:
        """``Q[i,k] = int_{I_i} int_{I_k} J`` including boundary images."""
        key = ("Q", id(kernel))
        if key not in self._cache:
            self._cache[key] = _cell_integrals(self, kernel)
        return self._cache[key]

    def block_kernel(self, kernel: KacKernel) -> np.ndarray:
        """``Kbar[i,k] = |I_i|^-1 int_{I_i} int_{I_k} J``: field at block i from unit magnetization on block k."""
        return self.cell_integrals(kernel) / self.widths[:, None]


def _reflect_index(idx, n):
    """Half-sample symmetric reflection of integer indices into 0..n-1."""
    idx = np.mod(idx, 2 * n)
    return np.where(idx >= n, 2 * n - 1 - idx, idx)


def _cell_integrals(coarse: CoarseGeometry, kernel: KacKernel) -> np.ndarray:
    lat = coarse.lattice
    e = coarse.edges
    a1, a2 = e[:-1][:, None], e[1:][:, None]
    b1, b2 = e[:-1][None, :], e[1:][None, :]
    Q = kernel.double_integral(a1, a2, b1, b2)
    if lat.boundary == "neumann":
        D = lat.right - lat.left
        reps = int(np.ceil(1.0 / D)) + 1
        for p in range(-reps, reps + 1):
            if p != 0:
                Q = Q + kernel.double_integral(a1, a2, b1 + 2 * D * p, b2 + 2 * D * p)
            # mirror images of cell k about the right wall
            m1 = 2 * lat.right - b2 + 2 * D * p
            m2 = 2 * lat.right - b1 + 2 * D * p
            Q = Q + kernel.double_integral(a1, a2, m1, m2)
    return Q


# ---------------------------------------------------------------------------
# system, couplings, energy, rates


def coupling_matrix(geom: LatticeGeometry, kernel: KacKernel) -> sparse.csr_matrix:
    """Symmetric sparse ``W`` with ``h(x) = sum_y W[x,y] sigma(y)``.

    Neumann walls reflect the configuration (half-sample symmetric); all
    images of a site are summed, and a site's own images are dropped.
    """
    n, g = geom.n_sites, geom.gamma
    R = int(np.ceil(1.0 / g))
    d = np.concatenate([np.arange(-R, 0), np.arange(1, R + 1)])
    w = g * kernel(g * d)
    keep = w != 0
    d, w = d[keep], w[keep]
    rows = np.repeat(np.arange(n), len(d))
    tgt = rows + np.tile(d, n)
    vals = np.tile(w, n)
    if geom.boundary == "neumann":
        tgt = _reflect_index(tgt, n)
        ok = tgt != rows
    else:
        ok = (tgt >= 0) & (tgt < n)
    W = sparse.coo_matrix((vals[ok], (rows[ok], tgt[ok])), shape=(n, n)).tocsr()
    W.sum_duplicates()
    return W


@dataclass(frozen=True, eq=False)
class KacSystem:
    """Lattice, kernel and inverse temperature, with the coupling matrix cached."""

    geometry: LatticeGeometry
    kernel: KacKernel
    beta: float
    _cache: dict = field(default_factory=dict, repr=False)

    @property
    def W(self) -> sparse.csr_matrix:
        if "W" not in self._cache:
            self._cache["W"] = coupling_matrix(self.geometry, self.kernel)
        return self._cache["W"]

    def local_field(self, sigma) -> np.ndarray:
        return self.W @ np.asarray(sigma, dtype=float)

    def rates(self, sigma) -> np.ndarray:
        s = np.asarray(sigma, dtype=float)
        return glauber_rate(s, self.W @ s, self.beta)


def glauber_rate(spin, h, beta):
    """``F_spin(h) = exp(-beta*spin*h) / (2 cosh(beta*h))``."""
    return expit(-2.0 * beta * np.asarray(spin, dtype=float) * np.asarray(h, dtype=float))


def _values(config):
    return config.values if isinstance(config, SpinConfig) else np.asarray(config)


def hamiltonian(system: KacSystem, config, boundary=None, h: float = 0.0, subset=None) -> float:
    """Energy of the spins in ``subset`` given the rest.

    ``config`` holds the spins on ``subset`` (all sites when ``subset`` is
    None) and ``boundary`` the spins on the complement.  The result is
    ``-1/2 sum_{x!=y in subset} J_g sigma sigma - h sum_{x in subset} sigma
    - sum_{x in subset, y outside} J_g sigma sigma``.
    """
    n = system.geometry.n_sites
    v = np.asarray(_values(config), dtype=float)
    if subset is None:
        if v.shape != (n,):
            raise ValueError(f"config has shape {v.shape}, lattice has {n} sites")
        inside = np.ones(n, dtype=bool)
        full = v
    else:
        inside = np.zeros(n, dtype=bool)
        inside[np.asarray(subset)] = True
        b = np.asarray(_values(boundary), dtype=float)
        if v.shape != (inside.sum(),) or b.shape != (n - inside.sum(),):
            raise ValueError("config/boundary shapes do not match the partition")
        full = np.empty(n)
        full[inside] = v
        full[~inside] = b
    W = system.W
    s_in = np.where(inside, full, 0.0)
    s_out = full - s_in
    return float(-0.5 * s_in @ (W @ s_in) - h * s_in.sum() - s_in @ (W @ s_out))


def local_field(system: KacSystem, config, x=None):
    h = system.local_field(_values(config))
    return h if x is None else h[x]


def flip_rate(system: KacSystem, config, x) -> float:
    v = np.asarray(_values(config), dtype=float)
    hx = system.W[x] @ v
    return glauber_rate(v[x], hx, system.beta)


def rate_bounds(kernel: KacKernel | float, beta: float) -> tuple[float, float]:
    """``(c_m, c_M)`` with ``c_m = 1/(1 + exp(4 beta ||J||))`` and ``c_M = 1 - c_m``."""
    jn = kernel.sup_norm if isinstance(kernel, KacKernel) else float(kernel)
    c_m = float(expit(-4.0 * beta * jn))
    return c_m, 1.0 - c_m


# ---------------------------------------------------------------------------
# coarse grained quantities


def coarse_potential_matrix(coarse: CoarseGeometry, kernel: KacKernel, variant: str = "sites") -> np.ndarray:
    """Block-averaged coupling ``Jbar[i,k]`` (microscopic units).

    ``variant="sites"`` averages ``W`` over site pairs, with ``n_i(n_i-1)``
    ordered pairs on the diagonal; ``"cells"`` averages ``gamma*J`` over the
    block cells.
    """
    key = ("Jbar", variant, id(kernel))
    if key in coarse._cache:
        return coarse._cache[key]
    sizes = coarse.sizes.astype(float)
    if variant == "sites":
        W = coupling_matrix(coarse.lattice, kernel)
        n, B = coarse.lattice.n_sites, coarse.n_blocks
        P = sparse.csr_matrix((np.ones(n), (coarse.block_of_site, np.arange(n))), shape=(B, n))
        S = (P @ W @ P.T).toarray()
        denom = np.outer(sizes, sizes)
        np.fill_diagonal(denom, np.maximum(sizes * (sizes - 1), 1.0))
        out = S / denom
    elif variant == "cells":
        w = coarse.widths
        out = coarse.lattice.gamma * coarse.cell_integrals(kernel) / np.outer(w, w)
    else:
        raise ValueError("variant must be 'sites' or 'cells'")
    coarse._cache[key] = out
    return out


def coarse_potential(coarse: CoarseGeometry, kernel: KacKernel, i: int, k: int, variant: str = "sites") -> float:
    return float(coarse_potential_matrix(coarse, kernel, variant)[i, k])


def coarse_field(m, jbar, sizes) -> np.ndarray:
    """``hbar(i; m) = sum_k Jbar[i,k] n_k m_k`` (the diagonal term included)."""
    return jbar @ (np.asarray(sizes, dtype=float) * np.asarray(m, dtype=float))


def coarse_rates_all(m, beta, jbar, sizes):
    """Per-block ``(cbar_plus, cbar_minus)``.

    ``cbar_plus`` is the rate density for a + spin to flip down, so it
    lowers ``m_i``; ``cbar_minus`` raises it.
    """
    m = np.asarray(m, dtype=float)
    if np.any(np.abs(m) > 1):
        raise ValueError("block magnetizations must lie in [-1, 1]")
    h = coarse_field(m, jbar, sizes)
    return 0.5 * (1 + m) * glauber_rate(1, h, beta), 0.5 * (1 - m) * glauber_rate(-1, h, beta)


def coarse_rates(m, i: int, beta: float, jbar, sizes) -> tuple[float, float]:
    cp, cm = coarse_rates_all(m, beta, jbar, sizes)
    return float(cp[i]), float(cm[i])
