"""Coarse space-time-magnetization tubes.

Scale schedules, discretized paths and their tubes, the Poisson tubelet
probabilities (exact sums and the rate-function asymptotics), surgery away
from the saturated values, bad-interval bounds and the discrete action.

Rates follow the per-site, per-unit-time convention: a block of ``n``
sites with deterministic rates ``(c_plus, c_minus)`` sees ``Poisson(n *
c_plus * dt)`` flips from + to - and ``Poisson(n * c_minus * dt)`` from -
to + in a window of length ``dt``.  The block magnetization changes by
``2 (N_minus - N_plus) / n``.
"""
from __future__ import annotations

import csv
import json
import warnings
from dataclasses import asdict, dataclass

import numpy as np
from numpy.polynomial.legendre import leggauss
from scipy import ndimage, special, stats

from .cost import PathProfile, cost_density
from .field import Grid
from .kernel import CoarseGeometry, KacKernel, glauber_rate, rate_bounds

__all__ = [
    "ScaleSchedule", "Violation", "validate_schedule", "DEFAULT_SCHEDULE", "MUTATIONS",
    "QuantizationError", "DiscretizedPath", "tube_membership", "block_average",
    "interpolant", "evaluate_interpolant", "PoissonRatePair", "deterministic_rates",
    "deterministic_rates_all", "relative_entropy", "optimal_fractions", "rate_function",
    "rate_function_dt", "tube_event_prob_exact", "AsymptoticEstimate", "tube_prob_asymptotic",
    "MoveAway", "move_away", "case_exponent", "BadIntervalBounds", "bad_interval_bounds",
    "discrete_action", "cardinality_correction", "c_star", "bridge_constant", "rate_mismatch",
    "density_residual", "density_equivalence_check", "mollify",
]


# ---------------------------------------------------------------------------
# scale schedule


@dataclass(frozen=True)
class ScaleSchedule:
    """Exponents tying every mesoscopic scale to ``gamma`` through ``|ln gamma|``."""

    gamma: float = 0.05
    a: float = 0.01
    b: float = 0.2
    c: float = 0.5
    lam0: float = 0.2
    lam1: float = 0.15
    lam2: float = 0.1
    lam3: float = 0.25
    lam4: float = 1.0
    alpha: float = 0.1

    def __post_init__(self):
        for name in ("gamma", "c", "alpha"):
            v = getattr(self, name)
            if not 0 < v < 1:
                raise ValueError(f"{name} must lie in (0, 1), got {v}")

    def with_(self, **kw) -> "ScaleSchedule":
        d = asdict(self)
        d.update(kw)
        return ScaleSchedule(**d)

    @property
    def log_gamma(self) -> float:
        return abs(np.log(self.gamma))

    def eta(self, k: int) -> float:
        return self.log_gamma ** (-getattr(self, f"lam{k}"))

    @property
    def eps(self) -> float:
        return self.log_gamma ** (-self.a)

    @property
    def block_length(self) -> float:
        return self.log_gamma ** (-self.b)

    @property
    def dt(self) -> float:
        return self.gamma ** self.c

    @property
    def Delta(self) -> float:
        return self.dt * self.eta(0)

    @property
    def delta(self) -> float:
        return 0.5 * self.Delta

    @property
    def delta_prime(self) -> float:
        """``dt * eta_3`` snapped to the nearest positive multiple of ``Delta``."""
        k = max(1, int(np.rint(self.dt * self.eta(3) / self.Delta)))
        return k * self.Delta

    @property
    def sites_per_block(self) -> float:
        return self.block_length / self.gamma

    @property
    def jump_cap(self) -> float:
        """``N = gamma^-1 eps^-1 dt / eta_1``."""
        return self.dt / (self.gamma * self.eps * self.eta(1))

    @property
    def bad_budget(self) -> float:
        """``kbar = eta_2^-1 / (eps^-1 dt eta_1^-1 ln(1/eta_1))``."""
        e1 = self.eta(1)
        return (1 / self.eta(2)) / (self.dt / (self.eps * e1) * np.log(1 / e1))

    @property
    def slope_bound(self) -> float:
        """Largest block slope under the jump cap: ``N`` flips in one block of ``gamma^-1 |I|``
        sites move it by ``2N / (gamma^-1 |I|)``, giving ``2 eps^-1 / (eta_1 |I|)`` per unit time."""
        return 2 / (self.eps * self.eta(1) * self.block_length)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class Violation:
    name: str
    expression: str
    value: float


_CONSTRAINTS = {
    # name: (expression, margin that must be < 0)
    "req0": ("3a + lam1 - b < 0", lambda s: 3 * s.a + s.lam1 - s.b),
    "mulambda": ("lam1 > lam2 > 0", lambda s: max(s.lam2 - s.lam1, -s.lam2)),
    "req4": ("3a - lam0 (1 - alpha)/2 < 0", lambda s: 3 * s.a - s.lam0 * (1 - s.alpha) / 2),
    "req3": ("3a - lam3 (1 - alpha) < 0", lambda s: 3 * s.a - s.lam3 * (1 - s.alpha)),
    "c1": ("lam4 > 2 lam1 + 2b + 4a", lambda s: 2 * s.lam1 + 2 * s.b + 4 * s.a - s.lam4),
    "c2": ("lam1 + b + lam3 + a < 1", lambda s: s.lam1 + s.b + s.lam3 + s.a - 1),
    "req10": ("2 lam1 + (4/3) lam3 (1 - alpha) < 1", lambda s: 2 * s.lam1 + 4 / 3 * s.lam3 * (1 - s.alpha) - 1),
}


def validate_schedule(s: ScaleSchedule) -> list[Violation]:
    """All violated constraints (an empty list means the schedule is admissible)."""
    out = []
    for name, (expr, margin) in _CONSTRAINTS.items():
        v = float(margin(s))
        if not v < 0:
            out.append(Violation(name, expr, v))
    return out


DEFAULT_SCHEDULE = ScaleSchedule()

# one single-constraint mutation of the default for each predicate
MUTATIONS = {
    "req0": {"b": 0.1},
    "mulambda": {"lam2": 0.15},
    "req4": {"lam0": 0.05},
    "req3": {"lam3": 0.03},
    "c1": {"lam4": 0.5},
    "c2": {"b": 0.7, "lam4": 2.0},
    "req10": {"lam3": 0.6},
}


# ---------------------------------------------------------------------------
# discretized paths


class QuantizationError(ValueError):
    pass


def _grid_index(v, Delta):
    return np.rint((np.asarray(v, dtype=float) + 1.0) / Delta)


@dataclass(frozen=True, eq=False)
class DiscretizedPath:
    """``values[j, i] = a_{i,j}`` at time ``j * dt`` on block ``i``, on the grid ``-1 + k Delta``.

    ``coarse`` supplies the blocks (widths and site counts); it is needed for
    anything involving rates.
    """

    values: np.ndarray
    dt: float
    Delta: float
    coarse: CoarseGeometry | None = None

    def __post_init__(self):
        v = np.atleast_2d(np.asarray(self.values, dtype=float))
        if np.any(np.abs(v) > 1 + 1e-12):
            raise ValueError("path values must lie in [-1, 1]")
        if self.dt <= 0 or not 0 < self.Delta <= 2:
            raise ValueError("need dt > 0 and 0 < Delta <= 2")
        k = _grid_index(v, self.Delta)
        off = np.abs(np.clip(-1 + k * self.Delta, -1, 1) - v)
        if np.any(off > 1e-9):
            raise QuantizationError("path values are not on the Delta grid; use DiscretizedPath.quantize")
        if self.coarse is not None and v.shape[1] != self.coarse.n_blocks:
            raise ValueError(f"path has {v.shape[1]} blocks, geometry has {self.coarse.n_blocks}")
        object.__setattr__(self, "values", v)

    @classmethod
    def quantize(cls, raw, dt: float, Delta: float, coarse: CoarseGeometry | None = None) -> "DiscretizedPath":
        """Round each entry to the nearest grid value ``-1 + k Delta``, ``k = 0..floor(2/Delta)``."""
        k = np.clip(_grid_index(raw, Delta), 0, np.floor(2 / Delta + 1e-12))
        return cls(np.clip(-1 + k * Delta, -1, 1), dt, Delta, coarse)

    @property
    def n_windows(self) -> int:
        return self.values.shape[0] - 1

    @property
    def n_blocks(self) -> int:
        return self.values.shape[1]

    @property
    def times(self) -> np.ndarray:
        return self.dt * np.arange(self.values.shape[0])

    @property
    def slopes(self) -> np.ndarray:
        """``d[j-1, i] = (a_{i,j} - a_{i,j-1}) / dt``, shape ``(J, B)``."""
        return np.diff(self.values, axis=0) / self.dt

    def with_values(self, values) -> "DiscretizedPath":
        return DiscretizedPath(values, self.dt, self.Delta, self.coarse)

    def _need_coarse(self) -> CoarseGeometry:
        if self.coarse is None:
            raise ValueError("this operation needs a path with block geometry")
        return self.coarse

    # io ------------------------------------------------------------------
    def to_csv(self, path) -> None:
        """Matrix CSV: rows are time indices, columns blocks; the header records dt and Delta."""
        with open(path, "w", newline="") as fh:
            fh.write(f"# dt={self.dt!r} Delta={self.Delta!r}\n")
            csv.writer(fh).writerows([[repr(float(x)) for x in row] for row in self.values])

    @classmethod
    def from_csv(cls, path, coarse: CoarseGeometry | None = None) -> "DiscretizedPath":
        with open(path) as fh:
            head = fh.readline().lstrip("#").split()
            meta = dict(kv.split("=") for kv in head)
            rows = [[float(x) for x in r] for r in csv.reader(fh) if r]
        return cls(np.array(rows), float(meta["dt"]), float(meta["Delta"]), coarse)

    def to_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump({"dt": self.dt, "Delta": self.Delta, "values": self.values.tolist()}, fh)

    @classmethod
    def from_json(cls, path, coarse: CoarseGeometry | None = None) -> "DiscretizedPath":
        with open(path) as fh:
            d = json.load(fh)
        return cls(np.array(d["values"], dtype=float), d["dt"], d["Delta"], coarse)


def in_safe_set(a: DiscretizedPath, delta_prime: float) -> bool:
    """Membership in the class of paths with ``|a +- 1| >= delta'`` (non-strict, see move_away)."""
    return bool(np.all(1 - np.abs(a.values) >= delta_prime - 1e-12))


def block_average(coarse: CoarseGeometry, m, t: float = 0.0, nquad: int = 8) -> np.ndarray:
    """``|I_i|^-1 int_{I_i} m(x, t) dx`` by Gauss-Legendre on each block."""
    xg, wg = leggauss(nquad)
    e = coarse.edges
    lo, hi = e[:-1, None], e[1:, None]
    x = 0.5 * (hi - lo) * xg[None, :] + 0.5 * (hi + lo)
    vals = np.asarray(m(x, t), dtype=float)
    return 0.5 * (vals * wg).sum(axis=1)


def tube_membership(blocks, a: DiscretizedPath, delta: float):
    """True iff ``sup_{i,j} |m(i, j dt) - a_{i,j}| < delta``.

    ``blocks`` holds block magnetizations at the path times with shape
    ``(J+1, B)``, or ``(R, J+1, B)`` for replicas (one result each).  An
    :class:`~kacldp.glauber.EventLog` is sampled at the path times.
    """
    from .glauber import EventLog

    if isinstance(blocks, EventLog):
        coarse = a._need_coarse()
        if blocks.initial.size != coarse.lattice.n_sites:
            raise ValueError("event log and path geometry disagree")
        if blocks.horizon < a.times[-1] - 1e-12:
            raise ValueError("event log is shorter than the path")
        blocks = coarse.block_spins(blocks.states_at(a.times))
    m = np.asarray(blocks, dtype=float)
    if m.shape[-2:] != a.values.shape:
        raise ValueError(f"block trace shape {m.shape} does not match path {a.values.shape}")
    dist = np.abs(m - a.values).max(axis=(-1, -2))
    out = dist < delta
    return bool(out) if out.ndim == 0 else out


def tube_membership_function(blocks, m, times, coarse: CoarseGeometry, delta: float, nquad: int = 8):
    """Membership in the tube around a function ``m(x, t)`` (block averages at ``times``)."""
    target = np.stack([block_average(coarse, m, t, nquad) for t in times])
    mb = np.asarray(blocks, dtype=float)
    if mb.shape[-2:] != target.shape:
        raise ValueError("block trace does not match times and blocks")
    out = np.abs(mb - target).max(axis=(-1, -2)) < delta
    return bool(out) if out.ndim == 0 else out


# ---------------------------------------------------------------------------
# interpolant


def evaluate_interpolant(a: DiscretizedPath, x, t, side: str = "right"):
    """``(phi_a, psi_a)`` at points ``(x, t)``.

    ``phi_a`` is piecewise constant in space, linear in time on each window;
    ``psi_a`` is its time derivative.  ``side="left"`` evaluates the window
    ending at a grid time instead of the one starting there.
    """
    coarse = a._need_coarse()
    x, t = np.broadcast_arrays(np.asarray(x, dtype=float), np.asarray(t, dtype=float))
    i = np.clip(np.searchsorted(coarse.edges, x, side="right") - 1, 0, a.n_blocks - 1)
    s = t / a.dt
    if side == "right":
        j = np.floor(s + 1e-12).astype(int)
    else:
        j = np.ceil(s - 1e-12).astype(int) - 1
    j = np.clip(j, 0, a.n_windows - 1)
    v0, v1 = a.values[j, i], a.values[j + 1, i]
    frac = np.clip(s - j, 0.0, 1.0)
    frac = np.where(np.abs(frac - np.rint(frac)) < 1e-12, np.rint(frac), frac)
    phi = np.where(frac == 1.0, v1, v0 + frac * (v1 - v0))
    return phi, (v1 - v0) / a.dt


def interpolant(a: DiscretizedPath, nt_sub: int = 4) -> tuple[PathProfile, np.ndarray]:
    """``(phi_a, psi_a)`` sampled on the site grid.

    Times are midpoints of ``nt_sub`` equal sub-steps per window with
    matching weights, so ``action(phi_a)`` integrates ``H(phi_a, psi_a)``
    by the midpoint rule in both variables; ``psi_a`` is carried as the
    exact ``phidot``.
    """
    coarse = a._need_coarse()
    lat = coarse.lattice
    grid = Grid(lat.left, lat.right, lat.n_sites)
    J = a.n_windows
    frac = (np.arange(nt_sub) + 0.5) / nt_sub
    t = (np.arange(J)[:, None] + frac[None, :]).ravel() * a.dt
    blk = coarse.block_of_site
    jj = np.repeat(np.arange(J), nt_sub)
    ff = np.tile(frac, J)[:, None]
    v0, v1 = a.values[jj][:, blk], a.values[jj + 1][:, blk]
    phi = v0 + ff * (v1 - v0)
    psi = (v1 - v0) / a.dt
    prof = PathProfile(grid, t, phi, psi, t_weights=np.full(t.size, a.dt / nt_sub))
    return prof, psi


# ---------------------------------------------------------------------------
# rates


@dataclass(frozen=True)
class PoissonRatePair:
    """Per-site intensities of the two Poisson clocks of one block and window."""

    c_plus: float
    c_minus: float
    n: float
    dt: float

    def __post_init__(self):
        if not (0 <= self.c_plus <= 1 and 0 <= self.c_minus <= 1):
            raise ValueError("rates must lie in [0, 1]")
        if self.n <= 0 or self.dt <= 0:
            raise ValueError("need n > 0 and dt > 0")

    @property
    def means(self) -> tuple[float, float]:
        return self.n * self.c_plus * self.dt, self.n * self.c_minus * self.dt

    @property
    def drift(self) -> float:
        return 2 * (self.c_minus - self.c_plus)


def _rates_from(m_prev, g, beta):
    """``c_+ = (1+m)/2 F(+, g)`` (lowers m) and ``c_- = (1-m)/2 F(-, g)`` (raises m)."""
    return 0.5 * (1 + m_prev) * glauber_rate(1, g, beta), 0.5 * (1 - m_prev) * glauber_rate(-1, g, beta)


def deterministic_rates_all(a: DiscretizedPath, kernel: KacKernel, beta: float):
    """Arrays ``(c_plus, c_minus)`` of shape ``(J, B)`` for every window and block.

    Window ``j`` uses ``a_{.,j}`` (its left end) for the fraction and for the
    block-averaged field ``|I_i|^-1 int_{I_i} J * a_j``, walls reflected.
    """
    coarse = a._need_coarse()
    K = coarse.block_kernel(kernel)
    prev = a.values[:-1]
    g = prev @ K.T
    return _rates_from(prev, g, beta)


def deterministic_rates(a: DiscretizedPath, i: int, j: int, kernel: KacKernel, beta: float) -> PoissonRatePair:
    """Rates of block ``i`` over the window ``[(j-1) dt, j dt)``, ``j >= 1``."""
    if not 1 <= j <= a.n_windows or not 0 <= i < a.n_blocks:
        raise IndexError("window or block index out of range")
    cp, cm = deterministic_rates_all(a, kernel, beta)
    return PoissonRatePair(float(cp[j - 1, i]), float(cm[j - 1, i]), float(a.coarse.sizes[i]), a.dt)


def c_star(schedule: ScaleSchedule, kernel: KacKernel) -> float:
    """``C* = |I| ||J'|| + gamma ||J||``."""
    return schedule.block_length * kernel.deriv_sup_norm + schedule.gamma * kernel.sup_norm


def rate_mismatch(coarse: CoarseGeometry, kernel: KacKernel, beta: float, m, a_prev) -> float:
    """``max_i |cbar(i, m) - cbar(i, a)|`` over both signs.

    ``cbar(i, m)`` uses the site-averaged coarse potential with the block's own
    spin in the field; ``cbar(i, a)`` the deterministic rates of ``a_prev``.
    """
    from .kernel import coarse_potential_matrix, coarse_rates_all

    jbar = coarse_potential_matrix(coarse, kernel, "sites")
    mp, mm = coarse_rates_all(m, beta, jbar, coarse.sizes)
    g = coarse.block_kernel(kernel) @ np.asarray(a_prev, dtype=float)
    ap, am = _rates_from(np.asarray(a_prev, dtype=float), g, beta)
    return float(max(np.max(np.abs(mp - ap)), np.max(np.abs(mm - am))))


# ---------------------------------------------------------------------------
# rate function


def _h(z, zeta):
    """``h(z|zeta)`` allowing ``zeta = 0`` (then ``h = 0`` at ``z = 0`` and ``inf`` otherwise)."""
    z, zeta = np.broadcast_arrays(np.asarray(z, dtype=float), np.asarray(zeta, dtype=float))
    with np.errstate(divide="ignore", invalid="ignore"):
        out = special.rel_entr(z, zeta) - z + zeta
    return out


def relative_entropy(z, zeta):
    """``h(z|zeta) = z ln(z/zeta) - z + zeta`` with ``h(0|zeta) = zeta``."""
    z, zeta = np.asarray(z, dtype=float), np.asarray(zeta, dtype=float)
    if np.any(zeta <= 0):
        raise ValueError("h(z|zeta) needs zeta > 0")
    if np.any(z < 0):
        raise ValueError("h(z|zeta) needs z >= 0")
    out = _h(z, zeta)
    return out if out.ndim else float(out)


def optimal_fractions(d, c_plus, c_minus):
    """``(x_plus, x_minus)`` with ``x_plus x_minus = c_plus c_minus`` and ``2 (x_minus - x_plus) = d``.

    ``x_plus = -d/4 + sqrt(d^2/16 + c_plus c_minus)``; the root that would
    cancel is taken from the product instead.
    """
    d, cp, cm = np.broadcast_arrays(*(np.asarray(v, dtype=float) for v in (d, c_plus, c_minus)))
    if np.any(cp < 0) or np.any(cm < 0):
        raise ValueError("rates must be nonnegative")
    P = cp * cm
    q = 0.25 * d
    s = np.hypot(q, np.sqrt(P))
    with np.errstate(divide="ignore", invalid="ignore"):
        xp = np.where(q > 0, P / (q + s), s - q)
        xm = np.where(q < 0, P / (s - q), s + q)
    xp = np.where(s == 0, 0.0, xp)
    xm = np.where(s == 0, 0.0, xm)
    if xp.ndim == 0:
        return float(xp), float(xm)
    return xp, xm


def rate_function(d, c_plus, c_minus):
    """``f(d) = h(x_plus|c_plus) + h(x_minus|c_minus)`` at the optimal fractions."""
    xp, xm = optimal_fractions(d, c_plus, c_minus)
    out = _h(xp, c_plus) + _h(xm, c_minus)
    return out if np.ndim(out) else float(out)


def rate_function_dt(d, c_plus, c_minus, dt: float):
    """The window version ``h(dt x_plus | dt c_plus) + h(dt x_minus | dt c_minus)``, equal to ``dt f``."""
    xp, xm = optimal_fractions(d, c_plus, c_minus)
    out = _h(dt * np.asarray(xp), dt * np.asarray(c_plus)) + _h(dt * np.asarray(xm), dt * np.asarray(c_minus))
    return out if np.ndim(out) else float(out)


# ---------------------------------------------------------------------------
# tubelet probabilities


def _k_range(n: float, d: float, dt: float, delta: float) -> np.ndarray:
    """Integers ``k = N_minus - N_plus`` with ``|2k/n - d dt| < delta``."""
    lo = n * (d * dt - delta) / 2
    hi = n * (d * dt + delta) / 2
    k = np.arange(int(np.floor(lo)), int(np.ceil(hi)) + 1)
    return k[np.abs(2 * k / n - d * dt) < delta]


def tube_event_prob_exact(rates: PoissonRatePair, d: float, delta: float, N: float | None = None,
                          a_prev: float | None = None, log: bool = False) -> float:
    """Exact ``nu(B^delta)`` for two independent Poisson counts.

    Sums ``P(N_plus = p) P(N_minus = p + k)`` over the admissible ``k`` and
    over ``p`` with ``N_plus + N_minus <= N`` (``N=None`` for no cap).  With
    ``a_prev`` the counts are also limited to the spins available in the block,
    ``N_plus <= n (1 + a_prev)/2`` and ``N_minus <= n (1 - a_prev)/2``.
    Accumulates in log space; ``log=True`` returns ``ln nu``.
    """
    mp, mm = rates.means
    ks = _k_range(rates.n, d, rates.dt, delta)
    cap_p = cap_m = np.inf
    if a_prev is not None:
        cap_p = np.floor(rates.n * (1 + a_prev) / 2 + 1e-9)
        cap_m = np.floor(rates.n * (1 - a_prev) / 2 + 1e-9)
    tail = max(mp, mm) + 40 * np.sqrt(max(mp, mm)) + 60
    terms = []
    for k in ks:
        p_lo = max(0, -k)
        p_hi = tail
        if N is not None:
            p_hi = min(p_hi, np.floor((N - k) / 2))
        p_hi = min(p_hi, cap_p, cap_m - k)
        if p_hi < p_lo:
            continue
        p = np.arange(p_lo, int(p_hi) + 1)
        lp = _poisson_logpmf(p, mp) + _poisson_logpmf(p + k, mm)
        terms.append(special.logsumexp(lp))
    lnu = special.logsumexp(terms) if terms else -np.inf
    return float(lnu) if log else float(np.exp(lnu))


def _poisson_logpmf(k, mean):
    if mean == 0:
        return np.where(k == 0, 0.0, -np.inf)
    return stats.poisson.logpmf(k, mean)


@dataclass(frozen=True)
class AsymptoticEstimate:
    log_prob: float
    band: float
    in_regime: bool


STIRLING_MIN_MEAN = 10.0


def tube_prob_asymptotic(rates: PoissonRatePair, d: float, delta: float, alpha: float,
                         K: float = 1.0) -> AsymptoticEstimate:
    """``ln nu(B^delta) ~ -n dt f`` with error band ``n (delta/dt)^((1-alpha)/2) dt + K ln n``.

    ``in_regime`` is false (with a warning) when either Poisson mean is below
    ``STIRLING_MIN_MEAN``, where the Stirling approximation is not reliable.
    """
    n, dt = rates.n, rates.dt
    f = rate_function(d, rates.c_plus, rates.c_minus)
    band = n * (delta / dt) ** ((1 - alpha) / 2) * dt + K * np.log(n)
    ok = min(rates.means) >= STIRLING_MIN_MEAN
    if not ok:
        warnings.warn("Poisson means below the Stirling regime", RuntimeWarning, stacklevel=2)
    return AsymptoticEstimate(float(-n * dt * f), float(band), bool(ok))


# ---------------------------------------------------------------------------
# moving profiles away from +-1


@dataclass(frozen=True, eq=False)
class MoveAway:
    """Moved path, per-window case labels ``(J, B)`` (0 none, 1 enters, 2 exits, 3 both inside),
    and the log-ratio exponents ``M`` for each window and block."""

    path: DiscretizedPath
    cases: np.ndarray
    exponents: np.ndarray


def case_exponent(case: int, n: float, dt: float, delta_prime: float, alpha: float,
                  beta: float, block_length: float, c_m: float) -> float:
    """Exponent ``M`` bounding ``nu(B(a)) / nu(B(a~))`` for one window."""
    dp = delta_prime
    drift = 2 * np.log1p(beta * dp * block_length / c_m) + 2 * beta * block_length * dp * dt
    if case == 0:
        return 0.0
    if case == 1:
        return n * (2 * dt * (dp / (2 * dt)) ** (1 - alpha) + dp / 2)
    if case == 2:
        return n * (dt * (dp / (4 * dt)) ** (1 - alpha) + drift + dp / 2)
    if case == 3:
        return n * drift
    raise ValueError("case must be 0..3")


def move_away(a: DiscretizedPath, delta_prime: float, beta: float = 2.0, kernel: KacKernel | None = None,
              alpha: float = 0.1) -> MoveAway:
    """Shift every entry with ``|1 -+ a| < delta'`` by ``delta'`` toward zero.

    ``delta'`` must be a multiple of ``Delta`` so the result stays on the grid.
    Entries already at distance exactly ``delta'`` are left alone, so the
    output satisfies ``|1 +- a~| >= delta'``.
    """
    ratio = delta_prime / a.Delta
    if delta_prime <= 0 or abs(ratio - np.rint(ratio)) > 1e-9:
        raise QuantizationError("delta' must be a positive multiple of Delta")
    v = a.values
    hi = v > 1 - delta_prime + 1e-12
    lo = v < -1 + delta_prime - 1e-12
    new = np.where(hi, v - delta_prime, np.where(lo, v + delta_prime, v))
    inside = hi | lo
    prev, nxt = inside[:-1], inside[1:]
    cases = np.select([~prev & nxt, prev & ~nxt, prev & nxt], [1, 2, 3], 0)
    exps = np.zeros(cases.shape)
    if a.coarse is not None and np.any(cases):
        c_m = rate_bounds(kernel if kernel is not None else 1.0, beta)[0]
        for (jj, ii), cs in np.ndenumerate(cases):
            if cs:
                exps[jj, ii] = case_exponent(int(cs), float(a.coarse.sizes[ii]), a.dt, delta_prime, alpha,
                                             beta, float(a.coarse.widths[ii]), c_m)
    return MoveAway(a.with_values(np.clip(new, -1, 1)), cases, exps)


# ---------------------------------------------------------------------------
# bad intervals and the discrete action


@dataclass(frozen=True)
class BadIntervalBounds:
    g1: float
    g2: float
    upper: float


def bad_interval_bounds(a: DiscretizedPath, i: int, j: int, kernel: KacKernel, beta: float) -> BadIntervalBounds:
    """``g1`` (both rates at ``c_M``) and ``g2`` (both at ``c_m``) for block ``i``, window ``j``.

    ``upper`` is the largest rate function over the four corners
    ``(k_+ c, k_- c')`` with ``c, c'`` in ``{c_m, c_M}``; since ``f`` is convex
    in the rates and the true rates lie in that box, ``0 <= f <= upper``.
    """
    if not 1 <= j <= a.n_windows:
        raise IndexError("window index out of range")
    c_m, c_M = rate_bounds(kernel, beta)
    prev = a.values[j - 1, i]
    kp, km = 0.5 * (1 + prev), 0.5 * (1 - prev)
    d = a.slopes[j - 1, i]
    g1 = rate_function(d, kp * c_M, km * c_M)
    g2 = rate_function(d, kp * c_m, km * c_m)
    corners = [rate_function(d, kp * u, km * w) for u in (c_m, c_M) for w in (c_m, c_M)]
    return BadIntervalBounds(float(g1), float(g2), float(max(corners)))


def discrete_action(a: DiscretizedPath, kernel: KacKernel, beta: float, bad_set=(),
                    schedule: ScaleSchedule | None = None, bad_bound: str = "g1") -> float:
    """``sum_i (sum_{j good} f + sum_{j bad} g) |I_i| dt``.

    ``bad_set`` holds window indices ``j >= 1``; ``gamma^-1`` times the result
    is the log-probability exponent of the tube.  With a schedule the number
    of bad windows is checked against its budget.
    """
    coarse = a._need_coarse()
    bad = sorted(set(int(j) for j in bad_set))
    if schedule is not None and len(bad) > schedule.bad_budget:
        raise ValueError(f"{len(bad)} bad windows exceed the budget {schedule.bad_budget:.3g}")
    cp, cm = deterministic_rates_all(a, kernel, beta)
    F = rate_function(a.slopes, cp, cm)
    for j in bad:
        for i in range(a.n_blocks):
            b = bad_interval_bounds(a, i, j, kernel, beta)
            F[j - 1, i] = b.g1 if bad_bound == "g1" else b.g2
    return float(np.sum(F * coarse.widths[None, :]) * a.dt)


def cardinality_correction(schedule: ScaleSchedule, n_cells: float | None = None) -> float:
    """``gamma ln |Omega|``: ``gamma * cells * ln(2/Delta)``, cells defaulting to ``eps^-3/(dt |I|)``."""
    if n_cells is None:
        n_cells = schedule.eps ** -3 / (schedule.dt * schedule.block_length)
    return float(schedule.gamma * n_cells * np.log(2 / schedule.Delta))


def bridge_constant(schedule: ScaleSchedule, P: float = 1.0) -> dict:
    """The two error terms bounding ``||f - H(phi_a, psi_a)||_1``.

    ``near`` is ``eps^-5 eta_4 / (eta_1^2 |I|^2)``; ``far`` is
    ``eps^-1 P / (eta_1 |I| eta_3 |ln dt|)`` with ``P`` a bound on
    ``int |psi_a ln(1 -+ phi_a)|``.
    """
    s = schedule
    near = s.eps ** -5 * s.eta(4) / (s.eta(1) ** 2 * s.block_length ** 2)
    far = P / (s.eps * s.eta(1) * s.block_length * s.eta(3) * abs(np.log(s.dt)))
    return {"near": float(near), "far": float(far), "total": float(near + far)}


# ---------------------------------------------------------------------------
# density identity and mollification


def density_residual(phi, psi, conv, beta: float):
    """``|H(phi, psi) - [h(y|c_+) + h(y + psi/2|c_-)]|`` with rates evaluated at ``phi``."""
    cp, cm = _rates_from(np.asarray(phi, dtype=float), np.asarray(conv, dtype=float), beta)
    H = cost_density(phi, psi, conv, beta)
    xp, xm = optimal_fractions(psi, cp, cm)
    out = np.abs(H - (_h(xp, cp) + _h(xm, cm)))
    return out if out.ndim else float(out)


def density_equivalence_check(a: DiscretizedPath, i: int, j: int, kernel: KacKernel, beta: float) -> float:
    """Residual of the two forms of ``H`` at the centre of cell ``(i, j)``, ``j >= 1``."""
    coarse = a._need_coarse()
    if not 1 <= j <= a.n_windows:
        raise IndexError("window index out of range")
    phi_mid = 0.5 * (a.values[j - 1] + a.values[j])
    conv = coarse.block_kernel(kernel) @ phi_mid
    return float(density_residual(phi_mid[i], a.slopes[j - 1, i], conv[i], beta))


def _bump_weights(radius: float, h: float) -> np.ndarray:
    R = int(np.floor(radius / h))
    if R < 1:
        return np.ones(1)
    r = np.arange(-R, R + 1) * h / radius
    with np.errstate(divide="ignore", over="ignore"):
        w = np.where(np.abs(r) < 1, np.exp(-1 / (1 - r * r)), 0.0)
    return w / w.sum()


def mollify(path: PathProfile, radius: float, t_radius: float | None = None) -> tuple[PathProfile, float]:
    """Space-time convolution with a product of smooth compact bumps.

    ``radius`` applies in space, ``t_radius`` (default ``radius``) in time;
    walls reflect in space and hold in time.  Returns the mollified path and
    its weighted L1 distance to the input.
    """
    if radius <= 0:
        raise ValueError("radius must be positive")
    tr = radius if t_radius is None else t_radius
    wx = _bump_weights(radius, path.grid.dx)
    ht = float(np.min(np.diff(path.t))) if path.t.size > 1 else 1.0
    wt = _bump_weights(tr, ht)

    def smooth(v):
        v = ndimage.correlate1d(v, wx, axis=1, mode="reflect")
        return ndimage.correlate1d(v, wt, axis=0, mode="nearest")

    vals = smooth(path.values)
    pd = smooth(path.phidot) if path.phidot_supplied else None
    out = PathProfile(path.grid, path.t, vals, pd, path.t_weights)
    l1 = float(np.sum(path.t_weights[:, None] * path.grid.dx * np.abs(vals - path.values)))
    return out, l1
