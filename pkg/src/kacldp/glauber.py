"""Continuous-time Glauber dynamics: exact simulation, event logs, likelihood
ratios, exact generators and the lumped block-magnetization chain."""
from __future__ import annotations

import itertools
import json
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy import sparse

from . import _kmc
from .kernel import (
    CoarseGeometry, KacKernel, KacSystem, SpinConfig, coarse_potential_matrix, coarse_rates_all,
    glauber_rate,
)

__all__ = [
    "EventLog",
    "BatchTrace",
    "SingularityError",
    "CapacityError",
    "replica_seeds",
    "simulate",
    "simulate_batch",
    "simulate_tilted",
    "block_spin",
    "jump_count",
    "path_log_likelihood_ratio",
    "glauber_rate_function",
    "constant_rate_function",
    "GeneratorMatrix",
    "enumerate_spins",
    "full_generator",
    "gibbs_measure",
    "coarse_micro_generator",
    "lumped_generator",
    "stationary_distribution",
    "poisson_tail_bound",
]


class SingularityError(ValueError):
    """A realized jump has zero rate under the reference law."""


class CapacityError(ValueError):
    """State space too large to enumerate."""


# ---------------------------------------------------------------------------
# event log


@dataclass(frozen=True, eq=False)
class EventLog:
    """Initial configuration plus time-ordered flips on ``[0, horizon]``.

    The trajectory is right-continuous: the state at time t includes every
    flip with time <= t.
    """

    initial: np.ndarray
    times: np.ndarray
    sites: np.ndarray
    horizon: float

    def __post_init__(self):
        init = self.initial.values if isinstance(self.initial, SpinConfig) else np.asarray(self.initial)
        if not np.all(np.abs(init) == 1):
            raise ValueError("initial spins must be +1 or -1")
        t = np.asarray(self.times, dtype=float)
        s = np.asarray(self.sites, dtype=np.int64)
        if t.shape != s.shape or t.ndim != 1:
            raise ValueError("times and sites must be 1-d arrays of equal length")
        if t.size:
            if np.any(np.diff(t) <= 0):
                raise ValueError("event times must be strictly increasing")
            if t[0] < 0 or t[-1] > self.horizon:
                raise ValueError("event times must lie in [0, horizon]")
            if s.min() < 0 or s.max() >= init.size:
                raise ValueError("event site out of range")
        object.__setattr__(self, "initial", init.astype(np.int8))
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "sites", s)

    @property
    def n_events(self) -> int:
        return int(self.times.size)

    def state_at(self, t: float) -> np.ndarray:
        if not 0 <= t <= self.horizon:
            raise ValueError(f"time {t} outside [0, {self.horizon}]")
        k = np.searchsorted(self.times, t, side="right")
        parity = np.bincount(self.sites[:k], minlength=self.initial.size) & 1
        return (self.initial * (1 - 2 * parity)).astype(np.int8)

    def states_at(self, ts: Sequence[float]) -> np.ndarray:
        """Snapshots at several times, replayed incrementally; ``ts`` must be sorted."""
        ts = np.asarray(ts, dtype=float)
        if ts.size and (ts[0] < 0 or ts[-1] > self.horizon or np.any(np.diff(ts) < 0)):
            raise ValueError("times must be sorted and within [0, horizon]")
        out = np.empty((ts.size, self.initial.size), dtype=np.int8)
        cur = self.initial.copy()
        k = 0
        for a, t in enumerate(ts):
            k2 = np.searchsorted(self.times, t, side="right")
            flips = np.bincount(self.sites[k:k2], minlength=cur.size) & 1
            cur = cur * (1 - 2 * flips).astype(np.int8)
            k = k2
            out[a] = cur
        return out

    # serialization ---------------------------------------------------------
    def to_npz(self, path) -> None:
        np.savez_compressed(path, initial=self.initial, times=self.times, sites=self.sites,
                            horizon=np.array(self.horizon))

    @classmethod
    def from_npz(cls, path) -> "EventLog":
        with np.load(path) as z:
            return cls(z["initial"], z["times"], z["sites"], float(z["horizon"]))

    def to_jsonl(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(json.dumps({"initial": self.initial.tolist(), "horizon": self.horizon}) + "\n")
            for t, s in zip(self.times.tolist(), self.sites.tolist()):
                fh.write(json.dumps({"time": t, "site": s}) + "\n")

    @classmethod
    def from_jsonl(cls, path) -> "EventLog":
        with open(path) as fh:
            head = json.loads(fh.readline())
            rows = [json.loads(line) for line in fh if line.strip()]
        return cls(np.array(head["initial"]), np.array([r["time"] for r in rows], dtype=float),
                   np.array([r["site"] for r in rows], dtype=np.int64), float(head["horizon"]))


# ---------------------------------------------------------------------------
# simulation


def replica_seeds(seed: int, n: int) -> np.ndarray:
    """Independent 32-bit seeds for ``n`` replicas derived from one master seed."""
    return np.array([s.generate_state(1)[0] for s in np.random.SeedSequence(seed).spawn(n)],
                    dtype=np.int64)


def _csr(system: KacSystem):
    W = system.W
    return W.indptr.astype(np.int64), W.indices.astype(np.int64), W.data.astype(np.float64)


def simulate(system: KacSystem, initial, duration: float, seed: int) -> EventLog:
    """Exact Gillespie trajectory of Glauber dynamics on ``[0, duration]``."""
    if duration < 0:
        raise ValueError("duration must be nonnegative")
    init = initial.values if isinstance(initial, SpinConfig) else np.asarray(initial)
    if init.shape != (system.geometry.n_sites,):
        raise ValueError("initial configuration does not match the lattice")
    if duration == 0:
        return EventLog(init, np.empty(0), np.empty(0, dtype=np.int64), 0.0)
    times, sites = _kmc.gillespie(init.astype(np.int8), *_csr(system), float(system.beta),
                                  float(duration), int(replica_seeds(seed, 1)[0]))
    return EventLog(init, times, sites, float(duration))


@dataclass(frozen=True, eq=False)
class BatchTrace:
    """Block magnetizations ``blocks[r, s, b]`` at ``times[s]`` and flip counts per interval."""

    times: np.ndarray
    blocks: np.ndarray
    jumps: np.ndarray


def simulate_batch(system: KacSystem, coarse: CoarseGeometry, initial, sample_times,
                   n_replicas: int, seed: int) -> BatchTrace:
    """Independent replicas recording only block magnetizations (run in parallel threads)."""
    ts = np.asarray(sample_times, dtype=float)
    if ts.size < 1 or ts[0] != 0.0 or np.any(np.diff(ts) <= 0):
        raise ValueError("sample_times must start at 0 and increase")
    init = np.asarray(initial.values if isinstance(initial, SpinConfig) else initial, dtype=np.int8)
    if init.ndim == 1:
        init = np.broadcast_to(init, (n_replicas, init.size))
    if init.shape != (n_replicas, system.geometry.n_sites):
        raise ValueError("initial configurations do not match lattice and replica count")
    tr, jumps = _kmc.block_traces(np.ascontiguousarray(init), *_csr(system), float(system.beta), ts,
                                  coarse.starts.astype(np.int64), coarse.sizes.astype(np.int64),
                                  replica_seeds(seed, n_replicas))
    return BatchTrace(ts, tr, jumps[:, : max(ts.size - 1, 0)])


def simulate_tilted(system: KacSystem, coarse: CoarseGeometry, initial, window_times, qrates,
                    n_replicas: int, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Replicas under independent-spin proposal rates, with their ``ln dP/dQ`` against Glauber dynamics.

    ``qrates[j, b, 0]`` is the rate at which each + spin of block ``b`` flips
    during window ``j`` and ``qrates[j, b, 1]`` the same for - spins.  Returns
    block magnetizations at ``window_times`` and the log likelihood ratios.
    """
    ts = np.asarray(window_times, dtype=float)
    q = np.ascontiguousarray(qrates, dtype=float)
    if ts.size < 2 or ts[0] != 0.0 or np.any(np.diff(ts) <= 0):
        raise ValueError("window_times must start at 0 and increase")
    if q.shape != (ts.size - 1, coarse.n_blocks, 2) or np.any(q < 0):
        raise ValueError("qrates must be nonnegative with shape (windows, blocks, 2)")
    init = np.asarray(initial.values if isinstance(initial, SpinConfig) else initial, dtype=np.int8)
    if init.ndim == 1:
        init = np.broadcast_to(init, (n_replicas, init.size))
    if init.shape != (n_replicas, system.geometry.n_sites):
        raise ValueError("initial configurations do not match lattice and replica count")
    return _kmc.tilted_traces(np.ascontiguousarray(init), *_csr(system), float(system.beta), ts, q,
                              coarse.block_of_site.astype(np.int64), coarse.starts.astype(np.int64),
                              coarse.sizes.astype(np.int64), replica_seeds(seed, n_replicas))


def block_spin(log: EventLog, coarse: CoarseGeometry, t: float) -> np.ndarray:
    return coarse.block_spins(log.state_at(t))


def jump_count(log: EventLog, t1: float, t2: float, blocks=None, coarse: CoarseGeometry | None = None) -> int:
    """Number of flips with ``t1 <= time < t2``, optionally only at sites of ``blocks``."""
    if not 0 <= t1 <= t2 <= log.horizon:
        raise ValueError("window must lie within [0, horizon]")
    lo, hi = np.searchsorted(log.times, [t1, t2], side="left")
    sites = log.sites[lo:hi]
    if blocks is not None:
        if coarse is None:
            raise ValueError("restricting to blocks needs a CoarseGeometry")
        sites = sites[np.isin(coarse.block_of_site[sites], np.atleast_1d(blocks))]
    return int(sites.size)


# ---------------------------------------------------------------------------
# likelihood ratio

RateFunction = Callable[[np.ndarray, float], np.ndarray]


def glauber_rate_function(system: KacSystem) -> RateFunction:
    return lambda sigma, t: system.rates(sigma)


def constant_rate_function(c: float) -> RateFunction:
    return lambda sigma, t: np.full(sigma.shape, float(c))


def path_log_likelihood_ratio(log: EventLog, rates_p: RateFunction, rates_q: RateFunction,
                              breakpoints: Sequence[float] = ()) -> float:
    """``ln dP/dQ`` of the logged path.

    Equals ``int (lambda_Q - lambda_P) ds + sum_jumps ln(c_P / c_Q)``.  Rate
    functions take ``(sigma, t)`` and return per-site flip rates; they must
    be constant in t between events and ``breakpoints``.
    """
    sigma = log.initial.astype(float)
    cuts = np.unique(np.concatenate([[0.0, log.horizon], np.asarray(breakpoints, float)]))
    cuts = cuts[(cuts >= 0) & (cuts <= log.horizon)]
    marks = np.union1d(cuts, log.times)
    ev = dict(zip(log.times.tolist(), log.sites.tolist()))
    total = 0.0
    t_prev = 0.0
    for t in marks:
        if t > t_prev:
            total += (rates_q(sigma, t_prev).sum() - rates_p(sigma, t_prev).sum()) * (t - t_prev)
        x = ev.get(float(t))
        if x is not None:
            cp = rates_p(sigma, t)[x]
            cq = rates_q(sigma, t)[x]
            if cq <= 0:
                raise SingularityError(f"zero reference rate at jump t={t}, site={x}")
            if cp <= 0:
                return -np.inf
            total += np.log(cp / cq)
            sigma[x] = -sigma[x]
        t_prev = t
    return float(total)


# ---------------------------------------------------------------------------
# exact generators


@dataclass(frozen=True, eq=False)
class GeneratorMatrix:
    """Generator ``Q`` on an enumerated state list; rows sum to zero."""

    states: np.ndarray
    Q: sparse.csr_matrix

    def dense(self) -> np.ndarray:
        return self.Q.toarray()

    def index(self, state) -> int:
        hit = np.flatnonzero(np.all(np.isclose(self.states, state), axis=1))
        if hit.size != 1:
            raise KeyError(state)
        return int(hit[0])


_MAX_STATES = 1_000_000


def enumerate_spins(n: int) -> np.ndarray:
    """All ``2^n`` configurations; bit k of the row index set means site k is +1."""
    if 2**n > _MAX_STATES:
        raise CapacityError(f"2^{n} states exceed the enumeration limit")
    idx = np.arange(2**n)[:, None]
    return np.where((idx >> np.arange(n)) & 1, 1, -1).astype(np.int8)


def _spin_generator(states: np.ndarray, rates: np.ndarray) -> sparse.csr_matrix:
    N, n = states.shape
    src = np.repeat(np.arange(N), n)
    dst = (np.arange(N)[:, None] ^ (1 << np.arange(n))[None, :]).ravel()
    off = sparse.coo_matrix((rates.ravel(), (src, dst)), shape=(N, N)).tocsr()
    return (off - sparse.diags(np.asarray(off.sum(axis=1)).ravel())).tocsr()


def full_generator(system: KacSystem) -> GeneratorMatrix:
    states = enumerate_spins(system.geometry.n_sites)
    rates = np.array([system.rates(s) for s in states])
    return GeneratorMatrix(states, _spin_generator(states, rates))


def gibbs_measure(system: KacSystem, states: np.ndarray | None = None, h: float = 0.0) -> np.ndarray:
    """Finite-volume Gibbs weights ``exp(-beta H) / Z`` with Neumann self-interaction."""
    if states is None:
        states = enumerate_spins(system.geometry.n_sites)
    s = states.astype(float)
    W = system.W.toarray()
    energy = -0.5 * np.einsum("ki,ij,kj->k", s, W, s) - h * s.sum(axis=1)
    logw = -system.beta * energy
    w = np.exp(logw - logw.max())
    return w / w.sum()


def coarse_micro_generator(system: KacSystem, coarse: CoarseGeometry, variant: str = "sites") -> GeneratorMatrix:
    """Spin generator with coarse rates ``F_sigma(x)(hbar(i(x); m(sigma)))``.

    The block field includes the flipping spin itself, so the block
    magnetization of this process is exactly Markov.
    """
    jbar = coarse_potential_matrix(coarse, system.kernel, variant)
    states = enumerate_spins(system.geometry.n_sites)
    m = coarse.block_spins(states)
    hb = (m * coarse.sizes) @ jbar.T
    rates = glauber_rate(states, hb[:, coarse.block_of_site], system.beta)
    return GeneratorMatrix(states, _spin_generator(states, rates))


def lumped_generator(coarse: CoarseGeometry, kernel: KacKernel, beta: float, variant: str = "sites") -> GeneratorMatrix:
    """Generator of the block magnetization chain on ``prod_i {-1, -1+2/n_i, ..., 1}``.

    From ``m``, block i moves down by ``2/n_i`` at rate ``n_i cbar_+(i, m)``
    and up at rate ``n_i cbar_-(i, m)``.
    """
    sizes = coarse.sizes
    count = int(np.prod(sizes.astype(float) + 1))
    if count > _MAX_STATES:
        raise CapacityError(f"{count} magnetization states exceed the enumeration limit")
    jbar = coarse_potential_matrix(coarse, kernel, variant)
    levels = [np.arange(n + 1) for n in sizes]  # number of + spins per block
    plus = np.array(list(itertools.product(*levels)), dtype=np.int64).reshape(-1, len(sizes))
    states = 2.0 * plus / sizes - 1.0
    strides = np.cumprod(np.concatenate([[1], (sizes + 1)[::-1][:-1]]))[::-1]
    rows, cols, vals = [], [], []
    for k in range(states.shape[0]):
        cp, cm = coarse_rates_all(states[k], beta, jbar, sizes)
        for i in range(len(sizes)):
            if plus[k, i] > 0 and cp[i] > 0:
                rows.append(k); cols.append(k - strides[i]); vals.append(sizes[i] * cp[i])
            if plus[k, i] < sizes[i] and cm[i] > 0:
                rows.append(k); cols.append(k + strides[i]); vals.append(sizes[i] * cm[i])
    N = states.shape[0]
    off = sparse.coo_matrix((vals, (rows, cols)), shape=(N, N)).tocsr()
    return GeneratorMatrix(states, (off - sparse.diags(np.asarray(off.sum(axis=1)).ravel())).tocsr())


def stationary_distribution(gen: GeneratorMatrix) -> np.ndarray:
    """Solve ``pi Q = 0``, ``sum pi = 1`` by least squares on the augmented system."""
    Q = gen.dense()
    A = np.vstack([Q.T, np.ones(Q.shape[0])])
    b = np.zeros(A.shape[0])
    b[-1] = 1.0
    pi, *_ = np.linalg.lstsq(A, b, rcond=None)
    return pi


# ---------------------------------------------------------------------------
# tails


def poisson_tail_bound(k: float, mean: float) -> float:
    """Chernoff bound ``exp(-mean) (e mean / k)^k >= P(Poisson(mean) >= k)``."""
    if not (mean > 0 and k > mean):
        raise ValueError("the bound requires k > mean > 0")
    return float(np.exp(-mean + k * (1.0 + np.log(mean) - np.log(k))))

