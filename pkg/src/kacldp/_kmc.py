"""Numba kernels for exact kinetic Monte Carlo of Glauber dynamics.

Sampling uses numba's per-thread Mersenne Twister, reseeded at the start of
each replica, so results are a deterministic function of the seed.
"""
import os

import numba
import numpy as np
from numba import njit, prange

# the bundled TBB is too old for numba; prefer OpenMP when present
numba.config.THREADING_LAYER = os.environ.get("NUMBA_THREADING_LAYER", "omp")
if os.environ.get("KACLDP_THREADS"):
    numba.set_num_threads(int(os.environ["KACLDP_THREADS"]))

_REBUILD = 1 << 16


@njit(cache=True, inline="always")
def _rate(spin, h, beta):
    return 1.0 / (1.0 + np.exp(2.0 * beta * spin * h))


@njit(cache=True)
def _fields(sigma, indptr, indices, data):
    n = sigma.size
    h = np.zeros(n)
    for x in range(n):
        acc = 0.0
        for p in range(indptr[x], indptr[x + 1]):
            acc += data[p] * sigma[indices[p]]
        h[x] = acc
    return h


@njit(cache=True)
def _fenwick_build(vals):
    n = vals.size
    tree = np.zeros(n + 1)
    for i in range(1, n + 1):
        tree[i] += vals[i - 1]
        j = i + (i & -i)
        if j <= n:
            tree[j] += tree[i]
    return tree


@njit(cache=True, inline="always")
def _fenwick_add(tree, i, delta):
    n = tree.size - 1
    i += 1
    while i <= n:
        tree[i] += delta
        i += i & -i


@njit(cache=True)
def _fenwick_find(tree, u):
    """Smallest 0-based index whose prefix sum exceeds u."""
    n = tree.size - 1
    step = 1
    while step * 2 <= n:
        step *= 2
    pos = 0
    while step > 0:
        nxt = pos + step
        if nxt <= n and tree[nxt] <= u:
            pos = nxt
            u -= tree[nxt]
        step >>= 1
    return min(pos, n - 1)


@njit(cache=True)
def _flip(x, sigma, h, rates, tree, indptr, indices, data, beta):
    """Flip site x and refresh fields and rates of its neighbours; returns the change in total rate."""
    s = -sigma[x]
    sigma[x] = s
    dtot = 0.0
    r = _rate(s, h[x], beta)
    dtot += r - rates[x]
    _fenwick_add(tree, x, r - rates[x])
    rates[x] = r
    for p in range(indptr[x], indptr[x + 1]):
        y = indices[p]
        h[y] += 2.0 * s * data[p]
        r = _rate(sigma[y], h[y], beta)
        dtot += r - rates[y]
        _fenwick_add(tree, y, r - rates[y])
        rates[y] = r
    return dtot


@njit(cache=True)
def gillespie(sigma0, indptr, indices, data, beta, duration, seed):
    """One exact trajectory on [0, duration]; returns event times and sites."""
    np.random.seed(seed)
    sigma = sigma0.astype(np.float64)
    n = sigma.size
    h = _fields(sigma, indptr, indices, data)
    rates = np.empty(n)
    for x in range(n):
        rates[x] = _rate(sigma[x], h[x], beta)
    tree = _fenwick_build(rates)
    total = rates.sum()
    cap = 1024
    times = np.empty(cap)
    sites = np.empty(cap, dtype=np.int64)
    k = 0
    t = 0.0
    while True:
        t += -np.log(1.0 - np.random.random()) / total
        if t > duration:
            break
        x = _fenwick_find(tree, np.random.random() * total)
        if k == cap:
            cap *= 2
            nt = np.empty(cap)
            ns = np.empty(cap, dtype=np.int64)
            nt[:k] = times[:k]
            ns[:k] = sites[:k]
            times, sites = nt, ns
        times[k] = t
        sites[k] = x
        k += 1
        total += _flip(x, sigma, h, rates, tree, indptr, indices, data, beta)
        if k % _REBUILD == 0:
            tree = _fenwick_build(rates)
            total = rates.sum()
    return times[:k].copy(), sites[:k].copy()


@njit(cache=True)
def _block_sums(sigma, starts, sizes, out):
    for b in range(starts.size):
        acc = 0.0
        for x in range(starts[b], starts[b] + sizes[b]):
            acc += sigma[x]
        out[b] = acc / sizes[b]


@njit(cache=True)
def _one_trace(sigma0, indptr, indices, data, beta, sample_times, starts, sizes, seed, trace, jumps):
    np.random.seed(seed)
    sigma = sigma0.astype(np.float64)
    n = sigma.size
    h = _fields(sigma, indptr, indices, data)
    rates = np.empty(n)
    for x in range(n):
        rates[x] = _rate(sigma[x], h[x], beta)
    tree = _fenwick_build(rates)
    total = rates.sum()
    S = sample_times.size
    t = 0.0
    nxt = 0
    k = 0
    while nxt < S and sample_times[nxt] <= 0.0:
        _block_sums(sigma, starts, sizes, trace[nxt])
        nxt += 1
    while nxt < S:
        t += -np.log(1.0 - np.random.random()) / total
        while nxt < S and sample_times[nxt] < t:
            _block_sums(sigma, starts, sizes, trace[nxt])
            nxt += 1
        if nxt == S:
            break
        x = _fenwick_find(tree, np.random.random() * total)
        jumps[nxt - 1] += 1
        total += _flip(x, sigma, h, rates, tree, indptr, indices, data, beta)
        k += 1
        if k % _REBUILD == 0:
            tree = _fenwick_build(rates)
            total = rates.sum()


@njit(cache=True, parallel=True)
def block_traces(sigma0s, indptr, indices, data, beta, sample_times, starts, sizes, seeds):
    """Block magnetizations at ``sample_times`` for independent replicas.

    ``jumps[r, s]`` counts flips in ``(sample_times[s], sample_times[s+1]]``.
    """
    R = seeds.size
    S = sample_times.size
    B = starts.size
    traces = np.zeros((R, S, B))
    jumps = np.zeros((R, max(S - 1, 1)), dtype=np.int64)
    for r in prange(R):
        _one_trace(sigma0s[r], indptr, indices, data, beta, sample_times, starts, sizes,
                   seeds[r], traces[r], jumps[r])
    return traces, jumps


@njit(cache=True)
def _one_tilted(sigma0, indptr, indices, data, beta, window_times, qrates, block_of, starts,
                sizes, seed, trace):
    """Independent-spin proposal with block rates ``qrates[j, b, 0]`` (+ to -) and ``[j, b, 1]`` (- to +).

    Returns ``ln dP/dQ`` of the realized path, P being Glauber dynamics.
    """
    np.random.seed(seed)
    sigma = sigma0.astype(np.float64)
    n = sigma.size
    B = starts.size
    h = _fields(sigma, indptr, indices, data)
    lamP = 0.0
    for x in range(n):
        lamP += _rate(sigma[x], h[x], beta)
    counts = np.zeros((B, 2))
    for x in range(n):
        counts[block_of[x], 0 if sigma[x] > 0 else 1] += 1.0
    J = window_times.size - 1
    _block_sums(sigma, starts, sizes, trace[0])
    llr = 0.0
    t = window_times[0]
    k = 0
    for j in range(J):
        tend = window_times[j + 1]
        while True:
            lamQ = 0.0
            for b in range(B):
                lamQ += counts[b, 0] * qrates[j, b, 0] + counts[b, 1] * qrates[j, b, 1]
            if lamQ > 0.0:
                dt = -np.log(1.0 - np.random.random()) / lamQ
            else:
                dt = np.inf
            if t + dt > tend:
                llr += (lamQ - lamP) * (tend - t)
                t = tend
                break
            llr += (lamQ - lamP) * dt
            t += dt
            u = np.random.random() * lamQ
            bb = B - 1
            ss = 1
            found = False
            for b in range(B):
                for s in range(2):
                    w = counts[b, s] * qrates[j, b, s]
                    if u < w:
                        bb = b
                        ss = s
                        found = True
                        break
                    u -= w
                if found:
                    break
            want = 1.0 if ss == 0 else -1.0
            while True:
                x = starts[bb] + int(np.random.random() * sizes[bb])
                if sigma[x] == want:
                    break
            cP = _rate(sigma[x], h[x], beta)
            llr += np.log(cP / qrates[j, bb, ss])
            # apply the flip
            snew = -sigma[x]
            sigma[x] = snew
            counts[bb, ss] -= 1.0
            counts[bb, 1 - ss] += 1.0
            lamP += _rate(snew, h[x], beta) - cP
            for p in range(indptr[x], indptr[x + 1]):
                y = indices[p]
                old = _rate(sigma[y], h[y], beta)
                h[y] += 2.0 * snew * data[p]
                lamP += _rate(sigma[y], h[y], beta) - old
            k += 1
            if k % _REBUILD == 0:
                h = _fields(sigma, indptr, indices, data)
                lamP = 0.0
                for z in range(n):
                    lamP += _rate(sigma[z], h[z], beta)
        _block_sums(sigma, starts, sizes, trace[j + 1])
    return llr


@njit(cache=True, parallel=True)
def tilted_traces(sigma0s, indptr, indices, data, beta, window_times, qrates, block_of, starts,
                  sizes, seeds):
    R = seeds.size
    traces = np.zeros((R, window_times.size, starts.size))
    llr = np.zeros(R)
    for r in prange(R):
        llr[r] = _one_tilted(sigma0s[r], indptr, indices, data, beta, window_times, qrates,
                             block_of, starts, sizes, seeds[r], traces[r])
    return traces, llr
