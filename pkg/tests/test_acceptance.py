"""Acceptance suite: one test per criterion, each recording a PASS/FAIL line with its runtime.

The lines are printed in the pytest terminal summary (see conftest.py) and
when this file is run as a script.
"""
import time

import numpy as np
import pytest
from scipy import special, stats
from scipy.linalg import expm

from kacldp.cost import (
    action, cost_density, crossover_v2t, large_b_limit, nucleation_cost,
    optimal_nucleation, small_b_limit, translating_instanton_path,
)
from kacldp.field import (
    Grid, convolve, free_energy, instanton_solve, mean_field_fixed_point, mobility, weighted_norm_sq,
)
from kacldp.glauber import (
    coarse_micro_generator, full_generator, gibbs_measure, lumped_generator, stationary_distribution,
)
from kacldp.harness import ExperimentConfig, run_tube_experiment
from kacldp.kernel import CoarseGeometry, KacSystem, LatticeGeometry, default_kernel
from kacldp.tubelet import (
    DEFAULT_SCHEDULE, MUTATIONS, DiscretizedPath, PoissonRatePair, deterministic_rates, in_safe_set,
    move_away, optimal_fractions, rate_function, relative_entropy, tube_event_prob_exact,
    validate_schedule,
)

J = default_kernel()
BETA = 2.0
RESULTS: dict[int, str] = {}


class _Criterion:
    def __init__(self, number, title, limit):
        self.number, self.title, self.limit = number, title, limit
        self.ok, self.detail = True, ""

    def __enter__(self):
        self.t0 = time.perf_counter()
        return self

    def check(self, cond, detail):
        self.ok = self.ok and bool(cond)
        self.detail = f"{self.detail}; {detail}" if self.detail else detail

    def __exit__(self, exc_type, exc, tb):
        dt = time.perf_counter() - self.t0
        if exc_type is not None:
            self.ok = False
            self.detail = f"{self.detail}; raised {exc_type.__name__}: {exc}"
        timed = dt < self.limit
        status = "PASS" if self.ok and timed else "FAIL"
        RESULTS[self.number] = (f"criterion {self.number:2d} {status}  {self.title}  "
                                f"[{dt:.2f}s / limit {self.limit:g}s]  {self.detail}")
        print(RESULTS[self.number])
        if exc_type is None:
            assert self.ok, RESULTS[self.number]
            assert timed, RESULTS[self.number]
        return False


def test_criterion_01_gibbs_stationarity():
    with _Criterion(1, "Gibbs stationarity of the exact generator", 10) as c:
        worst = 0.0
        for n in (6, 7, 8):
            s = KacSystem(LatticeGeometry.line(0.25, n), J, 1.7)
            gen = full_generator(s)
            pi = gibbs_measure(s, gen.states)
            worst = max(worst, float(np.max(np.abs(stationary_distribution(gen) - pi))),
                        float(np.max(np.abs(pi @ gen.dense()))))
        c.check(worst <= 1e-10, f"max residual {worst:.2e} (<= 1e-10) on 6, 7, 8 sites")


def test_criterion_02_generator_lumping():
    with _Criterion(2, "generator lumping, 6 sites in 2 blocks", 30) as c:
        s = KacSystem(LatticeGeometry.line(0.3, 6), J, 1.5)
        cg = CoarseGeometry(s.geometry, 0.9)
        micro = coarse_micro_generator(s, cg)
        lump = lumped_generator(cg, J, s.beta)
        proj = np.array([lump.index(row) for row in cg.block_spins(micro.states)])
        g = np.random.default_rng(1).normal(size=lump.states.shape[0])
        errs = []
        for t in (0.1, 1.0):
            lhs = expm(t * micro.dense()) @ g[proj]
            rhs = (expm(t * lump.dense()) @ g)[proj]
            errs.append(float(np.max(np.abs(lhs - rhs))))
        c.check(cg.n_blocks == 2 and max(errs) <= 1e-8,
                f"expm mismatch {errs[0]:.1e} at t=0.1, {errs[1]:.1e} at t=1 (<= 1e-8)")


def test_criterion_03_instanton():
    with _Criterion(3, "instanton profile", 60) as c:
        inst = instanton_solve(BETA, Grid.symmetric(12.0, 0.01), J)
        x, m = inst.x, inst.values
        mb = mean_field_fixed_point(BETA)
        res = float(np.max(np.abs(m - np.tanh(BETA * convolve(inst, J)))))
        anti = float(np.max(np.abs(m + m[::-1])))
        mono = float(np.min(np.diff(m)))
        ends = max(abs(m[-1] - mb), abs(m[0] + mb))
        far = (x > 1.5) & (mb - m > 1e-12)
        r2 = stats.linregress(x[far], np.log(mb - m[far])).rvalue ** 2
        c.check(res <= 1e-8, f"residual {res:.1e}")
        c.check(anti <= 1e-8, f"antisymmetry {anti:.1e}")
        c.check(mono >= -1e-12, f"min increment {mono:.1e}")
        c.check(ends <= 1e-6 and abs(mb - 0.9575) < 1e-4, f"m_beta {mb:.6f}, endpoint gap {ends:.1e}")
        c.check(r2 > 0.99, f"tail fit R^2 {r2:.5f}")


def test_criterion_04_translating_cost():
    with _Criterion(4, "translating instanton cost", 120) as c:
        inst = instanton_solve(BETA, Grid.symmetric(14.0, 0.005), J)
        eps, R, T = 0.05, 0.5, 1.0
        V = R / T
        target = 0.25 * weighted_norm_sq(inst) * V * V * T
        vals = []
        for dx in (0.05, 0.025):
            g = Grid.symmetric(R / eps / 2 + 8, dx)
            p = translating_instanton_path(inst, g, eps, V, T, nt=21, x0=-R / eps / 2)
            vals.append(action(p, J, BETA).total)
        rel = [abs(v / target - 1) for v in vals]
        c.check(max(rel) < 0.01, f"relative errors {rel[0]:.2e}, {rel[1]:.2e} at dx 0.05, 0.025 (< 1%)")


def test_criterion_05_cost_density():
    with _Criterion(5, "cost density identities", 60) as c:
        rng = np.random.default_rng(0)
        N = 10_000
        phi = rng.uniform(-0.99, 0.99, N)
        psi = rng.normal(0, 1, N) * 10 ** rng.uniform(-3, 1, N)
        conv = rng.uniform(-1.5, 1.5, N)
        H = cost_density(phi, psi, conv, BETA)
        # H = h(y | c+) + h(y + psi/2 | c-), with y the optimal + fraction
        cp = 0.5 * (1 + phi) * special.expit(-2 * BETA * conv)
        cm = 0.5 * (1 - phi) * special.expit(2 * BETA * conv)
        y, z = optimal_fractions(psi, cp, cm)
        rhs = relative_entropy(y, cp) + relative_entropy(y + psi / 2, cm)
        err = float(np.max(np.abs(H - rhs) / np.maximum(1, np.abs(H))))
        c.check(err <= 1e-10, f"identity error {err:.1e} on 1e4 cells")
        c.check(np.all(H >= -1e-15), f"min H {H.min():.1e}")
        flow = np.tanh(BETA * conv) - phi
        z0 = float(np.max(np.abs(cost_density(phi, flow, conv, BETA))))
        c.check(z0 <= 1e-12, f"H on drift manifold {z0:.1e}")
        us, ws = rng.uniform(-0.9, 0.9, 20), rng.uniform(-0.9, 0.9, 20)
        lim = max(max(abs(small_b_limit(u, w) - 1 / (4 * (1 + u * w))), abs(large_b_limit(u, w, 1) - 0.5),
                      abs(large_b_limit(u, w, -1) - 0.5)) for u, w in zip(us, ws))
        c.check(lim <= 1e-3, f"limit errors {lim:.1e} (<= 1e-3)")


def test_criterion_06_poisson_asymptotics():
    with _Criterion(6, "Poisson asymptotics", 60) as c:
        alpha, delta, d, dt = 0.1, 0.03, 0.1, 1.0
        f = rate_function(d, 0.25, 0.25)
        ns = (50, 200, 800)
        gaps = []
        for n in ns:
            r = PoissonRatePair(0.25, 0.25, n, dt)
            gaps.append(abs(tube_event_prob_exact(r, d, delta, log=True) / n + dt * f))
        base = (delta / dt) ** ((1 - alpha) / 2) * dt
        K = max(0.0, max((g - base) / (np.log(n) / n) for g, n in zip(gaps, ns)))
        c.check(gaps[0] > gaps[1] > gaps[2], "gaps " + ", ".join(f"{g:.4g}" for g in gaps) + " decreasing")
        c.check(all(g <= base + K * np.log(n) / n for g, n in zip(gaps, ns)),
                f"band {base:.4f} + K ln n / n, fitted K = {K:.3g}")
        p = tube_event_prob_exact(PoissonRatePair(1.0, 1.0, 1.0, 1.0), 0.0, 0.5)
        ref = np.exp(-2) * special.i0(2)
        c.check(abs(p - ref) <= 1e-13 and abs(p - 0.30851) < 1e-5, f"symmetric unit-mean sum {p:.10f}")


def test_criterion_07_move_away():
    with _Criterion(7, "move-away surgery", 60) as c:
        worst, count = -np.inf, 0
        for n, D, dt in ((20, 0.1, 0.5), (40, 0.05, 0.25), (10, 0.2, 1.0)):
            co = CoarseGeometry(LatticeGeometry.line(0.05, n), n * 0.05)
            cases = {1: [1 - 4 * D, 1.0], 2: [1.0, 1 - 4 * D], 3: [1.0, 1.0],
                     -1: [-1 + 4 * D, -1.0], -2: [-1.0, -1 + 4 * D], -3: [-1.0, -1.0]}
            for label, vals in cases.items():
                a = DiscretizedPath(np.array(vals)[:, None], dt, D, co)
                mv = move_away(a, D, BETA, J, alpha=0.1)
                c.ok &= bool(mv.cases[0, 0] == abs(label)) and in_safe_set(mv.path, D)
                lp = [tube_event_prob_exact(deterministic_rates(p, 0, 1, J, BETA), p.slopes[0, 0], D / 2, log=True)
                      for p in (a, mv.path)]
                worst = max(worst, lp[0] - lp[1] - mv.exponents[0, 0])
                count += 1
        c.check(worst <= 0, f"{count} profiles over Cases 1-3, max(log ratio - M) = {worst:.3g} (<= 0), "
                            "all moved paths in the safe set")


def test_criterion_08_nucleation():
    with _Criterion(8, "nucleation quantization", 60) as c:
        below = optimal_nucleation(np.sqrt(3 - 1e-9), 1.0, 1.0, 1.0)
        above = optimal_nucleation(np.sqrt(3 + 1e-9), 1.0, 1.0, 1.0)
        tie = optimal_nucleation(np.sqrt(3.0), 1.0, 1.0, 1.0)
        c.check(below == (0,) and above == (1,) and tie == (0, 1), f"argmin {below} -> {tie} -> {above} at V^2T = 3")
        w = [nucleation_cost(n, 12.0, 12.0, 1.0, 1.0) for n in range(3)]
        c.check(w == [12.0, 6.0, 6.4] or np.allclose(w, [12, 6, 6.4], rtol=0, atol=1e-15),
                f"w_n = {', '.join(f'{v:g}' for v in w)}")
        inst = instanton_solve(BETA, Grid.symmetric(12.0, 0.01), J)
        F = free_energy(inst, inst.grid, J, BETA).total
        mu = mobility(inst)
        v2t = crossover_v2t(0, F, mu)
        gap = abs(nucleation_cost(0, v2t, v2t, F, mu) - nucleation_cost(1, v2t, v2t, F, mu))
        c.check(abs(v2t - 3 * mu * F) <= 1e-9 and gap <= 1e-9,
                f"computed crossover {v2t:.10f} = 3 mu F, |w0 - w1| = {gap:.1e}")


def _tube_reps(gamma, seeds, replicas):
    rows = []
    for seed in seeds:
        cfg = ExperimentConfig(schedule=DEFAULT_SCHEDULE.with_(gamma=gamma), replicas=replicas, seed=seed,
                               windows=3, shifts=[0, 2, 4])
        rows.append(run_tube_experiment(cfg))
    return rows


def test_criterion_09_desk_scale_tubes():
    with _Criterion(9, "desk-scale tube probabilities against the discrete action", 1800) as c:
        for gamma in (0.05, 0.02):
            recs = _tube_reps(gamma, range(20), 4000)
            actions = [r["action"] for r in recs[0].estimates]
            ordered = [all(np.diff([r["cost"] for r in rec.estimates]) > 0) for rec in recs]
            banded = [rec.checks["in_band"] for rec in recs]
            both = [o and b for o, b in zip(ordered, banded)]
            agree = []
            for rec in recs:
                for r in rec.estimates:
                    if r["hits"] >= 10:
                        agree.append(abs(r["p_tilted"] - r["p_direct"]) <= 3 * np.hypot(r["se_tilted"], r["se_direct"]))
            slack = recs[0].estimates[-1]["slack"]
            c.check(np.all(np.diff(actions) > 0) and np.mean(both) >= 0.95 and np.mean(agree) >= 0.95,
                    f"gamma {gamma}: actions {', '.join(f'{a:.3f}' for a in actions)}, "
                    f"ordered and in band {sum(both)}/{len(both)} (ordered {sum(ordered)}, slack {slack:.3g}), "
                    f"tilted vs direct within 3 SE {sum(agree)}/{len(agree)}")


def test_criterion_10_schedule_validator():
    with _Criterion(10, "schedule validator", 1) as c:
        c.check(validate_schedule(DEFAULT_SCHEDULE) == [], "default passes")
        got = {name: [v.name for v in validate_schedule(DEFAULT_SCHEDULE.with_(**kw))]
               for name, kw in MUTATIONS.items()}
        wrong = {k: v for k, v in got.items() if v != [k]}
        c.check(len(got) == 7 and not wrong,
                f"{len(got)} mutations each fail only their own constraint ({', '.join(got)})"
                + (f"; mismatches {wrong}" if wrong else ""))


if __name__ == "__main__":
    import sys

    sys.exit(pytest.main([__file__, "-q"]))
