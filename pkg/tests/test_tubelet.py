import numpy as np
import pytest
from scipy import optimize, special, stats

from kacldp.cost import action, cost_density, translating_instanton_path
from kacldp.field import Grid, instanton_solve
from kacldp.glauber import simulate, simulate_batch
from kacldp.kernel import CoarseGeometry, KacSystem, LatticeGeometry, default_kernel, rate_bounds
from kacldp.tubelet import (
    DEFAULT_SCHEDULE, MUTATIONS, DiscretizedPath, PoissonRatePair, QuantizationError, ScaleSchedule,
    bad_interval_bounds, block_average, bridge_constant, c_star, cardinality_correction,
    deterministic_rates, deterministic_rates_all, density_equivalence_check, density_residual,
    discrete_action, evaluate_interpolant, in_safe_set, interpolant, mollify, move_away,
    optimal_fractions, rate_function, rate_function_dt, rate_mismatch, relative_entropy,
    tube_event_prob_exact, tube_membership, tube_membership_function, tube_prob_asymptotic,
    validate_schedule,
)

J = default_kernel()
BETA = 2.0


def _geometry(gamma=0.05, L=2.0, block=None, s=DEFAULT_SCHEDULE):
    lat = LatticeGeometry.from_scaling(gamma, s.a, L)
    return CoarseGeometry(lat, s.with_(gamma=gamma).block_length if block is None else block)


def _one_block(n, gamma=0.05):
    lat = LatticeGeometry.line(gamma, n)
    return CoarseGeometry(lat, n * gamma)


# ---------------------------------------------------------------------------
# schedule


def test_default_schedule_valid():
    assert validate_schedule(DEFAULT_SCHEDULE) == []


@pytest.mark.parametrize("name", sorted(MUTATIONS))
def test_single_mutations_fail_by_name(name):
    v = validate_schedule(DEFAULT_SCHEDULE.with_(**MUTATIONS[name]))
    assert [x.name for x in v] == [name]


def test_schedule_examples():
    v = {x.name: x.value for x in validate_schedule(DEFAULT_SCHEDULE.with_(a=0.05, b=0.1, lam1=0.2))}
    assert v["req0"] == pytest.approx(0.25)
    assert [x.name for x in validate_schedule(DEFAULT_SCHEDULE.with_(lam2=0.15))] == ["mulambda"]
    with pytest.raises(ValueError):
        ScaleSchedule(gamma=1.5)


def test_schedule_derived_scales():
    s = DEFAULT_SCHEDULE
    lg = np.log(20.0)
    assert s.eps == pytest.approx(lg ** -0.01)
    assert s.block_length == pytest.approx(lg ** -0.2)
    assert s.dt == pytest.approx(np.sqrt(0.05))
    assert s.Delta == pytest.approx(np.sqrt(0.05) * lg ** -0.2)
    assert s.delta == pytest.approx(s.Delta / 2)
    r = s.delta_prime / s.Delta
    assert r == pytest.approx(round(r)) and r >= 1
    assert s.jump_cap == pytest.approx(20 * s.dt / (s.eps * lg ** -0.15))
    assert s.bad_budget > 1
    # frozen values at gamma = 0.05
    assert s.Delta == pytest.approx(0.1795496, abs=1e-7)
    assert cardinality_correction(s) == pytest.approx(0.6937117, abs=1e-7)


# ---------------------------------------------------------------------------
# paths and tubes


def test_path_quantization_and_io(tmp_path):
    with pytest.raises(QuantizationError):
        DiscretizedPath([[0.03]], 1.0, 0.1)
    with pytest.raises(ValueError):
        DiscretizedPath([[1.5]], 1.0, 0.1)
    a = DiscretizedPath.quantize(np.array([[0.03, -0.96, 0.99], [0.5, 0.26, -2.0]]), 0.5, 0.1)
    np.testing.assert_allclose(a.values, [[0.0, -1.0, 1.0], [0.5, 0.3, -1.0]], atol=1e-12)
    a.to_csv(tmp_path / "a.csv")
    a.to_json(tmp_path / "a.json")
    for b in (DiscretizedPath.from_csv(tmp_path / "a.csv"), DiscretizedPath.from_json(tmp_path / "a.json")):
        np.testing.assert_array_equal(b.values, a.values)
        assert (b.dt, b.Delta) == (a.dt, a.Delta)


def test_self_membership_from_log():
    s = DEFAULT_SCHEDULE
    co = _geometry()
    sys = KacSystem(co.lattice, J, BETA)
    sigma = np.where(co.lattice.positions > 0, 1, -1).astype(np.int8)
    log = simulate(sys, sigma, 4 * s.dt, seed=3)
    times = s.dt * np.arange(5)
    snaps = co.block_spins(log.states_at(times))
    a = DiscretizedPath.quantize(snaps, s.dt, s.Delta, co)
    assert tube_membership(log, a, s.Delta / 2 + 1e-12)
    assert tube_membership(snaps, a, s.Delta)
    # one cell moved by 2 delta leaves the tube
    d = s.Delta / 2 + 1e-12
    far = a.values.copy()
    far[2, 1] += 2 * s.Delta if far[2, 1] < 0 else -2 * s.Delta
    assert not tube_membership(snaps, a.with_values(far), d)
    with pytest.raises(ValueError):
        tube_membership(snaps[:, :2], a, d)


def test_all_plus_outside_tube_below_one():
    co = _one_block(10)
    a = DiscretizedPath(np.full((3, 1), 1 - 2 * 0.05), 1.0, 0.1, co)
    assert not tube_membership(np.ones((3, 1)), a, 0.05)
    # replicas axis
    stack = np.stack([np.ones((3, 1)), np.full((3, 1), 0.9)])
    assert list(tube_membership(stack, a, 0.05)) == [False, True]


def test_function_target_membership():
    co = _geometry()
    m = lambda x, t: 0.5 * np.tanh(x)
    avg = block_average(co, m)
    # exact block averages of tanh
    e = co.edges
    exact = 0.5 * (np.log(np.cosh(e[1:])) - np.log(np.cosh(e[:-1]))) / co.widths
    np.testing.assert_allclose(avg, exact, atol=1e-10)
    times = [0.0, 0.5]
    blocks = np.stack([exact, exact])
    assert tube_membership_function(blocks, m, times, co, 1e-6)
    assert not tube_membership_function(blocks + 2e-6, m, times, co, 1e-6)


# ---------------------------------------------------------------------------
# interpolant


def test_interpolant_examples():
    co = _one_block(10)
    dt, D = 0.5, 0.1
    const = DiscretizedPath(np.full((3, 1), 0.3), dt, D, co)
    prof, psi = interpolant(const)
    np.testing.assert_allclose(prof.values, 0.3, atol=1e-15)
    assert np.all(psi == 0)
    a = DiscretizedPath(np.array([[0.0], [D]]), dt, D, co)
    phi, ps = evaluate_interpolant(a, 0.0, dt / 2)
    assert phi == pytest.approx(D / 2, abs=1e-15) and ps == pytest.approx(D / dt)


def test_interpolant_time_continuity():
    s = DEFAULT_SCHEDULE
    co = _geometry()
    rng = np.random.default_rng(4)
    a = DiscretizedPath.quantize(rng.uniform(-0.9, 0.9, (6, co.n_blocks)), s.dt, s.Delta, co)
    x = co.centers
    for j in range(1, a.n_windows + 1):
        left, _ = evaluate_interpolant(a, x, j * s.dt, side="left")
        assert np.max(np.abs(left - a.values[j])) == 0.0
        if j < a.n_windows:
            right, _ = evaluate_interpolant(a, x, j * s.dt)
            assert np.max(np.abs(right - a.values[j])) == 0.0


# ---------------------------------------------------------------------------
# rates and rate function


def test_deterministic_rates_examples():
    co = _geometry()
    a = DiscretizedPath(np.zeros((2, co.n_blocks)), 0.2, 0.1, co)
    r = deterministic_rates(a, 2, 1, J, BETA)
    assert r.c_plus == pytest.approx(0.25, abs=1e-15) and r.c_minus == pytest.approx(0.25, abs=1e-15)
    sat = DiscretizedPath(np.ones((2, co.n_blocks)), 0.2, 0.1, co)
    cp, cm = deterministic_rates_all(sat, J, BETA)
    assert np.all(cm == 0.0)
    c_m, c_M = rate_bounds(J, BETA)
    assert np.all(cp <= c_M)


def test_rate_mismatch_constant():
    # |cbar(i, m) - cbar(i, a)| <= c (delta + C*) with c measured; Lipschitz gives (1 + beta)/2
    s = DEFAULT_SCHEDULE
    co = _geometry()
    rng = np.random.default_rng(5)
    bound = s.delta + c_star(s, J)
    worst = 0.0
    for _ in range(300):
        ap = np.clip(np.round(rng.uniform(-1, 1, co.n_blocks) / s.Delta) * s.Delta, -1, 1)
        m = np.clip(ap + rng.uniform(-s.delta, s.delta, co.n_blocks), -1, 1)
        worst = max(worst, rate_mismatch(co, J, BETA, m, ap) / bound)
    assert worst <= (1 + BETA) / 2


def test_relative_entropy():
    assert relative_entropy(0.7, 0.7) == 0.0
    assert relative_entropy(1.0, 2.0) == pytest.approx(1 - np.log(2), abs=1e-15)
    assert relative_entropy(1.0, 2.0) == pytest.approx(0.30685, abs=1e-5)
    assert relative_entropy(0.0, 0.4) == 0.4
    with pytest.raises(ValueError):
        relative_entropy(1.0, 0.0)
    with pytest.raises(ValueError):
        relative_entropy(-0.1, 1.0)


def test_optimal_fractions_constraints():
    assert optimal_fractions(0.0, 0.3, 0.12) == pytest.approx((np.sqrt(0.036),) * 2, abs=1e-15)
    rng = np.random.default_rng(6)
    N = 10_000
    d = rng.normal(0, 1, N) * 10 ** rng.uniform(-4, 2, N)
    cp, cm = rng.uniform(0, 1, N), rng.uniform(0, 1, N)
    xp, xm = optimal_fractions(d, cp, cm)
    assert np.all(xp >= 0) and np.all(xm >= 0)
    assert np.max(np.abs(xp * xm - cp * cm)) <= 1e-12
    assert np.max(np.abs(2 * (xm - xp) - d) / np.maximum(1, np.abs(d))) <= 1e-12


def test_rate_function_examples():
    assert rate_function(0.0, 0.3, 0.1) == pytest.approx((np.sqrt(0.3) - np.sqrt(0.1)) ** 2, abs=1e-15)
    assert rate_function(0.0, 0.3, 0.1) == pytest.approx(0.053590, abs=1e-6)
    for cp, cm in [(0.3, 0.1), (0.02, 0.4), (0.25, 0.25)]:
        assert rate_function(2 * (cm - cp), cp, cm) == pytest.approx(0.0, abs=1e-15)


def test_rate_function_scaling_identity():
    rng = np.random.default_rng(7)
    d = rng.normal(0, 2, 1000)
    cp, cm = rng.uniform(0.01, 1, 1000), rng.uniform(0.01, 1, 1000)
    for dt in (0.01, 0.3, 2.0):
        np.testing.assert_allclose(rate_function_dt(d, cp, cm, dt), dt * rate_function(d, cp, cm),
                                   rtol=1e-12, atol=1e-14)


def test_rate_function_vanishes_only_on_drift():
    rng = np.random.default_rng(8)
    for cp, cm in rng.uniform(0.05, 0.5, (20, 2)):
        res = optimize.minimize_scalar(lambda d: rate_function(d, cp, cm), bracket=(-3, 3), tol=1e-12)
        assert res.x == pytest.approx(2 * (cm - cp), abs=1e-6)
        assert res.fun <= 1e-12
        for off in (1e-3, 0.1, 1.0):
            assert rate_function(2 * (cm - cp) + off, cp, cm) > 0


# ---------------------------------------------------------------------------
# tubelet probabilities


def test_exact_sum_examples():
    unit = PoissonRatePair(1.0, 1.0, 1.0, 1.0)
    p = tube_event_prob_exact(unit, 0.0, 0.5)
    assert p == pytest.approx(np.exp(-2) * special.i0(2), rel=1e-13)
    assert p == pytest.approx(stats.skellam.pmf(0, 1, 1), rel=1e-12)
    assert p == pytest.approx(0.30851, abs=1e-5)
    assert tube_event_prob_exact(unit, 0.0, 0.5, N=0) == pytest.approx(np.exp(-2), rel=1e-14)
    assert tube_event_prob_exact(unit, 2.0, 0.5, N=0) == 0.0


def test_exact_sum_against_skellam_band():
    r = PoissonRatePair(0.3, 0.2, 40.0, 0.5)
    # |2k/40 - d dt| < delta  <=>  k in {1, 2, 3} for d dt = 0.1, delta = 0.06
    p = tube_event_prob_exact(r, 0.2, 0.06)
    ref = sum(stats.skellam.pmf(k, r.means[1], r.means[0]) for k in (1, 2, 3))
    assert p == pytest.approx(ref, rel=1e-10)
    assert tube_event_prob_exact(r, 0.2, 0.06, log=True) == pytest.approx(np.log(ref), rel=1e-10)
    # the jump cap and the spin budget only remove mass
    assert tube_event_prob_exact(r, 0.2, 0.06, N=10) < p
    assert tube_event_prob_exact(r, 0.2, 0.06, a_prev=0.9) < p


def test_large_n_underflow_safe():
    r = PoissonRatePair(0.25, 0.25, 5000.0, 1.0)
    lp = tube_event_prob_exact(r, 1.0, 0.01, log=True)
    assert np.isfinite(lp) and lp < -700


def test_asymptotics_converge():
    # delta = 0.01 leaves the n = 50 event empty (no k with |2k/50 - 0.1| < 0.01); 0.03 does not
    assert tube_event_prob_exact(PoissonRatePair(0.25, 0.25, 50, 1.0), 0.1, 0.01) == 0.0
    alpha, delta, f = 0.1, 0.03, rate_function(0.1, 0.25, 0.25)
    gaps = []
    for n in (50, 200, 800):
        r = PoissonRatePair(0.25, 0.25, n, 1.0)
        lp = tube_event_prob_exact(r, 0.1, delta, log=True)
        est = tube_prob_asymptotic(r, 0.1, delta, alpha)
        assert est.log_prob == pytest.approx(-n * f)
        assert abs(lp - est.log_prob) <= est.band
        gaps.append(abs(lp / n + f))
    assert gaps[0] > gaps[1] > gaps[2]
    np.testing.assert_allclose(gaps, [0.0367301, 0.0080667, 0.0007907], atol=1e-7)


def test_asymptotic_flags_and_band():
    r = PoissonRatePair(0.25, 0.25, 4.0, 1.0)
    with pytest.warns(RuntimeWarning):
        assert not tube_prob_asymptotic(r, 0.0, 0.1, 0.1).in_regime
    big = PoissonRatePair(0.25, 0.25, 400.0, 1.0)
    e = tube_prob_asymptotic(big, 0.5, 0.1, 0.1)
    assert e.in_regime and e.log_prob < 0
    assert tube_prob_asymptotic(big, 0.0, 0.1, 0.1).log_prob == 0.0
    b1, b2 = (tube_prob_asymptotic(big, 0.0, d, 0.1).band for d in (0.1, 0.01))
    assert b2 < b1


# ---------------------------------------------------------------------------
# move away


def test_move_away_identity_on_safe_paths():
    co = _one_block(20)
    a = DiscretizedPath(np.array([[0.0], [0.5], [-0.7]]), 0.5, 0.1, co)
    mv = move_away(a, 0.2, BETA, J)
    np.testing.assert_array_equal(mv.path.values, a.values)
    assert not mv.cases.any() and not mv.exponents.any()


def test_move_away_case3_example():
    D = 0.1
    dp = 2 * D
    co = _one_block(20)
    a = DiscretizedPath(np.full((2, 1), 1 - dp / 2), 0.5, D, co)
    mv = move_away(a, dp, BETA, J)
    assert mv.cases[0, 0] == 3
    np.testing.assert_allclose(mv.path.values, 1 - dp / 2 - dp, atol=1e-12)
    assert 1 - mv.path.values[0, 0] == pytest.approx(1.5 * dp)
    with pytest.raises(QuantizationError):
        move_away(a, 0.15, BETA, J)


def test_move_away_lands_in_safe_set():
    D = 0.1
    co = _one_block(20)
    rng = np.random.default_rng(9)
    for _ in range(50):
        a = DiscretizedPath.quantize(rng.uniform(-1, 1, (6, 1)), 0.5, D, co)
        for dp in (D, 2 * D, 3 * D):
            assert in_safe_set(move_away(a, dp, BETA, J).path, dp)


@pytest.mark.parametrize("n,D,dt", [(20, 0.1, 0.5), (40, 0.05, 0.25), (10, 0.2, 1.0)])
def test_move_away_ratio_bounds(n, D, dt):
    co = _one_block(n)
    top, bot = 1.0, -1.0
    cases = {
        1: [top - 4 * D, top], 2: [top, top - 4 * D], 3: [top, top],
        -1: [bot + 4 * D, bot], -2: [bot, bot + 4 * D], -3: [bot, bot],
    }
    for label, vals in cases.items():
        a = DiscretizedPath(np.array(vals)[:, None], dt, D, co)
        mv = move_away(a, D, BETA, J, alpha=0.1)
        assert mv.cases[0, 0] == abs(label)
        for a_prev in (False, True):
            lp = []
            for p in (a, mv.path):
                r = deterministic_rates(p, 0, 1, J, BETA)
                lp.append(tube_event_prob_exact(r, p.slopes[0, 0], D / 2,
                                                a_prev=p.values[0, 0] if a_prev else None, log=True))
            assert lp[0] - lp[1] <= mv.exponents[0, 0]


# ---------------------------------------------------------------------------
# bad intervals and the discrete action


def test_bad_interval_bounds():
    co = _geometry()
    s = DEFAULT_SCHEDULE
    rng = np.random.default_rng(10)
    for _ in range(50):
        a = DiscretizedPath.quantize(rng.uniform(-0.95, 0.95, (3, co.n_blocks)), s.dt, s.Delta, co)
        cp, cm = deterministic_rates_all(a, J, BETA)
        f = rate_function(a.slopes, cp, cm)
        for i in range(co.n_blocks):
            for j in (1, 2):
                b = bad_interval_bounds(a, i, j, J, BETA)
                assert b.g1 >= 0 and b.g2 >= 0
                assert 0 <= f[j - 1, i] <= b.upper * (1 + 1e-12)
                assert b.upper >= max(b.g1, b.g2)


def test_bad_interval_degenerate_collapse():
    # with c_m = c_M the two bounds coincide; at beta = 0 both rates are 1/2
    co = _one_block(10)
    a = DiscretizedPath(np.full((2, 1), 0.2), 0.5, 0.1, co)
    b = bad_interval_bounds(a, 0, 1, J, 0.0)
    assert b.g1 == b.g2


def test_discrete_action_examples():
    co = _one_block(16)
    a = DiscretizedPath(np.array([[0.0], [0.2]]), 0.5, 0.1, co)
    r = deterministic_rates(a, 0, 1, J, BETA)
    f = rate_function(0.4, r.c_plus, r.c_minus)
    assert discrete_action(a, J, BETA) == pytest.approx(co.widths[0] * 0.5 * f, rel=1e-14)
    bad = discrete_action(a, J, BETA, bad_set=[1])
    assert bad == pytest.approx(co.widths[0] * 0.5 * bad_interval_bounds(a, 0, 1, J, BETA).g1)
    with pytest.raises(ValueError):
        discrete_action(a, J, BETA, bad_set=range(1, 60), schedule=DEFAULT_SCHEDULE)


def test_discrete_action_of_flow_is_small():
    # a path following the block flow costs only its quantization error
    s = DEFAULT_SCHEDULE.with_(gamma=0.02)
    co = _geometry(0.02)
    K = co.block_kernel(J)
    m = 0.6 * np.tanh(co.centers)
    rows = [m]
    for _ in range(4):
        m = m + s.dt * (np.tanh(BETA * K @ m) - m)
        rows.append(m)
    a = DiscretizedPath.quantize(np.array(rows), s.dt, s.Delta, co)
    flow = discrete_action(a, J, BETA)
    shifted = a.values.copy()
    shifted[2:, 3] += 3 * s.Delta
    assert flow < discrete_action(a.with_values(shifted), J, BETA)
    # the symmetric state m = 0 is a fixed point on the grid, so its action vanishes exactly
    zero = DiscretizedPath(np.zeros((5, co.n_blocks)), s.dt, 0.5, co)
    assert discrete_action(zero, J, BETA) == 0.0


def test_bridge_to_continuum_action():
    s = DEFAULT_SCHEDULE
    co = _geometry()
    x = co.centers
    t = np.arange(5) * s.dt
    a = DiscretizedPath.quantize(0.7 * np.tanh(x[None, :] - 0.8 * t[:, None]), s.dt, s.Delta, co)
    prof, _ = interpolant(a, 8)
    c = action(prof, J, BETA)
    P = c.diagnostics["up_entropy"] + c.diagnostics["down_entropy"]
    C = bridge_constant(s, P)
    da = discrete_action(a, J, BETA)
    assert abs(da - c.total) <= C["total"]
    # frozen values for this path
    assert da == pytest.approx(0.29516900, abs=1e-7)
    assert c.total == pytest.approx(0.29898410, abs=1e-6)


# ---------------------------------------------------------------------------
# density identity and mollification


def test_density_identity_random_cells():
    rng = np.random.default_rng(11)
    N = 10_000
    phi = rng.uniform(-0.999, 0.999, N)
    psi = rng.normal(0, 1, N) * 10 ** rng.uniform(-3, 1, N)
    conv = rng.uniform(-1.2, 1.2, N)
    assert np.max(density_residual(phi, psi, conv, BETA)) <= 1e-10


def test_density_identity_examples():
    assert density_residual(0.0, 1.0, 0.0, BETA) <= 1e-15
    xp, _ = optimal_fractions(1.0, 0.25, 0.25)
    assert xp == pytest.approx(-0.25 + np.sqrt(1 / 8), abs=1e-15)
    assert xp == pytest.approx(0.103553, abs=1e-6)
    phi = 0.4
    conv = np.arctanh(phi) / BETA
    assert cost_density(phi, 0.0, conv, BETA) == 0.0
    assert density_residual(phi, 0.0, conv, BETA) <= 1e-16


def test_density_equivalence_on_path_cells():
    s = DEFAULT_SCHEDULE
    co = _geometry()
    rng = np.random.default_rng(12)
    a = DiscretizedPath.quantize(rng.uniform(-0.9, 0.9, (4, co.n_blocks)), s.dt, s.Delta, co)
    for i in range(co.n_blocks):
        for j in range(1, 4):
            assert density_equivalence_check(a, i, j, J, BETA) <= 1e-12


def test_mollify_constant_and_refinement():
    g = Grid.symmetric(3.0, 0.05)
    t = np.linspace(0, 2, 41)
    from kacldp.cost import PathProfile

    const = PathProfile(g, t, np.full((t.size, g.n), 0.3))
    out, l1 = mollify(const, 0.2)
    np.testing.assert_allclose(out.values, 0.3, atol=1e-15)
    assert l1 <= 1e-12
    vals = 0.8 * np.tanh(4 * (g.x[None, :] - 0.3 * t[:, None]))
    p = PathProfile(g, t, vals)
    dists = [mollify(p, r * g.dx, t_radius=r * 0.05)[1] for r in (4, 2, 1)]
    assert dists[0] > dists[1] > dists[2] and dists[2] < 1e-12
    assert np.all(np.abs(mollify(p, 0.3)[0].values) < 1)


def test_mollify_action_on_translating_instanton():
    inst = instanton_solve(BETA, Grid.symmetric(10.0, 0.01), J)
    eps, R, T = 0.1, 0.5, 1.0
    g = Grid.symmetric(R / eps / 2 + 6, 0.02)
    p = translating_instanton_path(inst, g, eps, R / T, T, nt=81, x0=-R / eps / 2)
    base = action(p, J, BETA).total
    step = p.t[1] - p.t[0]
    diffs = [abs(action(mollify(p, r * 0.04, t_radius=r * step)[0], J, BETA).total - base) for r in (4, 2, 1)]
    assert diffs[0] > diffs[1] > diffs[2]
    assert diffs[0] / base < 0.05


# ---------------------------------------------------------------------------
# jump cap and slopes


def test_slope_bound_under_jump_cap():
    s = DEFAULT_SCHEDULE
    co = _geometry()
    sys = KacSystem(co.lattice, J, BETA)
    sigma = np.where(co.lattice.positions > 0, 1, -1).astype(np.int8)
    times = s.dt * np.arange(9)
    tr = simulate_batch(sys, co, sigma, times, 50, seed=13)
    checked = 0
    for r in range(50):
        good = tr.jumps[r] <= s.jump_cap
        raw = np.abs(np.diff(tr.blocks[r], axis=0)) / s.dt
        assert np.all(raw[good] <= s.slope_bound * s.block_length / co.widths.min() + 1e-12)
        a = DiscretizedPath.quantize(tr.blocks[r], s.dt, s.Delta, co)
        q = np.abs(a.slopes)[good]
        assert np.all(q <= s.slope_bound + s.Delta / s.dt + 1e-12)
        checked += good.sum()
    assert checked > 0
