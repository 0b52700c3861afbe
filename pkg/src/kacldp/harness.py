"""Experiment driver: Monte Carlo tube probabilities against the discrete action,
front switching frequencies, and report emission."""
from __future__ import annotations

import csv
import hashlib
import json
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy import stats

from .cost import nucleation_cost, optimal_nucleation
from .field import Grid, free_energy, instanton_solve, mean_field_fixed_point, mobility
from .glauber import simulate_batch, simulate_tilted
from .kernel import CoarseGeometry, KacSystem, LatticeGeometry, glauber_rate, make_kernel
from .tubelet import (
    DiscretizedPath, ScaleSchedule, c_star, cardinality_correction, deterministic_rates_all,
    discrete_action, move_away, optimal_fractions, tube_membership, validate_schedule,
)

__all__ = [
    "ConfigError", "ExperimentConfig", "RunRecord", "TubeSetup", "prepare_tube", "tube_slack",
    "stratified_initial", "run_tube_experiment", "run_switching_experiment", "front_position",
    "emit_report", "load_record", "nucleation_table", "independent_initial", "switching_trend",
]


class ConfigError(ValueError):
    pass


_KINDS = ("tube", "switching", "instanton", "cost")


@dataclass
class ExperimentConfig:
    """Everything an experiment needs; loads from and saves to JSON.

    ``shifts`` lists the target tubes of a tube experiment as offsets, in
    units of ``Delta``, applied to the middle block at the last time.
    """

    schedule: ScaleSchedule = field(default_factory=ScaleSchedule)
    beta: float = 2.0
    kernel: dict = field(default_factory=lambda: {"name": "poly"})
    L: float = 2.0
    R: float = 0.3
    T: float = 1.0
    replicas: int = 2000
    seed: int = 0
    kind: str = "tube"
    output_dir: str | None = None
    windows: int = 3
    shifts: list = field(default_factory=lambda: [0, 2, 4])
    tilted: bool = True
    tilt_floor: float = 0.02
    slack: float | None = None
    samples: int = 21
    switch_delta: float | None = None
    delta: float | None = None
    initial: str = "stratified"

    def __post_init__(self):
        if isinstance(self.schedule, dict):
            self.schedule = ScaleSchedule(**self.schedule)
        if self.kind not in _KINDS:
            raise ConfigError(f"kind must be one of {_KINDS}")
        if self.replicas < 1:
            raise ConfigError("replicas must be at least 1")
        if self.windows < 1:
            raise ConfigError("windows must be at least 1")
        if self.initial not in ("stratified", "independent"):
            raise ConfigError("initial must be 'stratified' or 'independent'")
        bad = validate_schedule(self.schedule)
        if bad:
            raise ConfigError("schedule violates " + ", ".join(v.name for v in bad))

    @property
    def V(self) -> float:
        return self.R / self.T

    @property
    def tube_delta(self) -> float:
        return self.schedule.delta if self.delta is None else float(self.delta)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["schedule"] = self.schedule.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        known = set(cls.__dataclass_fields__)
        extra = set(d) - known
        if extra:
            raise ConfigError(f"unknown config keys: {sorted(extra)}")
        return cls(**d)

    @classmethod
    def from_json(cls, path) -> "ExperimentConfig":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def to_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()

    def make_kernel(self):
        k = dict(self.kernel)
        return make_kernel(k.pop("name", "poly"), **k)


@dataclass
class RunRecord:
    """Per-replica outcomes, estimate rows and checks of one experiment."""

    config_hash: str = ""
    kind: str = ""
    replicas: int = 0
    outcomes: dict = field(default_factory=dict)
    estimates: list = field(default_factory=list)
    constants: dict = field(default_factory=dict)
    checks: dict = field(default_factory=dict)
    metrics: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(self.checks.values())

    def to_dict(self) -> dict:
        d = asdict(self)
        d["outcomes"] = {k: {"dtype": str(np.asarray(v).dtype), "data": np.asarray(v).tolist()}
                         for k, v in self.outcomes.items()}
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "RunRecord":
        d = dict(d)
        d["outcomes"] = {k: np.array(v["data"], dtype=v["dtype"]) for k, v in d.get("outcomes", {}).items()}
        return cls(**d)

    def digest(self) -> str:
        """Hash of everything except wall-clock metrics."""
        d = self.to_dict()
        d.pop("metrics")
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()


# ---------------------------------------------------------------------------
# setup shared by the experiments


def _instanton(beta: float, kernel, half: float):
    return instanton_solve(beta, Grid.symmetric(half, 0.01), kernel)


def _profile_at(inst, x):
    mb = inst.values[-1]
    return np.interp(x, inst.x, inst.values, left=-mb, right=mb)


def stratified_initial(coarse: CoarseGeometry, block_targets, n_replicas: int, seed: int) -> np.ndarray:
    """Spins with exactly ``round(n_i (1 + a_i)/2)`` plus signs in block ``i``, placed uniformly at random.

    Block means then lie within ``1/n_i`` of the targets.
    """
    rng = np.random.default_rng(seed)
    out = np.empty((n_replicas, coarse.lattice.n_sites), dtype=np.int8)
    plus = np.rint(coarse.sizes * (1 + np.asarray(block_targets)) / 2).astype(int)
    for r in range(n_replicas):
        for i, (s0, n) in enumerate(zip(coarse.starts, coarse.sizes)):
            block = -np.ones(n, dtype=np.int8)
            block[rng.choice(n, plus[i], replace=False)] = 1
            out[r, s0:s0 + n] = block
    return out


def independent_initial(coarse: CoarseGeometry, site_means, block_targets, delta: float, n_replicas: int,
                        seed: int, max_tries: int = 100_000) -> np.ndarray:
    """Independent spins with mean ``site_means``, redrawn until every block mean is within ``delta`` of its target."""
    rng = np.random.default_rng(seed)
    p = 0.5 * (1 + np.asarray(site_means, dtype=float))
    tgt = np.asarray(block_targets, dtype=float)
    out = np.empty((n_replicas, p.size), dtype=np.int8)
    for r in range(n_replicas):
        for _ in range(max_tries):
            sig = np.where(rng.random(p.size) < p, 1, -1).astype(np.int8)
            if np.all(np.abs(coarse.block_spins(sig) - tgt) < delta):
                out[r] = sig
                break
        else:
            raise RuntimeError(f"no admissible initial configuration in {max_tries} draws")
    return out


def _initial(cfg, coarse, m_sites, a0, delta):
    if cfg.initial == "independent":
        return independent_initial(coarse, m_sites, a0, delta, cfg.replicas, cfg.seed)
    return stratified_initial(coarse, a0, cfg.replicas, cfg.seed)


def _block_flow(coarse, kernel, beta, m0, times, substeps=50):
    """Block-level deterministic flow ``dm/dt = tanh(beta K m) - m`` (RK4)."""
    K = coarse.block_kernel(kernel)
    rhs = lambda m: np.tanh(beta * K @ m) - m
    out = [np.asarray(m0, dtype=float)]
    m = out[0].copy()
    for t0, t1 in zip(times[:-1], times[1:]):
        h = (t1 - t0) / substeps
        for _ in range(substeps):
            k1 = rhs(m)
            k2 = rhs(m + 0.5 * h * k1)
            k3 = rhs(m + 0.5 * h * k2)
            k4 = rhs(m + h * k3)
            m = m + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        out.append(m.copy())
    return np.array(out)


@dataclass(frozen=True, eq=False)
class TubeSetup:
    system: KacSystem
    coarse: CoarseGeometry
    times: np.ndarray
    targets: list
    initial: np.ndarray


def prepare_tube(cfg: ExperimentConfig) -> TubeSetup:
    """Lattice, instanton-shaped initial configurations and the target paths.

    The first target is the quantized block flow started from the quantized
    block averages of the instanton; the others shift its middle block at
    the last time by ``shifts[k] * Delta``.
    """
    s = cfg.schedule
    kernel = cfg.make_kernel()
    lat = LatticeGeometry.from_scaling(s.gamma, s.a, cfg.L)
    coarse = CoarseGeometry(lat, s.block_length)
    system = KacSystem(lat, kernel, cfg.beta)
    inst = _instanton(cfg.beta, kernel, lat.right + 3.0)
    m_sites = _profile_at(inst, lat.positions)
    a0 = DiscretizedPath.quantize(coarse.block_spins(m_sites)[None, :], s.dt, s.Delta, coarse).values[0]
    times = s.dt * np.arange(cfg.windows + 1)
    flow = _block_flow(coarse, kernel, cfg.beta, a0, times)
    base = DiscretizedPath.quantize(flow, s.dt, s.Delta, coarse).values
    base[0] = a0
    mid = coarse.n_blocks // 2
    targets = []
    for k in cfg.shifts:
        v = base.copy()
        sign = 1.0 if v[-1, mid] <= 0 else -1.0
        v[-1, mid] += sign * k * s.Delta
        targets.append(DiscretizedPath.quantize(v, s.dt, s.Delta, coarse))
    init = _initial(cfg, coarse, m_sites, a0, cfg.tube_delta)
    return TubeSetup(system, coarse, times, targets, init)


def tube_slack(cfg: ExperimentConfig, coarse: CoarseGeometry, kernel, target: DiscretizedPath | None = None) -> dict:
    """Computed slack between ``-gamma ln P`` of one tube and its discrete action.

    ``poisson`` is the per-cell band of the Poisson asymptotics, ``stirling``
    a ``gamma ln n`` term per cell, ``micro_coarse`` the micro-to-coarse
    comparison per window (Lipschitz constant 1/2), ``cardinality`` the
    count of discretized paths and ``move_away`` the surgery exponents.
    """
    s = cfg.schedule
    J = cfg.windows
    cells = coarse.n_blocks * J
    w = coarse.widths
    poisson = J * float(np.sum(w)) * s.dt * (cfg.tube_delta / s.dt) ** ((1 - s.alpha) / 2)
    stirling = J * s.gamma * float(np.sum(np.log(coarse.sizes)))
    half_length = 0.5 * coarse.lattice.length
    micro = J * cfg.beta * half_length * s.dt * (c_star(s, kernel) + cfg.tube_delta) / s.eta(1)
    card = cardinality_correction(s, cells)
    mv = 0.0
    if target is not None:
        mv = s.gamma * float(move_away(target, s.delta_prime, cfg.beta, kernel, s.alpha).exponents.sum())
    total = poisson + stirling + micro + card + mv
    if cfg.slack is not None:
        total = float(cfg.slack)
    return {"poisson": poisson, "stirling": stirling, "micro_coarse": micro, "cardinality": card,
            "move_away": mv, "total": total}


def _tilt_rates(target: DiscretizedPath, kernel, beta: float, floor: float) -> np.ndarray:
    """Per-spin proposal rates: Glauber rates in the target's block field, scaled by the
    optimal Poisson tilt ``x / c`` so that block drifts follow the target."""
    cp, cm = deterministic_rates_all(target, kernel, beta)
    xp, xm = optimal_fractions(target.slopes, cp, cm)
    g = target.values[:-1] @ target.coarse.block_kernel(kernel).T
    with np.errstate(divide="ignore", invalid="ignore"):
        tp = np.where(cp > 0, xp / cp, 1.0)
        tm = np.where(cm > 0, xm / cm, 1.0)
    q = np.stack([glauber_rate(1, g, beta) * tp, glauber_rate(-1, g, beta) * tm], axis=-1)
    return np.maximum(q, floor)


def _cp_upper(k: int, n: int, level: float = 0.95) -> float:
    return float(stats.binomtest(k, n).proportion_ci(level, method="exact").high)


def _cost(p: float, gamma: float) -> float:
    return float(-gamma * np.log(p)) if p > 0 else float("inf")


# ---------------------------------------------------------------------------
# experiments


def run_tube_experiment(cfg: ExperimentConfig, setup: TubeSetup | None = None) -> RunRecord:
    """Estimate ``P({a}_delta)`` for each target by direct and (optionally) tilted sampling."""
    t0 = time.perf_counter()
    s = cfg.schedule
    setup = setup or prepare_tube(cfg)
    kernel = setup.system.kernel
    delta = cfg.tube_delta
    R = cfg.replicas
    direct = simulate_batch(setup.system, setup.coarse, setup.initial, setup.times, R, cfg.seed)
    if not np.all(tube_membership(direct.blocks[:, :1], setup.targets[0].with_values(setup.targets[0].values[:1]), delta)):
        raise RuntimeError("initial configurations are not in the tube around the starting profile")
    # lattice-wide counts against the summed per-block cap
    bad_windows = (direct.jumps > s.jump_cap * setup.coarse.n_blocks).sum(axis=1)
    rec = RunRecord(cfg.digest(), "tube", R)
    rec.outcomes["bad_windows"] = bad_windows
    rec.constants = {"gamma": s.gamma, "Delta": s.Delta, "delta": delta, "dt": s.dt, "jump_cap": s.jump_cap,
                     "bad_budget": s.bad_budget, "n_blocks": int(setup.coarse.n_blocks),
                     "n_sites": int(setup.coarse.lattice.n_sites)}
    for k, a in enumerate(setup.targets):
        hit = tube_membership(direct.blocks, a, delta)
        rec.outcomes[f"direct_{k}"] = hit
        nh = int(hit.sum())
        p = nh / R
        row = {"target": k, "shift": cfg.shifts[k], "action": discrete_action(a, kernel, cfg.beta),
               "hits": nh, "misses": R - nh, "p_direct": p, "se_direct": float(np.sqrt(p * (1 - p) / R)),
               "cost_direct": _cost(p, s.gamma), "bound": "point"}
        if nh == 0:
            row["bound"] = "lower"
            row["cost_direct"] = _cost(_cp_upper(0, R), s.gamma)
        if cfg.tilted:
            q = _tilt_rates(a, kernel, cfg.beta, cfg.tilt_floor)
            tr, llr = simulate_tilted(setup.system, setup.coarse, setup.initial, setup.times, q, R,
                                      cfg.seed + 7919 * (k + 1))
            th = tube_membership(tr, a, delta)
            wts = np.where(th, np.exp(llr), 0.0)
            rec.outcomes[f"tilted_{k}"] = wts
            pt = float(wts.mean())
            row.update(p_tilted=pt, se_tilted=float(wts.std(ddof=1) / np.sqrt(R)) if R > 1 else float("nan"),
                       cost_tilted=_cost(pt, s.gamma), tilted_hits=int(th.sum()))
        sl = tube_slack(cfg, setup.coarse, kernel, a)
        row["slack"] = sl["total"]
        if cfg.tilted and row["tilted_hits"] > 0:
            est, p_, se_ = row["cost_tilted"], row["p_tilted"], row["se_tilted"]
        else:
            est, p_, se_ = row["cost_direct"], row["p_direct"], row["se_direct"]
        row["cost"] = est
        # delta method: sd of -gamma ln p
        row["cost_se"] = float(s.gamma * se_ / p_) if p_ > 0 else float("inf")
        if row["bound"] == "lower" and not cfg.tilted:
            row["in_band"] = bool(est <= row["action"] + sl["total"])
        else:
            row["in_band"] = bool(abs(est - row["action"]) <= sl["total"])
        rec.estimates.append(row)
    rec.constants["slack"] = tube_slack(cfg, setup.coarse, kernel)
    rec.checks["in_band"] = all(r["in_band"] for r in rec.estimates)
    rec.checks["ordered"] = _consistently_ordered([r["action"] for r in rec.estimates],
                                                  [r["cost"] for r in rec.estimates],
                                                  [r["cost_se"] for r in rec.estimates])
    rec.checks["counts"] = all(r["hits"] + r["misses"] == R for r in rec.estimates)
    rec.metrics["wall_seconds"] = time.perf_counter() - t0
    return rec


def _consistently_ordered(actions, costs, ses=None, z: float = 2.0) -> bool:
    """Costs sorted by action never decrease by more than ``z`` combined standard errors.

    Equal actions impose nothing.
    """
    order = np.argsort(actions, kind="stable")
    a = np.asarray(actions, dtype=float)[order]
    c = np.asarray(costs, dtype=float)[order]
    e = np.zeros_like(c) if ses is None else np.nan_to_num(np.asarray(ses, dtype=float)[order], posinf=0.0)
    return bool(all(c[i] - c[i + 1] <= z * np.hypot(e[i], e[i + 1])
                    for i in range(len(c) - 1) if a[i + 1] > a[i]))


def front_position(blocks, coarse: CoarseGeometry, m_beta: float):
    """Interface location from the magnetization mass, ``mid - int m / (2 m_beta)``, for a -/+ front."""
    e = coarse.edges
    mass = np.asarray(blocks) @ coarse.widths
    return 0.5 * (e[0] + e[-1]) - mass / (2 * m_beta)


def run_switching_experiment(cfg: ExperimentConfig) -> RunRecord:
    """Conditional frequency of the free-energy event given that the front travelled ``eps^-1 R``.

    Replicas start from the instanton centred at ``-eps^-1 R / 2`` and run for
    ``eps^-2 T``.  ``C`` holds when the front ends at or beyond ``+eps^-1 R / 2``;
    ``A`` when ``sup_t F(m(t)) > (2n + 1) F(mbar) - delta`` for the optimal ``n``.
    """
    t0 = time.perf_counter()
    s = cfg.schedule
    kernel = cfg.make_kernel()
    lat = LatticeGeometry.from_scaling(s.gamma, s.a, cfg.L)
    coarse = CoarseGeometry(lat, s.block_length)
    system = KacSystem(lat, kernel, cfg.beta)
    inst = _instanton(cfg.beta, kernel, lat.right + 3.0)
    Fbar = free_energy(inst, inst.grid, kernel, cfg.beta).total
    mu = mobility(inst)
    mb = mean_field_fixed_point(cfg.beta)
    x0 = -cfg.R / (2 * s.eps)
    m_sites = _profile_at(inst, lat.positions - x0)
    init = _initial(cfg, coarse, m_sites, coarse.block_spins(m_sites), s.delta)
    horizon = cfg.T / s.eps**2
    times = np.linspace(0.0, horizon, cfg.samples)
    tr = simulate_batch(system, coarse, init, times, cfg.replicas, cfg.seed)
    grid = Grid(lat.left, lat.right, lat.n_sites)
    site_vals = tr.blocks[..., coarse.block_of_site]
    F = np.array([[free_energy(v, grid, kernel, cfg.beta).total for v in rep] for rep in site_vals])
    supF = F.max(axis=1)
    n_opt = optimal_nucleation(cfg.R, cfg.T, Fbar, mu)[0]
    d = s.delta if cfg.switch_delta is None else cfg.switch_delta
    A = supF > (2 * n_opt + 1) * Fbar - d
    front = front_position(tr.blocks[:, -1], coarse, mb)
    C = front >= x0 + cfg.R / s.eps
    nC, nAC = int(C.sum()), int((A & C).sum())
    rec = RunRecord(cfg.digest(), "switching", cfg.replicas)
    rec.outcomes.update(A=A, C=C, sup_free_energy=supF, front=front)
    rec.constants = {"Fbar": Fbar, "mu": mu, "n_opt": int(n_opt), "threshold": (2 * n_opt + 1) * Fbar - d,
                     "x0": x0, "horizon": horizon, "V2T": cfg.V**2 * cfg.T,
                     "w": [nucleation_cost(n, cfg.R, cfg.T, Fbar, mu) for n in range(4)]}
    row = {"n_C": nC, "n_AC": nAC, "n_A": int(A.sum()), "p_C": nC / cfg.replicas, "p_AC": nAC / cfg.replicas}
    if nC:
        ci = stats.binomtest(nAC, nC).proportion_ci(0.95, method="exact")
        row.update(p_A_given_C=nAC / nC, ci_low=float(ci.low), ci_high=float(ci.high), inconclusive=False)
    else:
        row.update(p_A_given_C=float("nan"), ci_low=0.0, ci_high=1.0, inconclusive=True)
    rec.estimates.append(row)
    rec.checks["conclusive"] = nC > 0
    rec.checks["counting_identity"] = (not nC) or abs(row["p_A_given_C"] * row["p_C"] - row["p_AC"]) <= 1e-12
    rec.metrics["wall_seconds"] = time.perf_counter() - t0
    return rec


def switching_trend(cfg: ExperimentConfig, gammas) -> list[dict]:
    """Conditional frequencies along decreasing ``gammas``; each row flags whether it is
    below its predecessor by more than the union of their confidence intervals."""
    rows = []
    for g in sorted(gammas, reverse=True):
        c = ExperimentConfig.from_dict({**cfg.to_dict(), "schedule": cfg.schedule.with_(gamma=g).to_dict()})
        row = {"gamma": g, **run_switching_experiment(c).estimates[0]}
        row["decrease"] = bool(rows and not row["inconclusive"] and not rows[-1]["inconclusive"]
                               and row["ci_high"] < rows[-1]["ci_low"])
        rows.append(row)
    return rows


# ---------------------------------------------------------------------------
# reports


_TUBE_COLUMNS = ["target", "shift", "action", "hits", "misses", "p_direct", "se_direct", "cost_direct", "bound",
                 "p_tilted", "se_tilted", "cost_tilted", "tilted_hits", "cost", "cost_se", "slack", "in_band"]


def emit_report(record: RunRecord, fmt: str = "csv", out_dir=".", stem: str | None = None) -> list[Path]:
    """Write the estimate table (CSV) or the full record (JSON); returns the paths written.

    CSV output also writes ``<stem>_scatter.csv`` (action against cost) for
    tube runs and ``<stem>_w.csv`` when nucleation costs are present.
    """
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise OSError(f"cannot create report directory {out}: {e}") from e
    stem = stem or (record.kind or "record")
    paths = []
    try:
        if fmt == "json":
            p = out / f"{stem}.json"
            with open(p, "w") as fh:
                json.dump(record.to_dict(), fh, indent=2, sort_keys=True)
            paths.append(p)
        elif fmt == "csv":
            cols = list(_TUBE_COLUMNS) if record.kind in ("tube", "") else []
            for row in record.estimates:
                cols += [c for c in row if c not in cols]
            p = out / f"{stem}.csv"
            with open(p, "w", newline="") as fh:
                w = csv.DictWriter(fh, fieldnames=cols, restval="")
                w.writeheader()
                w.writerows(record.estimates)
            paths.append(p)
            if record.kind == "tube" and record.estimates:
                p = out / f"{stem}_scatter.csv"
                with open(p, "w", newline="") as fh:
                    w = csv.writer(fh)
                    w.writerow(["action", "cost", "slack"])
                    w.writerows([[r["action"], r["cost"], r["slack"]] for r in record.estimates])
                paths.append(p)
            if "w" in record.constants:
                p = out / f"{stem}_w.csv"
                with open(p, "w", newline="") as fh:
                    w = csv.writer(fh)
                    w.writerow(["n", "w_n"])
                    w.writerows(enumerate(record.constants["w"]))
                paths.append(p)
        else:
            raise ValueError("format must be 'csv' or 'json'")
    except OSError as e:
        raise OSError(f"writing report under {out}: {e}") from e
    return paths


def load_record(path) -> RunRecord:
    with open(path) as fh:
        return RunRecord.from_dict(json.load(fh))


def nucleation_table(R: float, T: float, Fbar: float, mu: float, n_max: int = 5) -> list[tuple[int, float]]:
    return [(n, nucleation_cost(n, R, T, Fbar, mu)) for n in range(n_max + 1)]
